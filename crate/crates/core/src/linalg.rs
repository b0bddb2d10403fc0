//! Small dense helpers shared by the state, kernel and certificate code.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Single-qubit Pauli matrices indexed 0..4 as (I, X, Y, Z), row-major.
pub const PAULI: [[[C64; 2]; 2]; 4] = [
    [[ONE, ZERO], [ZERO, ONE]],
    [[ZERO, ONE], [ONE, ZERO]],
    [[ZERO, C64::new(0.0, -1.0)], [I, ZERO]],
    [[ONE, ZERO], [ZERO, C64::new(-1.0, 0.0)]],
];

pub fn pauli_matrix(q: u8) -> CMatrix {
    let p = &PAULI[q as usize];
    CMatrix::from_fn(2, 2, |i, j| p[i][j])
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    CMatrix::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

pub fn trace(a: &CMatrix) -> C64 {
    a.diagonal().iter().sum()
}

/// Largest entrywise deviation from Hermitian symmetry.
pub fn hermitian_defect(a: &CMatrix) -> f64 {
    let d = a.nrows();
    let mut worst = 0.0f64;
    for j in 0..d {
        for i in 0..=j {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Replace `a` by `(a + a†)/2`.
pub fn symmetrize(a: &mut CMatrix) {
    let d = a.nrows();
    for j in 0..d {
        a[(j, j)].im = 0.0;
        for i in 0..j {
            let v = (a[(i, j)] + a[(j, i)].conj()) * 0.5;
            a[(i, j)] = v;
            a[(j, i)] = v.conj();
        }
    }
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues in ascending order.
pub fn hermitian_eigh(a: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vecs = CMatrix::from_fn(a.nrows(), order.len(), |i, j| eig.eigenvectors[(i, order[j])]);
    (vals, vecs)
}

pub fn hermitian_eigenvalues(a: &CMatrix) -> Vec<f64> {
    let mut v: Vec<f64> = a.clone().symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Eigenvalues at or below `d * eps * max|lambda|` are rounding noise for a
/// PSD matrix; zero them so their square roots do not leak into results.
pub fn clamp_psd_eigenvalues(vals: &mut [f64]) {
    let top = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cut = vals.len() as f64 * f64::EPSILON * top;
    vals.iter_mut().for_each(|v| {
        if *v <= cut {
            *v = 0.0;
        }
    });
}

/// Principal square root of a Hermitian PSD matrix; negative and
/// rounding-level eigenvalues are clamped to zero.
pub fn psd_sqrt(a: &CMatrix) -> CMatrix {
    let (mut vals, vecs) = hermitian_eigh(a);
    clamp_psd_eigenvalues(&mut vals);
    let d = a.nrows();
    let mut scaled = vecs.clone();
    for (j, &v) in vals.iter().enumerate() {
        let s = v.sqrt();
        for i in 0..d {
            scaled[(i, j)] *= s;
        }
    }
    scaled * vecs.adjoint()
}

/// Real part of the Frobenius inner product `tr(a† b)`.
pub fn re_inner(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

pub fn norm_sqr(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}
