//! Target states: dense density matrices, product states, depolarizing noise,
//! fidelity and the real vectorization of Hermitian matrices.
//!
//! Qubit 0 is the leftmost (most significant) tensor factor, so basis index
//! `i` has qubit `j` in bit position `n - 1 - j`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::SQRT_2;

use crate::error::{domain, Error, Result};
use crate::linalg::{self, CMatrix, C64, PAULI};
use crate::povm::PauliString;

const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-10;
const PURITY_TOL: f64 = 1e-10;

/// Default largest qubit count for which dense `d x d` matrices are built.
pub const DEFAULT_DENSE_CAP: usize = 14;

/// A `d x d` Hermitian, unit-trace matrix with `d = 2^n`.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    n: usize,
    mat: CMatrix,
}

impl DensityMatrix {
    /// Checks shape, Hermitian symmetry and unit trace. Positivity is not
    /// checked here; see [`DensityMatrix::min_eigenvalue`].
    pub fn new(mat: CMatrix) -> Result<Self> {
        let n = qubits_for_dim(mat.nrows())?;
        if mat.ncols() != mat.nrows() {
            return domain(format!("matrix is not square: {}x{}", mat.nrows(), mat.ncols()));
        }
        let defect = linalg::hermitian_defect(&mat);
        if defect > HERMITIAN_TOL {
            return domain(format!("matrix is not Hermitian (defect {defect:e})"));
        }
        let tr = linalg::trace(&mat);
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return domain(format!("trace is {tr}, expected 1"));
        }
        Ok(Self { n, mat })
    }

    /// `|psi><psi| / <psi|psi>`.
    pub fn from_pure(psi: &[C64]) -> Result<Self> {
        let n = qubits_for_dim(psi.len())?;
        let nrm = linalg::norm_sqr(psi);
        if nrm == 0.0 || !nrm.is_finite() {
            return domain("state vector has zero or non-finite norm");
        }
        let mut mat = CMatrix::from_fn(psi.len(), psi.len(), |i, j| psi[i] * psi[j].conj() / nrm);
        linalg::symmetrize(&mut mat);
        Ok(Self { n, mat })
    }

    /// `U U† / ||U||_F^2` for a `d x r` factor.
    pub fn from_factor(u: &CMatrix) -> Result<Self> {
        let n = qubits_for_dim(u.nrows())?;
        let nrm = u.norm_squared();
        if nrm == 0.0 || !nrm.is_finite() {
            return domain("factor has zero or non-finite norm");
        }
        let mut mat = u * u.adjoint() / C64::new(nrm, 0.0);
        linalg::symmetrize(&mut mat);
        Ok(Self { n, mat })
    }

    pub fn maximally_mixed(n: usize) -> Self {
        let d = 1usize << n;
        Self {
            n,
            mat: CMatrix::from_diagonal_element(d, d, C64::new(1.0 / d as f64, 0.0)),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    pub fn trace(&self) -> f64 {
        linalg::trace(&self.mat).re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        linalg::hermitian_eigenvalues(&self.mat)[0]
    }

    /// `tr(rho^2)`.
    pub fn purity(&self) -> f64 {
        // tr(rho^2) = ||rho||_F^2 for Hermitian rho.
        self.mat.norm_squared()
    }

    pub fn is_pure(&self) -> bool {
        (self.purity() - 1.0).abs() <= PURITY_TOL
    }

    /// `tr(W rho)` for a Pauli string, by dense contraction.
    pub fn pauli_expectation(&self, s: &PauliString) -> Result<f64> {
        if s.n() != self.n {
            return domain(format!("string has {} qubits, state has {}", s.n(), self.n));
        }
        let d = self.dim();
        let (xm, zm, ny) = s.masks();
        let phase = C64::new(0.0, 1.0).powu(ny);
        // W|k> = phase * (-1)^{popcount(k & z)} |k ^ x>, so tr(W rho) = phase * sum_k sign(k) rho[k, k ^ x].
        let mut acc = C64::new(0.0, 0.0);
        for k in 0..d {
            let sign = if ((k as u64) & zm).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            acc += self.mat[(k, k ^ xm as usize)] * sign;
        }
        Ok((acc * phase).re)
    }
}

/// `n = log2(d)`, or a domain error when `d` is not a power of two.
pub fn qubits_for_dim(d: usize) -> Result<usize> {
    if d == 0 || !d.is_power_of_two() {
        return domain(format!("dimension {d} is not a power of two"));
    }
    Ok(d.trailing_zeros() as usize)
}

/// Tensor product of single-qubit density matrices, never expanded unless
/// explicitly requested.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductState {
    factors: Vec<DensityMatrix>,
}

impl ProductState {
    pub fn new(factors: Vec<DensityMatrix>) -> Result<Self> {
        if factors.is_empty() {
            return domain("product state needs at least one factor");
        }
        if let Some(f) = factors.iter().find(|f| f.dim() != 2) {
            return domain(format!("product factor has dimension {}, expected 2", f.dim()));
        }
        Ok(Self { factors })
    }

    pub fn n(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[DensityMatrix] {
        &self.factors
    }

    /// Per-qubit Pauli expectations `tr(sigma_q rho_j)` for `q = 0..4`.
    pub fn local_expectations(&self, qubit: usize) -> [f64; 4] {
        let m = self.factors[qubit].matrix();
        let mut out = [0.0; 4];
        for (q, p) in PAULI.iter().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for a in 0..2 {
                for b in 0..2 {
                    acc += p[a][b] * m[(b, a)];
                }
            }
            out[q] = acc.re;
        }
        out
    }

    /// `tr(W rho) = prod_j tr(sigma_{q_j} rho_j)`.
    pub fn pauli_expectation(&self, s: &PauliString) -> Result<f64> {
        if s.n() != self.n() {
            return domain(format!("string has {} qubits, state has {}", s.n(), self.n()));
        }
        Ok(s.digits()
            .iter()
            .enumerate()
            .map(|(j, &q)| self.local_expectations(j)[q as usize])
            .product())
    }

    pub fn to_dense(&self, max_qubits: usize) -> Result<DensityMatrix> {
        check_dense_capacity(self.n(), max_qubits)?;
        let mut acc = self.factors[0].matrix().clone();
        for f in &self.factors[1..] {
            acc = linalg::kron(&acc, f.matrix());
        }
        linalg::symmetrize(&mut acc);
        DensityMatrix::new(acc)
    }

    /// Apply the (unexpanded) product operator to each column of `u` in place.
    pub fn apply_to(&self, u: &mut CMatrix) {
        let n = self.n();
        let d = u.nrows();
        for (j, f) in self.factors.iter().enumerate() {
            let m = f.matrix();
            let stride = 1usize << (n - 1 - j);
            for mut col in u.column_iter_mut() {
                let col = col.as_mut_slice();
                for block in col.chunks_mut(2 * stride) {
                    let (lo, hi) = block.split_at_mut(stride);
                    for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                        let (x0, x1) = (*a, *b);
                        *a = m[(0, 0)] * x0 + m[(0, 1)] * x1;
                        *b = m[(1, 0)] * x0 + m[(1, 1)] * x1;
                    }
                }
            }
            debug_assert_eq!(d % (2 * stride), 0);
        }
    }
}

pub fn check_dense_capacity(n: usize, max_qubits: usize) -> Result<()> {
    if n > max_qubits {
        return Err(Error::Capacity {
            what: format!("dense {n}-qubit state ({0}x{0} entries)", 1u128 << n),
            limit: format!("{max_qubits} qubits"),
        });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    W,
    Ghz,
    RandomProduct,
    RandomPure,
}

impl std::str::FromStr for StateKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "w" => Ok(Self::W),
            "ghz" => Ok(Self::Ghz),
            "random_product" | "random-product" => Ok(Self::RandomProduct),
            "random_pure" | "random-pure" => Ok(Self::RandomPure),
            other => domain(format!("unknown state kind '{other}'")),
        }
    }
}

impl std::fmt::Display for StateKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::W => "w",
            Self::Ghz => "ghz",
            Self::RandomProduct => "random_product",
            Self::RandomPure => "random_pure",
        })
    }
}

/// Either an explicit density matrix or an unexpanded product state.
#[derive(Clone, Debug, PartialEq)]
pub enum State {
    Dense(DensityMatrix),
    Product(ProductState),
}

impl State {
    pub fn n(&self) -> usize {
        match self {
            State::Dense(s) => s.n(),
            State::Product(p) => p.n(),
        }
    }
}

/// Build a named target state.
///
/// `random_product` always returns a [`ProductState`]; the other kinds are
/// dense and fail with a capacity error above `max_dense_qubits`.
pub fn make_state(kind: StateKind, n: usize, seed: u64, max_dense_qubits: usize) -> Result<State> {
    if n == 0 {
        return domain("qubit count must be at least 1");
    }
    if n >= 64 {
        return Err(Error::Capacity {
            what: format!("{n}-qubit register"),
            limit: "63 qubits".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if kind == StateKind::RandomProduct {
        let factors = (0..n).map(|_| random_qubit_factor(&mut rng)).collect();
        return Ok(State::Product(ProductState::new(factors)?));
    }
    check_dense_capacity(n, max_dense_qubits)?;
    let d = 1usize << n;
    let mut psi = vec![C64::new(0.0, 0.0); d];
    match kind {
        StateKind::W => {
            for j in 0..n {
                psi[1 << (n - 1 - j)] = C64::new(1.0, 0.0);
            }
        }
        StateKind::Ghz => {
            psi[0] = C64::new(1.0, 0.0);
            psi[d - 1] = C64::new(1.0, 0.0);
        }
        StateKind::RandomPure => {
            for z in psi.iter_mut() {
                *z = complex_gaussian(&mut rng);
            }
        }
        StateKind::RandomProduct => unreachable!(),
    }
    Ok(State::Dense(DensityMatrix::from_pure(&psi)?))
}

/// Standard complex Gaussian: real and imaginary parts i.i.d. N(0, 1/2).
pub(crate) fn complex_gaussian<R: Rng>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Haar-random pure qubit mixed with `I/2` at a weight drawn from `[0, 0.2]`.
fn random_qubit_factor<R: Rng>(rng: &mut R) -> DensityMatrix {
    let psi = [complex_gaussian(rng), complex_gaussian(rng)];
    let pure = DensityMatrix::from_pure(&psi).expect("nonzero gaussian vector");
    let w: f64 = rng.random_range(0.0..=0.2);
    let mut m = pure.into_matrix() * C64::new(1.0 - w, 0.0);
    m[(0, 0)] += w / 2.0;
    m[(1, 1)] += w / 2.0;
    linalg::symmetrize(&mut m);
    DensityMatrix { n: 1, mat: m }
}

/// `(1 - p) rho + p I / d`.
pub fn depolarize(state: &DensityMatrix, p: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&p) {
        return domain(format!("depolarizing level {p} outside [0, 1]"));
    }
    let d = state.dim();
    let mut m = state.matrix() * C64::new(1.0 - p, 0.0);
    for i in 0..d {
        m[(i, i)] += p / d as f64;
    }
    Ok(DensityMatrix { n: state.n, mat: m })
}

/// Fidelity `(tr sqrt(sqrt(rho) sigma sqrt(rho)))^2`, using `tr(rho sigma)`
/// when either argument is pure.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    check_same_dim(rho, sigma)?;
    if rho.is_pure() || sigma.is_pure() {
        return Ok(overlap(rho, sigma).clamp(0.0, 1.0));
    }
    fidelity_uhlmann(rho, sigma)
}

/// The general fidelity formula, evaluated through Hermitian square roots
/// with eigenvalues clamped at zero.
pub fn fidelity_uhlmann(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    check_same_dim(rho, sigma)?;
    let s = linalg::psd_sqrt(rho.matrix());
    let mut inner = &s * sigma.matrix() * &s;
    linalg::symmetrize(&mut inner);
    let mut ev = linalg::hermitian_eigenvalues(&inner);
    linalg::clamp_psd_eigenvalues(&mut ev);
    let tr: f64 = ev.iter().map(|v| v.sqrt()).sum();
    Ok((tr * tr).clamp(0.0, 1.0))
}

/// `tr(rho sigma)`.
pub fn overlap(rho: &DensityMatrix, sigma: &DensityMatrix) -> f64 {
    // tr(rho sigma) = sum_ij rho_ij sigma_ji = sum_ij rho_ij conj(sigma_ij).
    rho.matrix()
        .iter()
        .zip(sigma.matrix().iter())
        .map(|(a, b)| a.re * b.re + a.im * b.im)
        .sum()
}

fn check_same_dim(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<()> {
    if rho.dim() != sigma.dim() {
        return domain(format!("dimension mismatch: {} vs {}", rho.dim(), sigma.dim()));
    }
    Ok(())
}

/// Fidelity between the normalized factor state `U U† / ||U||^2` and a
/// product state, valid when the factor has a single column (pure state).
/// Never forms a `d x d` matrix.
pub fn fidelity_pure_factor_product(u: &CMatrix, target: &ProductState) -> Result<f64> {
    if u.ncols() != 1 {
        return domain("factor must have rank 1 for the pure-state fidelity formula");
    }
    if u.nrows() != 1 << target.n() {
        return domain("factor and product state dimensions differ");
    }
    let mut v = u.clone();
    target.apply_to(&mut v);
    let num = linalg::re_inner(u.as_slice(), v.as_slice());
    Ok((num / u.norm_squared()).clamp(0.0, 1.0))
}

/// Real vectorization of a Hermitian matrix (length `d^2`).
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianVector {
    dim: usize,
    entries: Vec<f64>,
}

impl HermitianVector {
    pub fn from_entries(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != dim * dim {
            return domain(format!("expected {} entries, got {}", dim * dim, entries.len()));
        }
        Ok(Self { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn dot(&self, other: &HermitianVector) -> f64 {
        self.entries.iter().zip(&other.entries).map(|(a, b)| a * b).sum()
    }
}

/// Diagonal entries first, then for each upper-triangle entry in row-major
/// order `sqrt(2) Re` followed by `sqrt(2) Im`.
pub fn hvec(a: &CMatrix) -> Result<HermitianVector> {
    let d = a.nrows();
    if a.ncols() != d {
        return domain("hvec needs a square matrix");
    }
    let defect = linalg::hermitian_defect(a);
    if defect > 1e-10 {
        return domain(format!("hvec input is not Hermitian (defect {defect:e})"));
    }
    let mut entries = Vec::with_capacity(d * d);
    entries.extend((0..d).map(|i| a[(i, i)].re));
    for i in 0..d {
        for j in i + 1..d {
            let z = a[(i, j)];
            entries.push(SQRT_2 * z.re);
            entries.push(SQRT_2 * z.im);
        }
    }
    Ok(HermitianVector { dim: d, entries })
}

/// Inverse of [`hvec`].
pub fn hmat(x: &HermitianVector) -> CMatrix {
    let d = x.dim;
    let mut a = CMatrix::zeros(d, d);
    for i in 0..d {
        a[(i, i)] = C64::new(x.entries[i], 0.0);
    }
    let mut k = d;
    for i in 0..d {
        for j in i + 1..d {
            let z = C64::new(x.entries[k], x.entries[k + 1]) / SQRT_2;
            a[(i, j)] = z;
            a[(j, i)] = z.conj();
            k += 2;
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dense(s: State) -> DensityMatrix {
        match s {
            State::Dense(d) => d,
            State::Product(_) => panic!("expected dense"),
        }
    }

    fn random_hermitian(d: usize, rng: &mut ChaCha8Rng) -> CMatrix {
        let g = CMatrix::from_fn(d, d, |_, _| complex_gaussian(rng));
        (&g + g.adjoint()) * C64::new(0.5, 0.0)
    }

    #[test]
    fn w_one_qubit_is_excited() {
        let rho = dense(make_state(StateKind::W, 1, 0, 14).unwrap());
        assert_eq!(rho.matrix()[(0, 0)], C64::new(0.0, 0.0));
        assert_eq!(rho.matrix()[(1, 1)], C64::new(1.0, 0.0));
    }

    #[test]
    fn ghz_two_qubits_corners() {
        let rho = dense(make_state(StateKind::Ghz, 2, 0, 14).unwrap());
        let m = rho.matrix();
        for (i, j) in [(0, 0), (0, 3), (3, 0), (3, 3)] {
            assert_abs_diff_eq!(m[(i, j)].re, 0.5, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(m[(1, 1)].re, 0.0);
        assert!(rho.is_pure());
    }

    #[test]
    fn random_product_is_deterministic() {
        let a = make_state(StateKind::RandomProduct, 3, 7, 14).unwrap();
        let b = make_state(StateKind::RandomProduct, 3, 7, 14).unwrap();
        assert_eq!(a, b);
        let c = make_state(StateKind::RandomProduct, 3, 8, 14).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn constructed_states_are_valid() {
        for kind in [StateKind::W, StateKind::Ghz, StateKind::RandomPure] {
            for n in 1..=4 {
                let rho = dense(make_state(kind, n, 3, 14).unwrap());
                assert!(linalg::hermitian_defect(rho.matrix()) <= 1e-12);
                assert!((rho.trace() - 1.0).abs() <= 1e-10);
                assert!(rho.min_eigenvalue() >= -1e-10);
            }
        }
        let State::Product(p) = make_state(StateKind::RandomProduct, 4, 1, 14).unwrap() else {
            panic!()
        };
        for f in p.factors() {
            assert!((f.trace() - 1.0).abs() <= 1e-10);
            assert!(f.min_eigenvalue() >= -1e-10);
            // mixing weight at most 0.2 keeps the Bloch length at least 0.8
            assert!(f.purity() >= 0.5 * (1.0 + 0.8 * 0.8) - 1e-12);
        }
    }

    #[test]
    fn dense_capacity_error() {
        let err = make_state(StateKind::W, 5, 0, 4).unwrap_err();
        assert!(matches!(err, Error::Capacity { .. }), "{err}");
        assert!(make_state(StateKind::RandomProduct, 40, 0, 4).is_ok());
    }

    #[test]
    fn depolarize_cases() {
        let rho = dense(make_state(StateKind::Ghz, 2, 0, 14).unwrap());
        assert_eq!(depolarize(&rho, 0.0).unwrap(), rho);
        let full = depolarize(&rho, 1.0).unwrap();
        assert!((full.matrix() - DensityMatrix::maximally_mixed(2).matrix()).norm() < 1e-15);
        let zero = DensityMatrix::from_pure(&[C64::new(1.0, 0.0), C64::new(0.0, 0.0)]).unwrap();
        let z = depolarize(&zero, 0.1).unwrap();
        assert_abs_diff_eq!(z.matrix()[(0, 0)].re, 0.95, epsilon = 1e-15);
        assert_abs_diff_eq!(z.matrix()[(1, 1)].re, 0.05, epsilon = 1e-15);
        assert!(depolarize(&rho, 1.5).is_err());
        assert!(depolarize(&rho, -0.1).is_err());
    }

    #[test]
    fn fidelity_cases() {
        let w = dense(make_state(StateKind::W, 2, 0, 14).unwrap());
        assert_abs_diff_eq!(fidelity(&w, &w).unwrap(), 1.0, epsilon = 1e-12);
        let noisy = depolarize(&w, 0.1).unwrap();
        assert_abs_diff_eq!(fidelity(&w, &noisy).unwrap(), 0.925, epsilon = 1e-12);
        let zero = DensityMatrix::from_pure(&[C64::new(1.0, 0.0), C64::new(0.0, 0.0)]).unwrap();
        let one = DensityMatrix::from_pure(&[C64::new(0.0, 0.0), C64::new(1.0, 0.0)]).unwrap();
        assert_abs_diff_eq!(fidelity(&zero, &one).unwrap(), 0.0, epsilon = 1e-15);
        assert!(fidelity(&zero, &w).is_err());
        // mixed self-fidelity goes through the square-root route
        assert_abs_diff_eq!(fidelity(&noisy, &noisy).unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn fidelity_formulas_agree_on_rank_one() {
        for n in 1..=4 {
            for seed in 0..5 {
                let pure = dense(make_state(StateKind::RandomPure, n, seed, 14).unwrap());
                let other = dense(make_state(StateKind::RandomPure, n, seed + 100, 14).unwrap());
                let mixed = depolarize(&other, 0.3).unwrap();
                let f_simple = overlap(&pure, &mixed);
                let f_general = fidelity_uhlmann(&pure, &mixed).unwrap();
                assert_abs_diff_eq!(f_simple, f_general, epsilon = 1e-9);
                let f_rev = fidelity_uhlmann(&mixed, &pure).unwrap();
                assert_abs_diff_eq!(f_general, f_rev, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn pure_factor_product_fidelity_matches_dense() {
        let State::Product(p) = make_state(StateKind::RandomProduct, 3, 5, 14).unwrap() else {
            panic!()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = CMatrix::from_fn(8, 1, |_, _| complex_gaussian(&mut rng));
        let f = fidelity_pure_factor_product(&u, &p).unwrap();
        let rho = DensityMatrix::from_factor(&u).unwrap();
        let expect = fidelity(&rho, &p.to_dense(14).unwrap()).unwrap();
        assert_abs_diff_eq!(f, expect, epsilon = 1e-12);
    }

    #[test]
    fn hvec_two_by_two_layout() {
        let (a, b, c, s) = (0.3, 0.7, 0.2, -0.1);
        let m = CMatrix::from_row_slice(
            2,
            2,
            &[C64::new(a, 0.0), C64::new(c, s), C64::new(c, -s), C64::new(b, 0.0)],
        );
        let v = hvec(&m).unwrap();
        assert_eq!(v.entries(), &[a, b, SQRT_2 * c, SQRT_2 * s]);
        assert_eq!(hmat(&v), m);
    }

    #[test]
    fn hvec_round_trip_identity() {
        let half = DensityMatrix::maximally_mixed(1);
        assert_eq!(&hmat(&hvec(half.matrix()).unwrap()), half.matrix());
    }

    #[test]
    fn hvec_norm_is_frobenius() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_hermitian(4, &mut rng);
        let v = hvec(&a).unwrap();
        // oracle: direct sum of squared moduli
        let frob: f64 = a.iter().map(|z| z.re * z.re + z.im * z.im).sum();
        assert_abs_diff_eq!(v.dot(&v), frob, epsilon = 1e-12);
    }

    #[test]
    fn hvec_rejects_non_hermitian() {
        let m = CMatrix::from_row_slice(
            2,
            2,
            &[C64::new(1.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)],
        );
        assert!(hvec(&m).is_err());
    }

    #[test]
    fn product_expectation_matches_dense() {
        let State::Product(p) = make_state(StateKind::RandomProduct, 3, 2, 14).unwrap() else {
            panic!()
        };
        let rho = p.to_dense(14).unwrap();
        for idx in 0..64 {
            let s = PauliString::from_index(3, idx).unwrap();
            assert_abs_diff_eq!(
                p.pauli_expectation(&s).unwrap(),
                rho.pauli_expectation(&s).unwrap(),
                epsilon = 1e-13
            );
        }
    }
}
