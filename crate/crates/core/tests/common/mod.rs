//! Helpers shared by the integration tests: random inputs and brute-force
//! oracles that do not go through the library kernels.

#![allow(dead_code)]

use qst::objective::{FrequencyTable, Shots};
use qst::povm::PovmEnsemble;
use qst::{CMatrix, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im)
}

pub fn random_factor(d: usize, r: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    CMatrix::from_fn(d, r, |_, _| gaussian(rng))
}

/// `G G^dagger / tr` for a Gaussian `d x r` matrix.
pub fn random_density(d: usize, r: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let g = random_factor(d, r, rng);
    let rho = &g * g.adjoint();
    let t = (0..d).map(|i| rho[(i, i)].re).sum::<f64>();
    rho / C64::new(t, 0.0)
}

pub fn random_hermitian(d: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let a = CMatrix::from_fn(d, d, |_, _| gaussian(rng));
    (&a + a.adjoint()) * C64::new(0.5, 0.0)
}

fn pauli_2x2(q: u8) -> CMatrix {
    let z = C64::new(0.0, 0.0);
    let o = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    let v = match q {
        0 => [o, z, z, o],
        1 => [z, o, o, z],
        2 => [z, -i, i, z],
        _ => [o, z, z, -o],
    };
    CMatrix::from_row_slice(2, 2, &v)
}

fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    CMatrix::from_fn(ra * rb, ca * cb, |i, j| a[(i / rb, j / cb)] * b[(i % rb, j % cb)])
}

/// Pauli string `index` on `n` qubits by explicit Kronecker products; the
/// most significant base-4 digit acts on the leftmost factor.
pub fn pauli_dense(n: usize, index: u64) -> CMatrix {
    let mut m = CMatrix::from_element(1, 1, C64::new(1.0, 0.0));
    for j in 0..n {
        let digit = ((index >> (2 * (n - 1 - j))) & 3) as u8;
        m = kron(&m, &pauli_2x2(digit));
    }
    m
}

/// `Re tr(A B)`.
pub fn tr_prod(a: &CMatrix, b: &CMatrix) -> f64 {
    let d = a.nrows();
    let mut s = 0.0;
    for i in 0..d {
        for k in 0..d {
            s += (a[(i, k)] * b[(k, i)]).re;
        }
    }
    s
}

/// Exact frequencies `tr(A_i rho)` computed element by element.
pub fn exact_table(rho: &CMatrix, ens: &PovmEnsemble) -> FrequencyTable {
    let mut f: Vec<f64> = (0..ens.m_tot()).map(|i| tr_prod(&ens.element(i), rho).max(0.0)).collect();
    for chunk in f.chunks_mut(ens.m_each()) {
        let s: f64 = chunk.iter().sum();
        chunk.iter_mut().for_each(|v| *v /= s);
    }
    FrequencyTable::new(ens.clone(), f, Shots::Infinite).unwrap()
}

/// `-sum f log p` with `p` from dense traces.
pub fn nll_dense(rho: &CMatrix, t: &FrequencyTable) -> f64 {
    let ens = t.ensemble();
    t.freqs()
        .iter()
        .enumerate()
        .filter(|(_, f)| **f > 0.0)
        .map(|(i, f)| -f * tr_prod(&ens.element(i), rho).ln())
        .sum()
}

/// Peak resident set size in bytes, if the platform reports it.
pub fn peak_rss() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Reset the peak RSS counter (Linux only; silently ignored elsewhere).
pub fn reset_peak_rss() {
    let _ = std::fs::write("/proc/self/clear_refs", "5");
}
