//! Measurement ensembles: binary Pauli POVMs `{(I + W)/2, (I - W)/2}`, the
//! n-fold tetrahedral POVM, and weighted selection of Pauli observables for
//! product-state targets.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::linalg::{self, CMatrix, C64};
use crate::states::ProductState;

/// Largest qubit count whose Pauli index fits in a `u64`.
pub const MAX_PAULI_QUBITS: usize = 31;

/// Default limit on the number of POVMs an ensemble may list.
pub const DEFAULT_MAX_POVMS: usize = 1 << 28;

/// `sigma_{q_0} ⊗ ... ⊗ sigma_{q_{n-1}}` with digits over `{0: I, 1: X, 2: Y, 3: Z}`.
///
/// The index is the base-4 number with `digits[0]` most significant. Digit
/// `j` acts on bit `n - 1 - j` of a basis-state index.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PauliString {
    index: u64,
    digits: Vec<u8>,
}

impl PauliString {
    pub fn from_index(n: usize, index: u64) -> Result<Self> {
        check_pauli_qubits(n)?;
        if n < 32 && index >= 1u64 << (2 * n) {
            return domain(format!("index {index} out of range for {n} qubits"));
        }
        let digits = (0..n)
            .map(|j| ((index >> (2 * (n - 1 - j))) & 3) as u8)
            .collect();
        Ok(Self { index, digits })
    }

    pub fn from_digits(digits: Vec<u8>) -> Result<Self> {
        check_pauli_qubits(digits.len())?;
        if let Some(d) = digits.iter().find(|&&d| d > 3) {
            return domain(format!("Pauli digit {d} is not in 0..4"));
        }
        let index = digits.iter().fold(0u64, |acc, &d| (acc << 2) | d as u64);
        Ok(Self { index, digits })
    }

    /// Parse a label such as `"XIZY"`.
    pub fn from_label(label: &str) -> Result<Self> {
        let digits = label
            .chars()
            .map(|c| match c {
                'I' => Ok(0),
                'X' => Ok(1),
                'Y' => Ok(2),
                'Z' => Ok(3),
                other => domain(format!("bad Pauli letter '{other}'")),
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::from_digits(digits)
    }

    pub fn n(&self) -> usize {
        self.digits.len()
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn digits(&self) -> &[u8] {
        &self.digits
    }

    pub fn is_identity(&self) -> bool {
        self.index == 0
    }

    pub fn label(&self) -> String {
        self.digits.iter().map(|&d| ['I', 'X', 'Y', 'Z'][d as usize]).collect()
    }

    /// `(x_mask, z_mask, number of Y factors)` with `W = i^{#Y} X^x Z^z`
    /// acting on basis-state bits.
    pub fn masks(&self) -> (u64, u64, u32) {
        let n = self.n();
        let (mut x, mut z, mut ny) = (0u64, 0u64, 0u32);
        for (j, &q) in self.digits.iter().enumerate() {
            let bit = 1u64 << (n - 1 - j);
            match q {
                1 => x |= bit,
                2 => {
                    x |= bit;
                    z |= bit;
                    ny += 1;
                }
                3 => z |= bit,
                _ => {}
            }
        }
        (x, z, ny)
    }

    /// Dense `2^n x 2^n` matrix through explicit Kronecker products.
    pub fn to_dense(&self) -> CMatrix {
        let mut acc = linalg::pauli_matrix(self.digits[0]);
        for &q in &self.digits[1..] {
            acc = linalg::kron(&acc, &linalg::pauli_matrix(q));
        }
        acc
    }
}

fn check_pauli_qubits(n: usize) -> Result<()> {
    if n == 0 {
        return domain("Pauli string needs at least one qubit");
    }
    if n > MAX_PAULI_QUBITS {
        return Err(Error::Capacity {
            what: format!("{n}-qubit Pauli index"),
            limit: format!("{MAX_PAULI_QUBITS} qubits"),
        });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PovmFamily {
    Pauli,
    Tetrahedral,
}

impl std::fmt::Display for PovmFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PovmFamily::Pauli => "pauli",
            PovmFamily::Tetrahedral => "tetrahedral",
        })
    }
}

/// A set of POVMs over `n` qubits.
///
/// Frequencies and outcome probabilities use the linear index
/// `i = k + l * m_each` (0-based), with `k = 0` the `+` outcome `(I + W)/2`
/// for Pauli POVMs.
#[derive(Clone, Debug, PartialEq)]
pub struct PovmEnsemble {
    family: PovmFamily,
    n: usize,
    strings: Vec<PauliString>,
}

impl PovmEnsemble {
    /// Binary POVMs for an explicit list of non-identity, distinct strings.
    pub fn pauli(n: usize, strings: Vec<PauliString>) -> Result<Self> {
        check_pauli_qubits(n)?;
        if strings.is_empty() {
            return domain("Pauli ensemble needs at least one string");
        }
        let mut seen = HashSet::with_capacity(strings.len());
        for s in &strings {
            if s.n() != n {
                return domain(format!("string {} has {} qubits, expected {n}", s.label(), s.n()));
            }
            if s.is_identity() {
                return domain("identity string is not an informative POVM");
            }
            if !seen.insert(s.index()) {
                return domain(format!("duplicate Pauli string index {}", s.index()));
            }
        }
        Ok(Self {
            family: PovmFamily::Pauli,
            n,
            strings,
        })
    }

    pub fn pauli_from_indices(n: usize, indices: &[u64]) -> Result<Self> {
        let strings = indices
            .iter()
            .map(|&i| PauliString::from_index(n, i))
            .collect::<Result<Vec<_>>>()?;
        Self::pauli(n, strings)
    }

    pub fn family(&self) -> PovmFamily {
        self.family
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Measured Pauli strings (empty for the tetrahedral family).
    pub fn strings(&self) -> &[PauliString] {
        &self.strings
    }

    pub fn indices(&self) -> Vec<u64> {
        self.strings.iter().map(PauliString::index).collect()
    }

    /// Outcomes per POVM.
    pub fn m_each(&self) -> usize {
        match self.family {
            PovmFamily::Pauli => 2,
            PovmFamily::Tetrahedral => 1 << (2 * self.n),
        }
    }

    pub fn num_povms(&self) -> usize {
        match self.family {
            PovmFamily::Pauli => self.strings.len(),
            PovmFamily::Tetrahedral => 1,
        }
    }

    /// Total number of POVM elements.
    pub fn m_tot(&self) -> usize {
        self.m_each() * self.num_povms()
    }

    /// True when every string of the full Pauli ensemble is measured.
    pub fn is_full_pauli(&self) -> bool {
        self.family == PovmFamily::Pauli && self.strings.len() as u128 + 1 == 1u128 << (2 * self.n)
    }

    /// Dense element for linear index `i`; intended for small `n`.
    pub fn element(&self, i: usize) -> CMatrix {
        let d = 1usize << self.n;
        match self.family {
            PovmFamily::Pauli => {
                let w = self.strings[i / 2].to_dense();
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                (CMatrix::identity(d, d) + w * C64::new(sign, 0.0)) * C64::new(0.5, 0.0)
            }
            PovmFamily::Tetrahedral => {
                let mut acc = tetrahedral_element(digit(i, self.n, 0));
                for j in 1..self.n {
                    acc = linalg::kron(&acc, &tetrahedral_element(digit(i, self.n, j)));
                }
                acc
            }
        }
    }
}

fn digit(i: usize, n: usize, j: usize) -> usize {
    (i >> (2 * (n - 1 - j))) & 3
}

/// All `4^n - 1` non-identity Pauli strings, sorted by index.
pub fn full_pauli_ensemble(n: usize, max_povms: usize) -> Result<PovmEnsemble> {
    check_pauli_qubits(n)?;
    let count = (1u128 << (2 * n)) - 1;
    if count > max_povms as u128 {
        return Err(Error::Capacity {
            what: format!("full Pauli ensemble with {count} POVMs"),
            limit: format!("{max_povms} POVMs"),
        });
    }
    let strings = (1..=count as u64)
        .map(|i| PauliString::from_index(n, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(PovmEnsemble {
        family: PovmFamily::Pauli,
        n,
        strings,
    })
}

/// Bloch directions of the single-qubit tetrahedral POVM.
pub const TETRAHEDRAL_DIRECTIONS: [[f64; 3]; 4] = [
    [1.0, 1.0, 1.0],
    [-1.0, -1.0, 1.0],
    [-1.0, 1.0, -1.0],
    [1.0, -1.0, -1.0],
];

/// `A_k = (I + e_k . (sx, sy, sz) / sqrt(3)) / 4`.
pub fn tetrahedral_element(k: usize) -> CMatrix {
    let e = TETRAHEDRAL_DIRECTIONS[k];
    let s = 1.0 / 3f64.sqrt();
    let mut a = CMatrix::identity(2, 2);
    for (axis, &c) in e.iter().enumerate() {
        a += linalg::pauli_matrix(axis as u8 + 1) * C64::new(c * s, 0.0);
    }
    a * C64::new(0.25, 0.0)
}

/// The single `4^n`-outcome POVM built from n-fold tetrahedral products.
pub fn tetrahedral_ensemble(n: usize, max_qubits: usize) -> Result<PovmEnsemble> {
    if n == 0 {
        return domain("qubit count must be at least 1");
    }
    if n > max_qubits {
        return Err(Error::Capacity {
            what: format!("tetrahedral POVM with 4^{n} outcomes"),
            limit: format!("{max_qubits} qubits"),
        });
    }
    Ok(PovmEnsemble {
        family: PovmFamily::Tetrahedral,
        n,
        strings: Vec::new(),
    })
}

/// `ceil(ln(1/delta) / epsilon^2)` observables.
pub fn dfe_budget(delta: f64, epsilon: f64) -> Result<usize> {
    if !(delta > 0.0 && delta < 1.0) {
        return domain(format!("failure probability {delta} outside (0, 1)"));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return domain(format!("additive error {epsilon} must be positive"));
    }
    let raw = -delta.ln() / (epsilon * epsilon);
    // Absorb last-bit rounding of ln() so exact integers are not bumped up.
    let m = (raw * (1.0 - 4.0 * f64::EPSILON)).ceil();
    Ok(m.max(1.0) as usize)
}

/// Independent per-qubit sampler for weights proportional to
/// `prod_j tr(sigma_{q_j} rho_j)^2`.
#[derive(Clone, Debug)]
pub struct PauliSampler {
    /// Normalized cumulative weights per qubit.
    cumulative: Vec<[f64; 4]>,
    /// Unnormalized weights per qubit.
    weights: Vec<[f64; 4]>,
}

impl PauliSampler {
    pub fn new(target: &ProductState) -> Self {
        let weights: Vec<[f64; 4]> = (0..target.n())
            .map(|j| {
                let e = target.local_expectations(j);
                [1.0, e[1] * e[1], e[2] * e[2], e[3] * e[3]]
            })
            .collect();
        let cumulative = weights
            .iter()
            .map(|w| {
                let total: f64 = w.iter().sum();
                let mut c = [0.0; 4];
                let mut acc = 0.0;
                for q in 0..4 {
                    acc += w[q] / total;
                    c[q] = acc;
                }
                c[3] = 1.0;
                c
            })
            .collect();
        Self { cumulative, weights }
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    /// Per-qubit weights `{1, tr(X rho_j)^2, tr(Y rho_j)^2, tr(Z rho_j)^2}`.
    pub fn weights(&self) -> &[[f64; 4]] {
        &self.weights
    }

    /// Probability of drawing `s` in one raw draw (identity included).
    pub fn probability(&self, s: &PauliString) -> f64 {
        s.digits()
            .iter()
            .zip(&self.weights)
            .map(|(&q, w)| w[q as usize] / w.iter().sum::<f64>())
            .product()
    }

    /// One draw, digit by digit. May return the identity.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> PauliString {
        let digits = self
            .cumulative
            .iter()
            .map(|c| {
                let u: f64 = rng.random();
                c.iter().position(|&x| u < x).unwrap_or(3) as u8
            })
            .collect();
        PauliString::from_digits(digits).expect("digits in range")
    }

    /// One draw with the identity string rejected.
    pub fn draw_non_identity<R: Rng>(&self, rng: &mut R) -> PauliString {
        loop {
            let s = self.draw(rng);
            if !s.is_identity() {
                return s;
            }
        }
    }

    fn support_digits(&self) -> Vec<Vec<u8>> {
        self.weights
            .iter()
            .map(|w| (0..4u8).filter(|&q| w[q as usize] > 0.0).collect())
            .collect()
    }
}

/// Strings selected by [`sample_pauli_strings`].
#[derive(Clone, Debug, PartialEq)]
pub struct PauliSample {
    /// Sorted by index.
    pub strings: Vec<PauliString>,
    /// Set when the support held fewer strings than the budget.
    pub truncated: bool,
}

const REDRAW_FACTOR: usize = 50;
const MAX_ENUMERATED_QUBITS: usize = 20;
const MAX_ENUMERATED_SUPPORT: u128 = 1 << 22;

/// Draw up to `budget` distinct non-identity strings without replacement
/// from the product-state weighting.
pub fn sample_pauli_strings(target: &ProductState, budget: usize, seed: u64) -> Result<PauliSample> {
    if budget == 0 {
        return domain("sampling budget must be at least 1");
    }
    check_pauli_qubits(target.n())?;
    let sampler = PauliSampler::new(target);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: HashSet<PauliString> = HashSet::with_capacity(budget);
    let mut attempts = 0usize;
    let cap = budget.saturating_mul(REDRAW_FACTOR);
    while chosen.len() < budget && attempts < cap {
        attempts += 1;
        let s = sampler.draw(&mut rng);
        if !s.is_identity() {
            chosen.insert(s);
        }
    }
    let mut truncated = false;
    if chosen.len() < budget {
        truncated = complete_from_support(&sampler, &mut chosen, budget, &mut rng);
    }
    let mut strings: Vec<PauliString> = chosen.into_iter().collect();
    strings.sort();
    Ok(PauliSample { strings, truncated })
}

/// Exact completion after the redraw cap. Returns the truncation flag.
fn complete_from_support<R: Rng>(
    sampler: &PauliSampler,
    chosen: &mut HashSet<PauliString>,
    budget: usize,
    rng: &mut R,
) -> bool {
    let support = sampler.support_digits();
    let size: u128 = support.iter().map(|s| s.len() as u128).product();
    if sampler.n() > MAX_ENUMERATED_QUBITS || size > MAX_ENUMERATED_SUPPORT {
        log::warn!(
            "Pauli sampling stopped at {} of {budget} strings; support too large to enumerate",
            chosen.len()
        );
        return true;
    }
    let mut remaining: Vec<(f64, PauliString)> = Vec::new();
    let mut digits = vec![0u8; sampler.n()];
    enumerate_support(&support, 0, &mut digits, &mut |d| {
        let s = PauliString::from_digits(d.to_vec()).expect("digits in range");
        if !s.is_identity() && !chosen.contains(&s) {
            let p = sampler.probability(&s);
            // Efraimidis-Spirakis key: largest u^(1/p) wins.
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            remaining.push((u.ln() / p, s));
        }
    });
    let need = budget - chosen.len();
    let truncated = remaining.len() < need;
    remaining.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    chosen.extend(remaining.into_iter().take(need).map(|(_, s)| s));
    truncated
}

/// Draw up to `budget` distinct non-identity strings without replacement,
/// string `i` weighted by `weights[i]` (length `4^n`, e.g. squared Pauli
/// expectations of a dense state).
pub fn sample_pauli_strings_weighted(n: usize, weights: &[f64], budget: usize, seed: u64) -> Result<PauliSample> {
    if budget == 0 {
        return domain("sampling budget must be at least 1");
    }
    check_pauli_qubits(n)?;
    if weights.len() as u128 != 1u128 << (2 * n) {
        return domain(format!("expected 4^{n} weights, got {}", weights.len()));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return domain("weights must be finite and non-negative");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keyed: Vec<(f64, u64)> = Vec::new();
    for (i, &w) in weights.iter().enumerate().skip(1) {
        if w > 0.0 {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            keyed.push((u.ln() / w, i as u64));
        }
    }
    let truncated = keyed.len() < budget;
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    let mut strings = keyed
        .into_iter()
        .take(budget)
        .map(|(_, i)| PauliString::from_index(n, i))
        .collect::<Result<Vec<_>>>()?;
    strings.sort();
    Ok(PauliSample { strings, truncated })
}

fn enumerate_support(
    support: &[Vec<u8>],
    j: usize,
    digits: &mut Vec<u8>,
    visit: &mut dyn FnMut(&[u8]),
) {
    if j == support.len() {
        visit(digits);
        return;
    }
    for &q in &support[j] {
        digits[j] = q;
        enumerate_support(support, j + 1, digits, visit);
    }
}
