//! Measurement data: exact Born probabilities or sampled frequencies.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{domain, Error, Result};
use crate::kernels;
use crate::objective::{FrequencyTable, Shots};
use crate::parallel;
use crate::povm::{PovmEnsemble, PovmFamily, TETRAHEDRAL_DIRECTIONS};
use crate::states::{depolarize, DensityMatrix, ProductState, State};

/// Negative probabilities above this magnitude are reported as errors.
const NEG_PROB_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShotPlan {
    pub shots: Shots,
    pub seed: u64,
}

/// State whose statistics are simulated.
#[derive(Clone, Debug)]
pub enum Target {
    Dense(DensityMatrix),
    /// `(1 - p) rho_1 ⊗ ... ⊗ rho_n + p I/d`, never formed densely.
    Product { state: ProductState, depolarizing: f64 },
}

impl Target {
    /// Wrap a state, applying depolarizing noise `p`.
    pub fn new(state: State, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return domain(format!("depolarizing strength {p} outside [0, 1]"));
        }
        Ok(match state {
            State::Dense(rho) => Target::Dense(if p > 0.0 { depolarize(&rho, p)? } else { rho }),
            State::Product(state) => Target::Product { state, depolarizing: p },
        })
    }

    pub fn n(&self) -> usize {
        match self {
            Target::Dense(r) => r.n(),
            Target::Product { state, .. } => state.n(),
        }
    }
}

/// `tr(A_i rho)` for every element, clamped to `[0, 1]`.
pub fn exact_probabilities(target: &Target, ens: &PovmEnsemble) -> Result<Vec<f64>> {
    if target.n() != ens.n() {
        return domain(format!("state has {} qubits, ensemble {}", target.n(), ens.n()));
    }
    let raw = match (ens.family(), target) {
        (PovmFamily::Pauli, _) => {
            let x = pauli_expectations(target, ens)?;
            x.iter().flat_map(|&x| [0.5 * (1.0 + x), 0.5 * (1.0 - x)]).collect()
        }
        (PovmFamily::Tetrahedral, Target::Dense(rho)) => kernels::qmt_tetrahedral(rho.matrix())?,
        (PovmFamily::Tetrahedral, Target::Product { state, depolarizing }) => {
            product_tetrahedral(state, *depolarizing)
        }
    };
    raw.into_iter()
        .enumerate()
        .map(|(i, p)| {
            if p < -NEG_PROB_TOL || p > 1.0 + NEG_PROB_TOL || !p.is_finite() {
                Err(Error::Numeric(format!("outcome {i} has probability {p}")))
            } else {
                Ok(p.clamp(0.0, 1.0))
            }
        })
        .collect()
}

fn pauli_expectations(target: &Target, ens: &PovmEnsemble) -> Result<Vec<f64>> {
    let strings = ens.strings();
    match target {
        Target::Dense(rho) => {
            // The full transform costs about as much as d single traces.
            if strings.len() >= rho.dim() {
                let x = kernels::qmt(rho.matrix())?;
                Ok(strings.iter().map(|s| x[s.index() as usize]).collect())
            } else {
                Ok(parallel::map_collect(strings.len(), |l| {
                    rho.pauli_expectation(&strings[l]).expect("qubit counts checked")
                }))
            }
        }
        Target::Product { state, depolarizing } => {
            let scale = 1.0 - depolarizing;
            strings
                .iter()
                .map(|s| Ok(scale * state.pauli_expectation(s)?))
                .collect()
        }
    }
}

/// Tetrahedral probabilities of a product state built as a Kronecker product
/// of per-qubit 4-vectors.
fn product_tetrahedral(state: &ProductState, p: f64) -> Vec<f64> {
    let s = 1.0 / 3f64.sqrt();
    let mut out = vec![1.0];
    for j in 0..state.n() {
        let e = state.local_expectations(j);
        let local: Vec<f64> = TETRAHEDRAL_DIRECTIONS
            .iter()
            .map(|dir| 0.25 * (1.0 + s * (dir[0] * e[1] + dir[1] * e[2] + dir[2] * e[3])))
            .collect();
        out = out.iter().flat_map(|a| local.iter().map(move |b| a * b)).collect();
    }
    let uniform = 1.0 / out.len() as f64;
    out.iter().map(|q| (1.0 - p) * q + p * uniform).collect()
}

/// Frequencies for every POVM of `ens`.
///
/// Finite shots draw one binomial (Pauli) or multinomial (tetrahedral) count
/// vector per POVM from its own RNG substream, so the result does not depend
/// on evaluation order.
pub fn simulate_frequencies(target: &Target, ens: &PovmEnsemble, plan: &ShotPlan) -> Result<FrequencyTable> {
    let p = exact_probabilities(target, ens)?;
    let m_each = ens.m_each();
    let freqs: Vec<f64> = match plan.shots {
        Shots::Infinite => p
            .chunks(m_each)
            .flat_map(|c| {
                let total: f64 = c.iter().sum();
                let mut f: Vec<f64> = c.iter().map(|v| v / total).collect();
                if m_each == 2 {
                    f[1] = 1.0 - f[0];
                }
                f
            })
            .collect(),
        Shots::Finite(n) => {
            let per_povm = parallel::map_collect(ens.num_povms(), |l| {
                let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
                rng.set_stream(l as u64);
                sample_counts(&p[l * m_each..(l + 1) * m_each], n, &mut rng)
            });
            per_povm.into_iter().flatten().collect()
        }
    };
    FrequencyTable::new(ens.clone(), freqs, plan.shots)
}

/// Multinomial frequencies via conditional binomials; the last outcome takes
/// the remainder.
fn sample_counts(p: &[f64], n: u64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = vec![0.0; p.len()];
    let mut left = n;
    let mut mass: f64 = p.iter().sum();
    let last = p.len() - 1;
    for (k, &pk) in p[..last].iter().enumerate() {
        if left == 0 {
            break;
        }
        let q = if mass > 0.0 { (pk / mass).clamp(0.0, 1.0) } else { 0.0 };
        let c = Binomial::new(left, q).expect("probability in [0, 1]").sample(rng);
        left -= c;
        mass -= pk;
        out[k] = c as f64 / n as f64;
    }
    out[last] = left as f64 / n as f64;
    out
}
