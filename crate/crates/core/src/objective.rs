//! Negative log-likelihood, the penalized factored objective
//! `J_lambda(U) = -sum_i f_i log tr(A_i U U^dagger) + lambda ||U||_F^2`, and
//! small-n diagnostics in Hermitian-vector coordinates.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{domain, Error, Result};
use crate::kernels::{self, PauliMask};
use crate::linalg::{CMatrix, C64};
use crate::povm::{PovmEnsemble, PovmFamily, DEFAULT_MAX_POVMS};
use crate::states::{check_dense_capacity, hvec, HermitianVector, DEFAULT_DENSE_CAP};

/// Tolerance on per-POVM frequency sums.
pub const FREQ_SUM_TOL: f64 = 1e-12;

/// `d x r` complex factor with `rho = U U^dagger`.
pub type FactorMatrix = CMatrix;

/// Shots per POVM.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shots {
    Finite(u64),
    /// Exact Born probabilities.
    Infinite,
}

impl Shots {
    pub fn is_infinite(&self) -> bool {
        matches!(self, Shots::Infinite)
    }
}

impl fmt::Display for Shots {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shots::Finite(n) => write!(f, "{n}"),
            Shots::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Shots {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinite" | "Inf" => Ok(Shots::Infinite),
            t => match t.parse::<u64>() {
                Ok(0) | Err(_) => domain(format!("shots must be a positive integer or 'inf', got '{s}'")),
                Ok(n) => Ok(Shots::Finite(n)),
            },
        }
    }
}

impl Serialize for Shots {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Shots::Finite(n) => s.serialize_u64(*n),
            Shots::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Shots {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(0) => Err(serde::de::Error::custom("shots must be positive")),
            Raw::Int(n) => Ok(Shots::Finite(n)),
            Raw::Str(s) if s == "inf" => Ok(Shots::Infinite),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("bad shots value '{s}'"))),
        }
    }
}

/// Empirical frequencies over every element of an ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyTable {
    ensemble: PovmEnsemble,
    freqs: Vec<f64>,
    shots: Shots,
}

/// On-disk layout; field order is part of the format.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrequencyFile {
    n: usize,
    family: PovmFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    indices: Option<Vec<u64>>,
    shots: Shots,
    freqs: Vec<f64>,
}

impl FrequencyTable {
    /// Validates length, signs and per-POVM normalization. Tables outside
    /// tolerance are rejected, never renormalized.
    pub fn new(ensemble: PovmEnsemble, freqs: Vec<f64>, shots: Shots) -> Result<Self> {
        if freqs.len() != ensemble.m_tot() {
            return Err(Error::Validation(format!(
                "expected {} frequencies, got {}",
                ensemble.m_tot(),
                freqs.len()
            )));
        }
        if let Some((i, f)) = freqs.iter().enumerate().find(|(_, f)| !(f.is_finite() && **f >= 0.0)) {
            return Err(Error::Validation(format!("frequency {i} is {f}")));
        }
        let m_each = ensemble.m_each();
        for (l, chunk) in freqs.chunks(m_each).enumerate() {
            let sum: f64 = chunk.iter().sum();
            if (sum - 1.0).abs() > FREQ_SUM_TOL {
                return Err(Error::Validation(format!(
                    "frequencies of POVM {l} sum to {sum}, not 1"
                )));
            }
        }
        Ok(Self {
            ensemble,
            freqs,
            shots,
        })
    }

    pub fn ensemble(&self) -> &PovmEnsemble {
        &self.ensemble
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn shots(&self) -> Shots {
        self.shots
    }

    pub fn n(&self) -> usize {
        self.ensemble.n()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = FrequencyFile {
            n: self.ensemble.n(),
            family: self.ensemble.family(),
            indices: match self.ensemble.family() {
                PovmFamily::Pauli => Some(self.ensemble.indices()),
                PovmFamily::Tetrahedral => None,
            },
            shots: self.shots,
            freqs: self.freqs.clone(),
        };
        let mut s = serde_json::to_string(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: FrequencyFile =
            serde_json::from_str(text).map_err(|e| Error::Validation(format!("frequency table: {e}")))?;
        let ensemble = match (file.family, file.indices) {
            (PovmFamily::Pauli, Some(idx)) => {
                if idx.len() > DEFAULT_MAX_POVMS {
                    return Err(Error::Capacity {
                        what: format!("{} POVMs", idx.len()),
                        limit: format!("{DEFAULT_MAX_POVMS}"),
                    });
                }
                PovmEnsemble::pauli_from_indices(file.n, &idx)
            }
            (PovmFamily::Pauli, None) => Err(Error::Validation("pauli table without indices".into())),
            (PovmFamily::Tetrahedral, None) => crate::povm::tetrahedral_ensemble(file.n, DEFAULT_DENSE_CAP),
            (PovmFamily::Tetrahedral, Some(_)) => {
                Err(Error::Validation("tetrahedral table must not list indices".into()))
            }
        }
        .map_err(|e| match e {
            Error::Domain(m) => Error::Validation(m),
            other => other,
        })?;
        Self::new(ensemble, file.freqs, file.shots)
    }
}

/// `lambda = sum_i f_i`: the POVM count when every POVM is normalized.
pub fn lambda_from_frequencies(freqs: &FrequencyTable) -> Result<f64> {
    let s: f64 = freqs.freqs().iter().sum();
    if s <= 0.0 {
        return domain("all frequencies are zero");
    }
    Ok(s)
}

/// `-sum_i f_i log p_i`, skipping `f_i = 0`; `+inf` when an active `p_i <= 0`.
pub fn nll_from_probabilities(p: &[f64], f: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&pi, &fi) in p.iter().zip(f) {
        if fi > 0.0 {
            if pi <= 0.0 {
                return f64::INFINITY;
            }
            acc -= fi * pi.ln();
        }
    }
    acc
}

/// Negative log-likelihood of a dense Hermitian `rho`.
pub fn nll(rho: &CMatrix, freqs: &FrequencyTable) -> Result<f64> {
    let ens = freqs.ensemble();
    let p = kernels::outcome_probabilities(rho, ens.family(), ens.strings())?;
    Ok(nll_from_probabilities(&p, freqs.freqs()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    /// Forms `rho = U U^dagger` and uses the dense transform.
    Qmt,
    /// Applies Pauli strings to `U` only.
    Lowmem,
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Qmt => "qmt",
            Engine::Lowmem => "lowmem",
        })
    }
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qmt" => Ok(Engine::Qmt),
            "lowmem" => Ok(Engine::Lowmem),
            _ => domain(format!("unknown engine '{s}'")),
        }
    }
}

/// `grad L` at some state, in whichever form the engine produced.
#[derive(Clone, Debug)]
pub enum GradientOperator {
    Dense(CMatrix),
    /// `scalar * I + sum_l coeff_l W_l`.
    PauliSum {
        n: usize,
        scalar: f64,
        indices: Vec<u64>,
        terms: Vec<(PauliMask, f64)>,
    },
}

impl GradientOperator {
    pub fn dim(&self) -> usize {
        match self {
            GradientOperator::Dense(g) => g.nrows(),
            GradientOperator::PauliSum { n, .. } => 1 << n,
        }
    }

    pub fn apply(&self, v: &CMatrix) -> CMatrix {
        match self {
            GradientOperator::Dense(g) => g * v,
            GradientOperator::PauliSum { scalar, terms, .. } => kernels::apply_pauli_sum(*scalar, terms, v),
        }
    }

    pub fn to_dense(&self) -> Result<CMatrix> {
        match self {
            GradientOperator::Dense(g) => Ok(g.clone()),
            GradientOperator::PauliSum {
                n,
                scalar,
                indices,
                terms,
            } => {
                check_dense_capacity(*n, DEFAULT_DENSE_CAP)?;
                let mut c = vec![0.0; 1usize << (2 * n)];
                c[0] = *scalar;
                for (&idx, (_, coef)) in indices.iter().zip(terms) {
                    c[idx as usize] += coef;
                }
                kernels::transform_adjoint(&c, *n, PovmFamily::Pauli)
            }
        }
    }
}

/// Likelihood and `grad L` at `rho = U U^dagger`.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub nll: f64,
    pub grad_l: GradientOperator,
}

/// Measured string with its two frequencies.
#[derive(Clone, Debug)]
struct PauliTerm {
    mask: PauliMask,
    index: u64,
    f_plus: f64,
    f_minus: f64,
}

/// `J_lambda` bound to a frequency table with `lambda = sum_i f_i`.
#[derive(Clone, Debug)]
pub struct PenalizedObjective {
    freqs: FrequencyTable,
    lambda: f64,
    engine: Engine,
    terms: Vec<PauliTerm>,
}

impl PenalizedObjective {
    pub fn new(freqs: FrequencyTable, engine: Engine, max_dense_qubits: usize) -> Result<Self> {
        let lambda = lambda_from_frequencies(&freqs)?;
        let ens = freqs.ensemble();
        match engine {
            Engine::Qmt => check_dense_capacity(ens.n(), max_dense_qubits.min(DEFAULT_DENSE_CAP))?,
            Engine::Lowmem => {
                if ens.family() != PovmFamily::Pauli {
                    return domain("the low-memory engine needs a Pauli ensemble");
                }
            }
        }
        let f = freqs.freqs();
        let terms = ens
            .strings()
            .iter()
            .enumerate()
            .map(|(l, s)| PauliTerm {
                mask: PauliMask::new(s),
                index: s.index(),
                f_plus: f[2 * l],
                f_minus: f[2 * l + 1],
            })
            .collect();
        Ok(Self {
            freqs,
            lambda,
            engine,
            terms,
        })
    }

    pub fn freqs(&self) -> &FrequencyTable {
        &self.freqs
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn engine(&self) -> Engine {
        self.engine
    }

    pub fn n(&self) -> usize {
        self.freqs.n()
    }

    /// Likelihood and gradient operator at `U U^dagger`, or `None` when an
    /// observed outcome has non-positive probability.
    pub fn evaluate(&self, u: &FactorMatrix) -> Result<Option<Evaluation>> {
        match self.evaluate_checked(u) {
            Ok(ev) => Ok(Some(ev)),
            Err(Error::SingularProbability { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Like [`evaluate`](Self::evaluate) but reports the first observed
    /// outcome with non-positive probability as an error.
    pub fn evaluate_checked(&self, u: &FactorMatrix) -> Result<Evaluation> {
        if u.nrows() != 1 << self.n() {
            return domain(format!("factor has {} rows, expected {}", u.nrows(), 1usize << self.n()));
        }
        match self.engine {
            Engine::Qmt => self.evaluate_qmt(u),
            Engine::Lowmem => self.evaluate_lowmem(u),
        }
    }

    fn evaluate_qmt(&self, u: &FactorMatrix) -> Result<Evaluation> {
        let rho = u * u.adjoint();
        let ens = self.freqs.ensemble();
        let p = kernels::outcome_probabilities(&rho, ens.family(), ens.strings())?;
        let c = kernels::gradient_coefficients(&p, &self.freqs)?;
        let nll = nll_from_probabilities(&p, self.freqs.freqs());
        let g = kernels::transform_adjoint(&c, ens.n(), ens.family())?;
        Ok(Evaluation {
            nll,
            grad_l: GradientOperator::Dense(g),
        })
    }

    fn evaluate_lowmem(&self, u: &FactorMatrix) -> Result<Evaluation> {
        let masks: Vec<PauliMask> = self.terms.iter().map(|t| t.mask).collect();
        let x = kernels::expectations_masked(u, &masks);
        let x0 = u.norm_squared();
        let mut nll = 0.0;
        let mut scalar = 0.0;
        let mut terms = Vec::with_capacity(self.terms.len());
        for (l, (t, &xl)) in self.terms.iter().zip(&x).enumerate() {
            let mut ab = [0.0; 2];
            for (k, (f, p)) in [(t.f_plus, 0.5 * (x0 + xl)), (t.f_minus, 0.5 * (x0 - xl))].into_iter().enumerate() {
                if f > 0.0 {
                    if p <= 0.0 {
                        return Err(Error::SingularProbability { povm: l, outcome: k, p });
                    }
                    nll -= f * p.ln();
                    ab[k] = f / p;
                }
            }
            scalar -= 0.5 * (ab[0] + ab[1]);
            terms.push((t.mask, -0.5 * (ab[0] - ab[1])));
        }
        Ok(Evaluation {
            nll,
            grad_l: GradientOperator::PauliSum {
                n: self.n(),
                scalar,
                indices: self.terms.iter().map(|t| t.index).collect(),
                terms,
            },
        })
    }

    /// `(J_lambda(U), grad J_lambda(U))`, the gradient taken with respect to
    /// the stacked real coordinates. Infeasible points give `+inf` and a zero
    /// gradient.
    pub fn value_and_grad(&self, u: &FactorMatrix) -> Result<(f64, FactorMatrix)> {
        match self.evaluate(u)? {
            None => Ok((f64::INFINITY, CMatrix::zeros(u.nrows(), u.ncols()))),
            Some(ev) => {
                let mut g = ev.grad_l.apply(u);
                g += u * C64::new(self.lambda, 0.0);
                g *= C64::new(2.0, 0.0);
                Ok((ev.nll + self.lambda * u.norm_squared(), g))
            }
        }
    }

    /// `J(U)`, the likelihood term alone.
    pub fn nll_factor(&self, u: &FactorMatrix) -> Result<f64> {
        Ok(self.evaluate(u)?.map_or(f64::INFINITY, |e| e.nll))
    }
}

/// Free-function form of [`PenalizedObjective::value_and_grad`].
pub fn bm_value_and_grad(u: &FactorMatrix, ctx: &PenalizedObjective) -> Result<(f64, FactorMatrix)> {
    ctx.value_and_grad(u)
}

/// Real parts of all entries (column-major), then imaginary parts.
pub fn pack(u: &CMatrix) -> Vec<f64> {
    let s = u.as_slice();
    s.iter().map(|z| z.re).chain(s.iter().map(|z| z.im)).collect()
}

pub fn pack_into(u: &CMatrix, out: &mut [f64]) {
    let s = u.as_slice();
    let (re, im) = out.split_at_mut(s.len());
    for ((z, a), b) in s.iter().zip(re).zip(im) {
        *a = z.re;
        *b = z.im;
    }
}

pub fn unpack(x: &[f64], d: usize, r: usize) -> Result<CMatrix> {
    if x.len() != 2 * d * r {
        return domain(format!("packed length {} does not match {d}x{r}", x.len()));
    }
    let (re, im) = x.split_at(d * r);
    Ok(CMatrix::from_iterator(
        d,
        r,
        re.iter().zip(im).map(|(&a, &b)| C64::new(a, b)),
    ))
}

/// Gradient and Hessian of `l(x) = -sum_i f_i log(a_i . x)` with
/// `a_i = hvec(A_i)` and `rho = hmat(x)`.
pub fn vec_grad_hess(x: &HermitianVector, freqs: &FrequencyTable) -> Result<(HermitianVector, DMatrix<f64>)> {
    let ens = freqs.ensemble();
    let n = ens.n();
    if n > 4 {
        return Err(Error::Capacity {
            what: format!("{n}-qubit vectorized Hessian"),
            limit: "4 qubits".into(),
        });
    }
    let dim = x.dim();
    if dim != 1 << n {
        return domain(format!("vector is for dimension {dim}, ensemble for {}", 1usize << n));
    }
    let len = dim * dim;
    let mut grad = vec![0.0; len];
    let mut hess = DMatrix::<f64>::zeros(len, len);
    let f = freqs.freqs();
    let m_each = ens.m_each();
    for (i, &fi) in f.iter().enumerate() {
        if fi == 0.0 {
            continue;
        }
        let a = hvec(&ens.element(i))?;
        let p = a.dot(x);
        if p <= 0.0 {
            return Err(Error::SingularProbability {
                povm: i / m_each,
                outcome: i % m_each,
                p,
            });
        }
        let av = nalgebra::DVector::from_column_slice(a.entries());
        for (g, &ak) in grad.iter_mut().zip(a.entries()) {
            *g -= fi / p * ak;
        }
        hess.ger(fi / (p * p), &av, &av, 1.0);
    }
    Ok((HermitianVector::from_entries(dim, grad)?, hess))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::povm::{full_pauli_ensemble, tetrahedral_ensemble};
    use crate::states::{make_state, State, StateKind};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn z_table(f: [f64; 2]) -> FrequencyTable {
        let ens = PovmEnsemble::pauli_from_indices(1, &[3]).unwrap();
        FrequencyTable::new(ens, f.to_vec(), Shots::Infinite).unwrap()
    }

    fn random_factor(d: usize, r: usize, seed: u64) -> CMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CMatrix::from_fn(d, r, |_, _| crate::states::complex_gaussian(&mut rng))
    }

    /// Frequencies from an exact state, computed by dense traces.
    fn exact_table(rho: &CMatrix, ens: PovmEnsemble) -> FrequencyTable {
        let f: Vec<f64> = (0..ens.m_tot())
            .map(|i| linalg::trace(&(ens.element(i) * rho)).re.max(0.0))
            .collect();
        let mut f = f;
        for chunk in f.chunks_mut(ens.m_each()) {
            let s: f64 = chunk.iter().sum();
            chunk.iter_mut().for_each(|v| *v /= s);
        }
        FrequencyTable::new(ens, f, Shots::Infinite).unwrap()
    }

    #[test]
    fn lambda_examples() {
        let ens = full_pauli_ensemble(2, DEFAULT_MAX_POVMS).unwrap();
        let f: Vec<f64> = (0..30).map(|i| if i % 2 == 0 { 0.25 } else { 0.75 }).collect();
        let t = FrequencyTable::new(ens, f, Shots::Finite(4)).unwrap();
        assert_abs_diff_eq!(lambda_from_frequencies(&t).unwrap(), 15.0, epsilon = 1e-12);
        assert_eq!(lambda_from_frequencies(&z_table([0.7, 0.3])).unwrap(), 1.0);
        let tet = tetrahedral_ensemble(2, 8).unwrap();
        let mut f = vec![0.0; 16];
        f[3] = 1.0;
        let t = FrequencyTable::new(tet, f, Shots::Finite(1)).unwrap();
        assert_eq!(lambda_from_frequencies(&t).unwrap(), 1.0);
    }

    #[test]
    fn table_validation() {
        let ens = PovmEnsemble::pauli_from_indices(1, &[3]).unwrap();
        assert!(FrequencyTable::new(ens.clone(), vec![0.5, 0.5 + 1e-9], Shots::Infinite).is_err());
        assert!(FrequencyTable::new(ens.clone(), vec![1.2, -0.2], Shots::Infinite).is_err());
        assert!(FrequencyTable::new(ens.clone(), vec![1.0], Shots::Infinite).is_err());
        assert!(FrequencyTable::new(ens, vec![0.5, 0.5 + 1e-13], Shots::Infinite).is_ok());
    }

    #[test]
    fn json_round_trip_and_layout() {
        let t = z_table([0.25, 0.75]);
        let s = t.to_json().unwrap();
        assert_eq!(s, "{\"n\":1,\"family\":\"pauli\",\"indices\":[3],\"shots\":\"inf\",\"freqs\":[0.25,0.75]}\n");
        assert_eq!(FrequencyTable::from_json(&s).unwrap(), t);
        let tet = tetrahedral_ensemble(1, 8).unwrap();
        let t = FrequencyTable::new(tet, vec![0.25; 4], Shots::Finite(100)).unwrap();
        let s = t.to_json().unwrap();
        assert!(s.starts_with("{\"n\":1,\"family\":\"tetrahedral\",\"shots\":100,"));
        assert_eq!(FrequencyTable::from_json(&s).unwrap(), t);
        assert!(FrequencyTable::from_json("{\"n\":1,\"family\":\"pauli\",\"shots\":0,\"freqs\":[]}").is_err());
    }

    #[test]
    fn nll_examples() {
        let rho0 = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![linalg::ONE, linalg::ZERO]));
        assert_eq!(nll(&rho0, &z_table([1.0, 0.0])).unwrap(), 0.0);
        let half = CMatrix::identity(2, 2) * C64::new(0.5, 0.0);
        assert_abs_diff_eq!(nll(&half, &z_table([0.5, 0.5])).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert_eq!(nll(&rho0, &z_table([0.5, 0.5])).unwrap(), f64::INFINITY);
    }

    #[test]
    fn single_qubit_gradient() {
        let rho0 = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![linalg::ONE, linalg::ZERO]));
        let g = kernels::qmt_gradient(&rho0, &z_table([1.0, 0.0])).unwrap();
        let expect = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-linalg::ONE, linalg::ZERO]));
        assert!((g - expect).norm() < 1e-15);
        match kernels::qmt_gradient(&rho0, &z_table([0.5, 0.5])) {
            Err(Error::SingularProbability { povm: 0, outcome: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn engines_agree() {
        let State::Dense(rho) = make_state(StateKind::RandomPure, 3, 1, 14).unwrap() else { panic!() };
        let ens = PovmEnsemble::pauli_from_indices(3, &[1, 7, 13, 22, 40, 63, 27]).unwrap();
        let t = exact_table(rho.matrix(), ens);
        let a = PenalizedObjective::new(t.clone(), Engine::Qmt, 14).unwrap();
        let b = PenalizedObjective::new(t, Engine::Lowmem, 14).unwrap();
        let u = random_factor(8, 2, 3);
        let (va, ga) = a.value_and_grad(&u).unwrap();
        let (vb, gb) = b.value_and_grad(&u).unwrap();
        assert_abs_diff_eq!(va, vb, epsilon = 1e-10 * va.abs());
        assert!((ga - gb).norm() < 1e-10);
    }

    #[test]
    fn scaling_identity() {
        let State::Dense(rho) = make_state(StateKind::RandomPure, 2, 5, 14).unwrap() else { panic!() };
        let ens = full_pauli_ensemble(2, DEFAULT_MAX_POVMS).unwrap();
        let ctx = PenalizedObjective::new(exact_table(rho.matrix(), ens), Engine::Lowmem, 14).unwrap();
        let u = random_factor(4, 2, 8);
        for c in [0.5, 1.7, 3.0] {
            let lhs = ctx.nll_factor(&(&u * C64::new(c, 0.0))).unwrap();
            let rhs = ctx.nll_factor(&u).unwrap() - 2.0 * ctx.lambda() * f64::ln(c);
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-10);
        }
    }

    #[test]
    fn pack_round_trip_and_inner_product() {
        let u = random_factor(4, 3, 1);
        let v = random_factor(4, 3, 2);
        assert_eq!(unpack(&pack(&u), 4, 3).unwrap(), u);
        let dot: f64 = pack(&u).iter().zip(pack(&v)).map(|(a, b)| a * b).sum();
        assert_abs_diff_eq!(dot, linalg::re_inner(u.as_slice(), v.as_slice()), epsilon = 1e-13);
        let lin = pack(&(&u * C64::new(2.0, 0.0) + &v));
        let expect: Vec<f64> = pack(&u).iter().zip(pack(&v)).map(|(a, b)| 2.0 * a + b).collect();
        assert_eq!(lin, expect);
        assert!(unpack(&[0.0; 5], 2, 1).is_err());
    }

    #[test]
    fn hessian_single_outcome_rank_one() {
        let t = z_table([1.0, 0.0]);
        let x = hvec(&(CMatrix::identity(2, 2) * C64::new(0.5, 0.0))).unwrap();
        let (_, h) = vec_grad_hess(&x, &t).unwrap();
        let ev = nalgebra::SymmetricEigen::new(h.clone()).eigenvalues;
        assert_eq!(ev.iter().filter(|v| v.abs() > 1e-12).count(), 1);
        let a = hvec(&t.ensemble().element(0)).unwrap();
        let av = nalgebra::DVector::from_column_slice(a.entries());
        let expect = &av * av.transpose() * (1.0 / 0.25);
        assert!((h - expect).norm() < 1e-14);
    }

    #[test]
    fn vec_grad_matches_qmt_gradient() {
        let State::Dense(rho) = make_state(StateKind::RandomPure, 2, 2, 14).unwrap() else { panic!() };
        let ens = full_pauli_ensemble(2, DEFAULT_MAX_POVMS).unwrap();
        let t = exact_table(rho.matrix(), ens);
        let mixed = rho.matrix() * C64::new(0.6, 0.0) + CMatrix::identity(4, 4) * C64::new(0.1, 0.0);
        let (g, _) = vec_grad_hess(&hvec(&mixed).unwrap(), &t).unwrap();
        let g2 = hvec(&kernels::qmt_gradient(&mixed, &t).unwrap()).unwrap();
        for (a, b) in g.entries().iter().zip(g2.entries()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-11);
        }
    }
}
