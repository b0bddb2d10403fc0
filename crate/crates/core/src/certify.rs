//! Duality-gap bound `L(rho~) - L* <= tr(grad L(rho~) rho~) + mu`, with
//! `mu = max(0, -lambda_min(grad L(rho~)))` and `rho~` the normalized state of
//! a factor.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::linalg::{self, CMatrix, C64};
use crate::objective::{FactorMatrix, GradientOperator, PenalizedObjective};
use crate::states::complex_gaussian;

/// Largest qubit count for which the automatic choice uses a dense
/// eigendecomposition.
pub const DENSE_CERT_MAX_QUBITS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertMethod {
    DenseEig,
    Lanczos,
}

impl fmt::Display for CertMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CertMethod::DenseEig => "dense_eig",
            CertMethod::Lanczos => "lanczos",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LanczosOptions {
    pub max_iters: usize,
    /// Converged when the Ritz residual is at most `rel_tol` times the
    /// operator norm estimate.
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            rel_tol: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub bound: f64,
    pub trace_term: f64,
    pub mu: f64,
    pub min_eig: f64,
    pub method: CertMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lanczos_residual: Option<f64>,
    /// False when Lanczos stopped at its iteration cap; `mu` then includes
    /// the residual.
    pub converged: bool,
}

#[derive(Serialize)]
struct CertificateReport {
    bound: f64,
    trace_term: f64,
    mu: f64,
    method: CertMethod,
}

impl Certificate {
    /// `{"bound", "trace_term", "mu", "method"}`.
    pub fn to_json(&self) -> Result<String> {
        let r = CertificateReport {
            bound: self.bound,
            trace_term: self.trace_term,
            mu: self.mu,
            method: self.method,
        };
        Ok(serde_json::to_string_pretty(&r)? + "\n")
    }
}

/// Bound with the method picked by problem size.
pub fn gap_bound(u: &FactorMatrix, ctx: &PenalizedObjective) -> Result<Certificate> {
    let method = if ctx.n() <= DENSE_CERT_MAX_QUBITS {
        CertMethod::DenseEig
    } else {
        CertMethod::Lanczos
    };
    gap_bound_with(u, ctx, method, &LanczosOptions::default())
}

pub fn gap_bound_with(
    u: &FactorMatrix,
    ctx: &PenalizedObjective,
    method: CertMethod,
    opts: &LanczosOptions,
) -> Result<Certificate> {
    let nrm = u.norm();
    if !(nrm > 0.0 && nrm.is_finite()) {
        return domain(format!("factor norm {nrm} cannot be normalized"));
    }
    let ut = u / C64::new(nrm, 0.0);
    let ev = ctx.evaluate_checked(&ut)?;
    let gu = ev.grad_l.apply(&ut);
    let trace_term = linalg::re_inner(ut.as_slice(), gu.as_slice());
    let (min_eig, residual, converged) = match method {
        CertMethod::DenseEig => {
            let g = ev.grad_l.to_dense()?;
            (linalg::hermitian_eigenvalues(&g)[0], None, true)
        }
        CertMethod::Lanczos => {
            let l = lanczos_min(&ev.grad_l, opts);
            if !l.converged {
                log::warn!(
                    "Lanczos stopped after {} iterations with residual {:e}; inflating mu",
                    l.iterations,
                    l.residual
                );
            }
            let value = if l.converged { l.value } else { l.value - l.residual };
            (value, Some(l.residual), l.converged)
        }
    };
    let mu = (-min_eig).max(0.0);
    Ok(Certificate {
        bound: trace_term + mu,
        trace_term,
        mu,
        min_eig,
        method,
        lanczos_residual: residual,
        converged,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LanczosResult {
    /// Smallest Ritz value.
    pub value: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Smallest eigenvalue of a Hermitian operator from matrix-vector products,
/// with full reorthogonalization.
pub fn lanczos_min(op: &GradientOperator, opts: &LanczosOptions) -> LanczosResult {
    let d = op.dim();
    let kmax = opts.max_iters.min(d).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut q = CMatrix::from_fn(d, 1, |_, _| complex_gaussian(&mut rng));
    q /= C64::new(q.norm(), 0.0);
    let mut basis: Vec<CMatrix> = Vec::with_capacity(kmax);
    let mut alpha: Vec<f64> = Vec::with_capacity(kmax);
    let mut beta: Vec<f64> = Vec::with_capacity(kmax);
    let mut last = LanczosResult {
        value: f64::NAN,
        residual: f64::INFINITY,
        iterations: 0,
        converged: false,
    };
    for j in 0..kmax {
        let mut w = op.apply(&q);
        let a = q.dotc(&w).re;
        alpha.push(a);
        basis.push(q);
        for _ in 0..2 {
            for b in &basis {
                let c = b.dotc(&w);
                w -= b * c;
            }
        }
        let bj = w.norm();
        beta.push(bj);
        let k = j + 1;
        let check = k % 5 == 0 || k == kmax || bj <= 1e-14 * alpha.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if check {
            let (theta, s_last, scale) = smallest_ritz(&alpha, &beta[..k - 1]);
            let residual = bj * s_last.abs();
            let exhausted = bj <= 1e-14 * scale.max(f64::MIN_POSITIVE) || k == d;
            last = LanczosResult {
                value: theta,
                residual: if exhausted { 0.0 } else { residual },
                iterations: k,
                converged: exhausted || residual <= opts.rel_tol * scale,
            };
            if last.converged {
                return last;
            }
        }
        if bj == 0.0 {
            break;
        }
        q = w / C64::new(bj, 0.0);
    }
    last
}

/// Smallest eigenvalue of the tridiagonal matrix, the last component of its
/// eigenvector, and the spectral radius.
fn smallest_ritz(alpha: &[f64], off: &[f64]) -> (f64, f64, f64) {
    let k = alpha.len();
    let mut t = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = off[i];
            t[(i + 1, i)] = off[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let (imin, theta) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, v)| (i, *v))
        .unwrap();
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (theta, eig.eigenvectors[(k - 1, imin)], scale)
}
