use qst::certify::{CertMethod, Certificate};
use qst::objective::Engine;
use qst::solvers::{Method, Termination};
use serde::{Deserialize, Serialize};

/// The certificate fields written to reports and by `certify`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateDoc {
    pub bound: f64,
    pub trace_term: f64,
    pub mu: f64,
    pub method: CertMethod,
}

impl From<&Certificate> for CertificateDoc {
    fn from(c: &Certificate) -> Self {
        Self {
            bound: c.bound,
            trace_term: c.trace_term,
            mu: c.mu,
            method: c.method,
        }
    }
}

impl CertificateDoc {
    pub fn check(&self) -> Result<(), String> {
        if ![self.bound, self.trace_term, self.mu].iter().all(|v| v.is_finite()) {
            return Err("certificate has non-finite fields".into());
        }
        if self.mu < 0.0 {
            return Err(format!("mu = {} is negative", self.mu));
        }
        let sum = self.trace_term + self.mu;
        if (self.bound - sum).abs() > 1e-12 * sum.abs().max(1.0) {
            return Err(format!("bound {} differs from trace_term + mu = {sum}", self.bound));
        }
        Ok(())
    }
}

/// `report.json` written by `solve`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveReport {
    pub n: usize,
    pub rank: usize,
    pub engine: Engine,
    pub solver: Method,
    pub termination: Termination,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    /// Final penalized objective.
    pub objective: f64,
    pub grad_norm: f64,
    /// Negative log-likelihood of the normalized estimate.
    pub nll: f64,
    pub lambda: f64,
    pub factor_norm: f64,
    pub certificate: Option<CertificateDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fidelity: Option<f64>,
    /// Omitted for reproducible runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
}

impl SolveReport {
    pub fn check(&self) -> Result<(), String> {
        if self.converged != self.termination.converged() {
            return Err(format!("converged = {} contradicts termination {}", self.converged, self.termination));
        }
        if let Some(c) = &self.certificate {
            c.check()?;
        }
        if let Some(f) = self.fidelity {
            if !(0.0..=1.0).contains(&f) {
                return Err(format!("fidelity {f} outside [0, 1]"));
            }
        }
        if !(self.lambda > 0.0 && self.factor_norm >= 0.0) {
            return Err("lambda must be positive and the factor norm non-negative".into());
        }
        Ok(())
    }
}
