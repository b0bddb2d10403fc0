use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::Args;
use log::{info, warn};
use qst::io::{write_trace_csv, FactorDoc, StateDoc};
use qst::objective::{FrequencyTable, PenalizedObjective};
use qst::solvers::{init_factor, solve_factor, Method, SolverConfig};
use qst::states::{depolarize, fidelity, fidelity_pure_factor_product, DensityMatrix, State, DEFAULT_DENSE_CAP};
use qst::{CMatrix, Error, C64};

use crate::report::{CertificateDoc, SolveReport};
use crate::util::{certificate, read_text, resolve_engine, write_text, CertChoice, EngineChoice};
use crate::Status;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SolverChoice {
    Lbfgs,
    Accgd,
}

#[derive(Args)]
pub struct SolveArgs {
    /// Frequency table written by `measure`.
    #[arg(long)]
    data: PathBuf,

    /// Factor rank (default: d/4, at least 1).
    #[arg(long)]
    rank: Option<usize>,

    #[arg(long, value_enum, default_value_t = EngineChoice::Auto)]
    engine: EngineChoice,

    #[arg(long, value_enum, default_value_t = SolverChoice::Lbfgs)]
    solver: SolverChoice,

    #[arg(long, default_value_t = SolverConfig::default().max_iters)]
    max_iters: usize,

    #[arg(long, default_value_t = SolverConfig::default().grad_tol)]
    grad_tol: f64,

    #[arg(long, default_value_t = SolverConfig::default().f_rel_tol)]
    f_rel_tol: f64,

    /// Certificate checkpoint spacing in iterations (0 = final only).
    #[arg(long, default_value_t = SolverConfig::default().certificate_every)]
    certificate_every: usize,

    /// Stop once a checkpoint bound is at or below this value.
    #[arg(long)]
    certificate_tol: Option<f64>,

    #[arg(long, value_enum, default_value_t = CertChoice::Auto)]
    cert_method: CertChoice,

    /// Step size for accgd.
    #[arg(long, default_value_t = SolverConfig::default().step_size)]
    step_size: f64,

    /// L-BFGS memory.
    #[arg(long, default_value_t = SolverConfig::default().history)]
    history: usize,

    /// Seed of the random starting factor.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Start from a saved factor instead of a random one.
    #[arg(long)]
    init: Option<PathBuf>,

    /// State file to report fidelity against.
    #[arg(long)]
    reference: Option<PathBuf>,

    /// Largest qubit count for dense matrices.
    #[arg(long, default_value_t = DEFAULT_DENSE_CAP)]
    dense_cap: usize,

    /// Output directory for trace.csv, report.json and factor.json.
    #[arg(long)]
    out: PathBuf,

    /// Zero the time column and omit wall time so reruns are byte-identical.
    #[arg(long)]
    reproducible: bool,
}

impl SolveArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            method: match self.solver {
                SolverChoice::Lbfgs => Method::Lbfgs,
                SolverChoice::Accgd => Method::Accgd,
            },
            max_iters: self.max_iters,
            history: self.history,
            step_size: self.step_size,
            grad_tol: self.grad_tol,
            f_rel_tol: self.f_rel_tol,
            certificate_every: self.certificate_every,
            certificate_tol: self.certificate_tol,
            seed: self.seed,
            ..SolverConfig::default()
        }
    }
}

fn starting_factor(a: &SolveArgs, n: usize) -> anyhow::Result<CMatrix> {
    let Some(path) = &a.init else {
        let r = a.rank.unwrap_or(((1usize << n) / 4).max(1));
        return Ok(init_factor(n, r, a.seed)?);
    };
    let u = FactorDoc::from_json(&read_text(path)?)?.to_factor()?;
    if u.nrows() != 1 << n {
        return Err(Error::Validation(format!("initial factor has {} rows, data need {}", u.nrows(), 1 << n)).into());
    }
    if a.rank.is_some_and(|r| r != u.ncols()) {
        return Err(Error::Validation(format!("--rank {} disagrees with the initial factor", a.rank.unwrap())).into());
    }
    Ok(u)
}

/// Fidelity of the normalized factor state against a reference state file,
/// or `None` when the reference is too large to compare.
fn reference_fidelity(path: &Path, u: &CMatrix, dense_cap: usize) -> anyhow::Result<Option<f64>> {
    let doc = StateDoc::from_json(&read_text(path)?)?;
    let state = doc.to_state()?;
    let p = doc.depolarizing.unwrap_or(0.0);
    let n = state.n();
    if u.nrows() != 1 << n {
        return Err(Error::Validation(format!("reference has {n} qubits, factor {} rows", u.nrows())).into());
    }
    let sigma = match state {
        State::Product(ps) if u.ncols() == 1 => {
            // <psi|(1 - p) rho + p I/d|psi> for the pure estimate.
            let f = fidelity_pure_factor_product(u, &ps)?;
            return Ok(Some((1.0 - p) * f + p / (1u64 << n) as f64));
        }
        _ if n > dense_cap => {
            warn!("reference state has {n} qubits, above the dense cap {dense_cap}; fidelity omitted");
            return Ok(None);
        }
        State::Product(ps) => ps.to_dense(dense_cap)?,
        State::Dense(rho) => rho,
    };
    let sigma = if p > 0.0 { depolarize(&sigma, p)? } else { sigma };
    Ok(Some(fidelity(&DensityMatrix::from_factor(u)?, &sigma)?))
}

pub fn run(a: SolveArgs) -> anyhow::Result<Status> {
    let table = FrequencyTable::from_json(&read_text(&a.data)?)?;
    let n = table.n();
    let engine = resolve_engine(a.engine, table.ensemble().family(), n, a.dense_cap);
    let ctx = PenalizedObjective::new(table, engine, a.dense_cap)?;
    let u0 = starting_factor(&a, n)?;
    let cfg = a.config();
    cfg.validate()?;
    info!(
        "n = {n}, rank {}, engine {engine}, solver {}, lambda = {}",
        u0.ncols(),
        cfg.method,
        ctx.lambda()
    );

    let start = Instant::now();
    let mut hook = |u: &CMatrix| match certificate(u, &ctx, a.cert_method) {
        Ok(c) => Some(c.bound),
        Err(e) => {
            warn!("certificate failed: {e}");
            None
        }
    };
    let res = solve_factor(&ctx, &u0, &cfg, Some(&mut hook))?;
    let wall = start.elapsed().as_secs_f64();

    let u = &res.factor;
    let norm = u.norm();
    let cert = match certificate(u, &ctx, a.cert_method) {
        Ok(c) => Some(CertificateDoc::from(&c)),
        Err(e) => {
            warn!("final certificate failed: {e}");
            None
        }
    };
    let nll = ctx.nll_factor(&(u / C64::new(norm, 0.0)))?;
    let fidelity = match &a.reference {
        Some(path) => reference_fidelity(path, u, a.dense_cap)?,
        None => None,
    };
    let r = &res.result;
    let report = SolveReport {
        n,
        rank: u.ncols(),
        engine,
        solver: cfg.method,
        termination: r.termination,
        converged: r.termination.converged(),
        iterations: r.iterations,
        evaluations: r.evaluations,
        objective: r.value,
        grad_norm: r.grad_norm,
        nll,
        lambda: ctx.lambda(),
        factor_norm: norm,
        certificate: cert,
        fidelity,
        wall_seconds: (!a.reproducible).then_some(wall),
    };

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let trace_path = a.out.join("trace.csv");
    let file = File::create(&trace_path).with_context(|| format!("writing {}", trace_path.display()))?;
    write_trace_csv(&r.trace, !a.reproducible, BufWriter::new(file))?;
    write_text(&a.out.join("report.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    write_text(&a.out.join("factor.json"), &FactorDoc::from_factor(u)?.to_json()?)?;

    info!(
        "{} after {} iterations: objective {:.12e}, nll {:.12e}, |U| = {norm:.9}, bound {}",
        r.termination,
        r.iterations,
        r.value,
        nll,
        report.certificate.as_ref().map_or("n/a".to_string(), |c| format!("{:.3e}", c.bound))
    );
    if r.termination.converged() {
        Ok(Status::Done)
    } else {
        warn!("solver stopped without converging ({}); partial results written", r.termination);
        Ok(Status::NotConverged)
    }
}
