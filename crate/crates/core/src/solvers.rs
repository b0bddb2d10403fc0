//! First-order solvers over flat real vectors: L-BFGS with a strong Wolfe
//! line search and accelerated gradient descent.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::linalg::{CMatrix, C64};
use crate::objective::{pack, pack_into, unpack, PenalizedObjective};
use crate::states::complex_gaussian;

/// A differentiable function on `R^dim`.
///
/// Infeasible points return `+inf`; the gradient is then unspecified.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn value_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// Called with the current iterate; returns a certificate bound if one could
/// be computed.
pub type CertificateHook<'a> = dyn FnMut(&[f64]) -> Option<f64> + 'a;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lbfgs,
    Accgd,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Lbfgs => "lbfgs",
            Method::Accgd => "accgd",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lbfgs" => Ok(Method::Lbfgs),
            "accgd" => Ok(Method::Accgd),
            _ => domain(format!("unknown solver '{s}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    pub max_iters: usize,
    /// L-BFGS memory size.
    pub history: usize,
    /// Accelerated GD step size.
    pub step_size: f64,
    /// Use `theta_t = t / (t + 3)`; `false` gives plain gradient descent.
    pub momentum: bool,
    pub grad_tol: f64,
    pub f_rel_tol: f64,
    /// Iterations spanned by the relative-decrease test.
    pub f_rel_window: usize,
    /// Call the certificate hook every this many iterations (0 = never).
    pub certificate_every: usize,
    /// Stop once a certificate bound is at or below this value.
    pub certificate_tol: Option<f64>,
    pub seed: u64,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    /// Function evaluations allowed per line search.
    pub max_line_search_evals: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::Lbfgs,
            max_iters: 5000,
            history: 10,
            step_size: 1e-2,
            momentum: true,
            grad_tol: 1e-7,
            f_rel_tol: 1e-12,
            f_rel_window: 5,
            certificate_every: 20,
            certificate_tol: None,
            seed: 0,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            max_line_search_evals: 40,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.wolfe_c1 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return domain(format!(
                "Wolfe constants need 0 < c1 < c2 < 1, got c1 = {}, c2 = {}",
                self.wolfe_c1, self.wolfe_c2
            ));
        }
        if !(self.grad_tol > 0.0 && self.f_rel_tol > 0.0) {
            return domain("tolerances must be positive");
        }
        if self.history == 0 {
            return domain("history must be at least 1");
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return domain(format!("step size {} must be positive", self.step_size));
        }
        if self.f_rel_window == 0 || self.max_line_search_evals == 0 {
            return domain("window and line-search budget must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradTol,
    FRelTol,
    MaxIters,
    LineSearchFailure,
    /// A certificate bound reached `certificate_tol`.
    Certified,
}

impl Termination {
    /// True for the tolerance-based stops.
    pub fn converged(&self) -> bool {
        matches!(self, Termination::GradTol | Termination::FRelTol | Termination::Certified)
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::GradTol => "grad_tol",
            Termination::FRelTol => "f_rel_tol",
            Termination::MaxIters => "max_iters",
            Termination::LineSearchFailure => "line_search_failure",
            Termination::Certified => "certified",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub seconds: f64,
    pub objective: f64,
    pub grad_norm: f64,
    pub bound: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub trace: Vec<TraceRow>,
    pub termination: Termination,
}

impl SolveResult {
    /// Most recent certificate bound in the trace.
    pub fn last_bound(&self) -> Option<f64> {
        self.trace.iter().rev().find_map(|r| r.bound)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Shared bookkeeping: trace, timing, stopping tests.
struct Monitor<'c, 'h, 'a> {
    cfg: &'c SolverConfig,
    start: Instant,
    trace: Vec<TraceRow>,
    hook: Option<&'h mut CertificateHook<'a>>,
    history: VecDeque<f64>,
}

impl<'c, 'h, 'a> Monitor<'c, 'h, 'a> {
    fn new(cfg: &'c SolverConfig, hook: Option<&'h mut CertificateHook<'a>>) -> Self {
        Self {
            cfg,
            start: Instant::now(),
            trace: Vec::new(),
            hook,
            history: VecDeque::new(),
        }
    }

    /// Record iteration `iter` and return a termination if one applies.
    fn record(&mut self, iter: usize, x: &[f64], f: f64, gnorm: f64) -> Option<Termination> {
        let mut bound = None;
        if iter > 0 && self.cfg.certificate_every > 0 && iter % self.cfg.certificate_every == 0 {
            if let Some(h) = self.hook.as_mut() {
                bound = h(x);
            }
        }
        self.trace.push(TraceRow {
            iter,
            seconds: self.start.elapsed().as_secs_f64(),
            objective: f,
            grad_norm: gnorm,
            bound,
        });
        if let (Some(b), Some(tol)) = (bound, self.cfg.certificate_tol) {
            if b <= tol {
                return Some(Termination::Certified);
            }
        }
        if gnorm <= self.cfg.grad_tol {
            return Some(Termination::GradTol);
        }
        self.history.push_back(f);
        if self.history.len() > self.cfg.f_rel_window {
            let old = self.history.pop_front().unwrap();
            let scale = old.abs().max(f.abs()).max(f64::MIN_POSITIVE);
            if (old - f).abs() / scale <= self.cfg.f_rel_tol {
                return Some(Termination::FRelTol);
            }
        }
        if iter >= self.cfg.max_iters {
            return Some(Termination::MaxIters);
        }
        None
    }

    /// Attach a final certificate to the last row when none was taken there.
    fn finish(&mut self, x: &[f64]) {
        if let Some(h) = self.hook.as_mut() {
            if let Some(last) = self.trace.last_mut() {
                if last.bound.is_none() {
                    last.bound = h(x);
                }
            }
        }
    }
}

struct Step {
    alpha: f64,
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

struct LineSearch<'a> {
    obj: &'a dyn Objective,
    x: &'a [f64],
    d: &'a [f64],
    f0: f64,
    dphi0: f64,
    c1: f64,
    c2: f64,
    evals_left: usize,
    evals: usize,
}

impl LineSearch<'_> {
    fn eval(&mut self, alpha: f64) -> (Step, f64) {
        self.evals_left -= 1;
        self.evals += 1;
        let x: Vec<f64> = self.x.iter().zip(self.d).map(|(a, b)| a + alpha * b).collect();
        let mut g = vec![0.0; x.len()];
        let f = self.obj.value_and_grad(&x, &mut g);
        let dphi = if f.is_finite() { dot(&g, self.d) } else { f64::NAN };
        (Step { alpha, x, f, g }, dphi)
    }

    fn armijo_fails(&self, s: &Step) -> bool {
        !s.f.is_finite() || s.f > self.f0 + self.c1 * s.alpha * self.dphi0
    }

    fn curvature_ok(&self, dphi: f64) -> bool {
        dphi.abs() <= -self.c2 * self.dphi0
    }

    /// Approximate Wolfe acceptance for steps whose decrease is below the
    /// rounding level of `f0`.
    fn approx_ok(&self, s: &Step, dphi: f64) -> bool {
        s.f.is_finite() && s.f <= self.f0 + 8.0 * f64::EPSILON * self.f0.abs() && self.curvature_ok(dphi)
    }

    fn run(&mut self, alpha0: f64) -> Option<Step> {
        let mut prev = (0.0, self.f0, self.dphi0);
        let mut alpha = alpha0;
        let mut first = true;
        while self.evals_left > 0 {
            let (s, dphi) = self.eval(alpha);
            if self.armijo_fails(&s) || (!first && s.f >= prev.1) {
                if self.approx_ok(&s, dphi) {
                    return Some(s);
                }
                return self.zoom(prev, (s.alpha, s.f, dphi));
            }
            if self.curvature_ok(dphi) {
                return Some(s);
            }
            if dphi >= 0.0 {
                return self.zoom((s.alpha, s.f, dphi), prev);
            }
            prev = (s.alpha, s.f, dphi);
            alpha *= 2.0;
            first = false;
        }
        None
    }

    /// `lo` satisfies sufficient decrease and has the lowest value seen.
    fn zoom(&mut self, mut lo: (f64, f64, f64), mut hi: (f64, f64, f64)) -> Option<Step> {
        while self.evals_left > 0 {
            let width = (hi.0 - lo.0).abs();
            if width <= 1e-16 * lo.0.abs().max(hi.0.abs()) || width == 0.0 {
                return None;
            }
            let alpha = interpolate(lo, hi);
            let (s, dphi) = self.eval(alpha);
            if self.armijo_fails(&s) || s.f >= lo.1 {
                if self.approx_ok(&s, dphi) {
                    return Some(s);
                }
                hi = (s.alpha, s.f, dphi);
            } else {
                if self.curvature_ok(dphi) {
                    return Some(s);
                }
                if dphi * (hi.0 - lo.0) >= 0.0 {
                    hi = lo;
                }
                lo = (s.alpha, s.f, dphi);
            }
        }
        None
    }
}

/// Safeguarded cubic minimizer on the bracket, bisection as fallback.
fn interpolate(lo: (f64, f64, f64), hi: (f64, f64, f64)) -> f64 {
    let (a, fa, ga) = lo;
    let (b, fb, gb) = hi;
    let mid = 0.5 * (a + b);
    if !(fb.is_finite() && gb.is_finite()) {
        return mid;
    }
    let d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - ga * gb;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (gb + d2 - d1) / (gb - ga + 2.0 * d2);
    let (lo_end, hi_end) = (a.min(b), a.max(b));
    let margin = 0.1 * (hi_end - lo_end);
    if t.is_finite() && t >= lo_end + margin && t <= hi_end - margin {
        t
    } else {
        mid
    }
}

fn initial_point(obj: &dyn Objective, x0: Vec<f64>, cfg: &SolverConfig) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    cfg.validate()?;
    if x0.len() != obj.dim() {
        return domain(format!("start has length {}, objective dimension {}", x0.len(), obj.dim()));
    }
    let mut g = vec![0.0; x0.len()];
    let f = obj.value_and_grad(&x0, &mut g);
    if !f.is_finite() {
        return Err(Error::Initialization(f));
    }
    Ok((x0, f, g))
}

/// L-BFGS with two-loop recursion and a strong Wolfe line search.
///
/// After a line-search failure the curvature memory is dropped and the step
/// retried along the steepest-descent direction; a second consecutive failure
/// ends the run.
pub fn lbfgs_solve(
    obj: &dyn Objective,
    x0: Vec<f64>,
    cfg: &SolverConfig,
    hook: Option<&mut CertificateHook<'_>>,
) -> Result<SolveResult> {
    let (mut x, mut f, mut g) = initial_point(obj, x0, cfg)?;
    let mut mon = Monitor::new(cfg, hook);
    let mut evals = 1;
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.history);
    let mut iter = 0;
    let mut stop = mon.record(0, &x, f, norm(&g));
    let mut just_reset = false;
    while stop.is_none() {
        let mut d = two_loop(&g, &mem);
        let mut dphi0 = dot(&g, &d);
        if !(dphi0 < 0.0) {
            mem.clear();
            d = g.iter().map(|v| -v).collect();
            dphi0 = -dot(&g, &g);
        }
        let alpha0 = if mem.is_empty() { (1.0 / norm(&g)).min(1.0) } else { 1.0 };
        let mut ls = LineSearch {
            obj,
            x: &x,
            d: &d,
            f0: f,
            dphi0,
            c1: cfg.wolfe_c1,
            c2: cfg.wolfe_c2,
            evals_left: cfg.max_line_search_evals,
            evals: 0,
        };
        let step = ls.run(alpha0);
        evals += ls.evals;
        let Some(step) = step else {
            if mem.is_empty() || just_reset {
                stop = Some(Termination::LineSearchFailure);
                break;
            }
            log::debug!("line search failed at iteration {iter}; dropping curvature memory");
            mem.clear();
            just_reset = true;
            continue;
        };
        just_reset = false;
        let s: Vec<f64> = d.iter().map(|v| step.alpha * v).collect();
        let y: Vec<f64> = step.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > f64::EPSILON * dot(&y, &y) {
            if mem.len() == cfg.history {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        x = step.x;
        f = step.f;
        g = step.g;
        iter += 1;
        stop = mon.record(iter, &x, f, norm(&g));
    }
    mon.finish(&x);
    Ok(SolveResult {
        grad_norm: norm(&g),
        x,
        value: f,
        iterations: iter,
        evaluations: evals,
        trace: mon.trace,
        termination: stop.unwrap(),
    })
}

/// `-H g` with `H` the L-BFGS inverse-Hessian estimate.
fn two_loop(g: &[f64], mem: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y, rho) in mem.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = mem.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in mem.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Halvings of the step size tried before giving up on an iteration.
const MAX_HALVINGS: usize = 60;

/// Accelerated gradient descent:
/// `u_{t+1} = v_t - eta grad f(v_t)`, `v_{t+1} = u_{t+1} + theta_t (u_{t+1} - u_t)`.
///
/// If the trial point is infeasible the momentum is reset; if `u_{t+1}` is
/// infeasible as well, `eta` is halved for that step. The best evaluated
/// point is returned.
pub fn accgd_solve(
    obj: &dyn Objective,
    x0: Vec<f64>,
    cfg: &SolverConfig,
    hook: Option<&mut CertificateHook<'_>>,
) -> Result<SolveResult> {
    let (x, fv0, gv0) = initial_point(obj, x0, cfg)?;
    let mut mon = Monitor::new(cfg, hook);
    let mut u = x.clone();
    let mut v = x;
    let mut fv = fv0;
    let mut gv = gv0;
    let mut best = (fv, v.clone(), norm(&gv));
    let mut evals = 1;
    let mut t = 0usize;
    let mut iter = 0;
    let mut stop = mon.record(0, &v, fv, best.2);
    let dim = v.len();
    let mut g_new = vec![0.0; dim];
    while stop.is_none() {
        let mut eta = cfg.step_size;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let u_new: Vec<f64> = v.iter().zip(&gv).map(|(a, b)| a - eta * b).collect();
            let theta = if cfg.momentum { t as f64 / (t as f64 + 3.0) } else { 0.0 };
            if theta != 0.0 {
                let v_new: Vec<f64> = u_new.iter().zip(&u).map(|(a, b)| a + theta * (a - b)).collect();
                let f = obj.value_and_grad(&v_new, &mut g_new);
                evals += 1;
                if f.is_finite() {
                    accepted = Some((u_new, v_new, f, false));
                    break;
                }
            }
            let f = obj.value_and_grad(&u_new, &mut g_new);
            evals += 1;
            if f.is_finite() {
                accepted = Some((u_new.clone(), u_new, f, theta != 0.0));
                break;
            }
            eta *= 0.5;
        }
        let Some((u_new, v_new, f, reset)) = accepted else {
            stop = Some(Termination::LineSearchFailure);
            break;
        };
        t = if reset { 0 } else { t + 1 };
        u = u_new;
        v = v_new;
        fv = f;
        std::mem::swap(&mut gv, &mut g_new);
        let gnorm = norm(&gv);
        if fv < best.0 {
            best = (fv, v.clone(), gnorm);
        }
        iter += 1;
        stop = mon.record(iter, &v, fv, gnorm);
    }
    let (value, x, grad_norm) = best;
    mon.finish(&x);
    Ok(SolveResult {
        x,
        value,
        grad_norm,
        iterations: iter,
        evaluations: evals,
        trace: mon.trace,
        termination: stop.unwrap(),
    })
}

/// Dispatch on `cfg.method`.
pub fn solve(
    obj: &dyn Objective,
    x0: Vec<f64>,
    cfg: &SolverConfig,
    hook: Option<&mut CertificateHook<'_>>,
) -> Result<SolveResult> {
    match cfg.method {
        Method::Lbfgs => lbfgs_solve(obj, x0, cfg, hook),
        Method::Accgd => accgd_solve(obj, x0, cfg, hook),
    }
}

/// Standard complex Gaussian `d x r` factor scaled to unit Frobenius norm.
pub fn init_factor(n: usize, r: usize, seed: u64) -> Result<CMatrix> {
    if r == 0 {
        return domain("rank must be at least 1");
    }
    crate::states::check_dense_capacity(n, 30)?;
    let d = 1usize << n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = CMatrix::from_fn(d, r, |_, _| complex_gaussian(&mut rng));
    let nrm = u.norm();
    Ok(u / C64::new(nrm, 0.0))
}

/// `J_lambda` in packed real coordinates.
pub struct FactorProblem<'a> {
    ctx: &'a PenalizedObjective,
    d: usize,
    r: usize,
}

impl<'a> FactorProblem<'a> {
    pub fn new(ctx: &'a PenalizedObjective, r: usize) -> Result<Self> {
        if r == 0 {
            return domain("rank must be at least 1");
        }
        Ok(Self {
            ctx,
            d: 1 << ctx.n(),
            r,
        })
    }

    pub fn unpack(&self, x: &[f64]) -> Result<CMatrix> {
        unpack(x, self.d, self.r)
    }
}

impl Objective for FactorProblem<'_> {
    fn dim(&self) -> usize {
        2 * self.d * self.r
    }

    fn value_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let u = match unpack(x, self.d, self.r) {
            Ok(u) => u,
            Err(_) => return f64::NAN,
        };
        match self.ctx.value_and_grad(&u) {
            Ok((f, g)) => {
                pack_into(&g, grad);
                f
            }
            Err(e) => {
                log::error!("objective evaluation failed: {e}");
                f64::NAN
            }
        }
    }
}

/// Result of [`solve_factor`] with the factor unpacked.
#[derive(Clone, Debug)]
pub struct FactorSolve {
    pub factor: CMatrix,
    pub result: SolveResult,
}

/// Minimize `J_lambda` from `u0`. `hook` receives the current factor.
pub fn solve_factor(
    ctx: &PenalizedObjective,
    u0: &CMatrix,
    cfg: &SolverConfig,
    hook: Option<&mut dyn FnMut(&CMatrix) -> Option<f64>>,
) -> Result<FactorSolve> {
    let problem = FactorProblem::new(ctx, u0.ncols())?;
    let (d, r) = (u0.nrows(), u0.ncols());
    let result = match hook {
        Some(h) => {
            let mut flat = |x: &[f64]| unpack(x, d, r).ok().and_then(|u| h(&u));
            solve(&problem, pack(u0), cfg, Some(&mut flat))?
        }
        None => solve(&problem, pack(u0), cfg, None)?,
    };
    Ok(FactorSolve {
        factor: problem.unpack(&result.x)?,
        result,
    })
}
