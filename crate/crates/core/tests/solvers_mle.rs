mod common;

use common::*;
use qst::certify::gap_bound;
use qst::objective::{Engine, PenalizedObjective};
use qst::povm::{full_pauli_ensemble, DEFAULT_MAX_POVMS};
use qst::solvers::{init_factor, solve_factor, FactorSolve, Method, SolverConfig, Termination};
use qst::states::{make_state, State, StateKind, DEFAULT_DENSE_CAP};
use qst::{CMatrix, C64};

fn w_problem(n: usize, engine: Engine) -> (CMatrix, PenalizedObjective) {
    let State::Dense(w) = make_state(StateKind::W, n, 0, DEFAULT_DENSE_CAP).unwrap() else { unreachable!() };
    let ens = full_pauli_ensemble(n, DEFAULT_MAX_POVMS).unwrap();
    let table = exact_table(w.matrix(), &ens);
    (w.into_matrix(), PenalizedObjective::new(table, engine, DEFAULT_DENSE_CAP).unwrap())
}

fn run(ctx: &PenalizedObjective, cfg: &SolverConfig, r: usize) -> FactorSolve {
    solve_factor(ctx, &init_factor(ctx.n(), r, 3).unwrap(), cfg, None).unwrap()
}

#[test]
fn w_state_n2_lbfgs() {
    for engine in [Engine::Qmt, Engine::Lowmem] {
        let (w, ctx) = w_problem(2, engine);
        let res = run(&ctx, &SolverConfig::default(), 2);
        assert!(res.result.termination.converged(), "{}", res.result.termination);
        assert!((res.factor.norm() - 1.0).abs() <= 1e-6);
        let rho = &res.factor * res.factor.adjoint();
        let gap = nll_dense(&rho, ctx.freqs()) - nll_dense(&w, ctx.freqs());
        assert!(gap <= 1e-8, "gap {gap}");
    }
}

#[test]
fn w_state_n2_certificate() {
    let (w, ctx) = w_problem(2, Engine::Qmt);
    let res = run(&ctx, &SolverConfig::default(), 2);
    let cert = gap_bound(&res.factor, &ctx).unwrap();
    let ut = &res.factor / C64::new(res.factor.norm(), 0.0);
    let gap = nll_dense(&(&ut * ut.adjoint()), ctx.freqs()) - nll_dense(&w, ctx.freqs());
    assert!(cert.bound <= 1e-6, "bound {}", cert.bound);
    assert!(cert.bound >= gap && gap >= -1e-12, "bound {} gap {gap}", cert.bound);
}

#[test]
fn lbfgs_trace_is_monotone() {
    let (_, ctx) = w_problem(3, Engine::Qmt);
    let res = run(&ctx, &SolverConfig::default(), 2);
    for pair in res.result.trace.windows(2) {
        assert!(pair[1].objective <= pair[0].objective, "{} -> {}", pair[0].objective, pair[1].objective);
    }
}

#[test]
fn accgd_agrees_with_lbfgs() {
    let (_, ctx) = w_problem(2, Engine::Qmt);
    let lb = run(&ctx, &SolverConfig::default(), 2);
    let cfg = SolverConfig {
        method: Method::Accgd,
        step_size: 1e-2,
        max_iters: 20_000,
        ..SolverConfig::default()
    };
    let acc = run(&ctx, &cfg, 2);
    assert!((acc.result.value - lb.result.value).abs() <= 1e-6, "{} vs {}", acc.result.value, lb.result.value);
    let mut best = f64::INFINITY;
    for row in &acc.result.trace {
        best = best.min(row.objective);
    }
    assert_eq!(best, acc.result.value);
}

#[test]
fn unit_norm_at_grad_tol() {
    let mut rng = rng(41);
    for n in 1..=3 {
        let d = 1usize << n;
        let rho = random_density(d, d, &mut rng);
        let ens = full_pauli_ensemble(n, DEFAULT_MAX_POVMS).unwrap();
        let ctx = PenalizedObjective::new(exact_table(&rho, &ens), Engine::Lowmem, DEFAULT_DENSE_CAP).unwrap();
        let cfg = SolverConfig {
            grad_tol: 1e-6,
            f_rel_tol: 1e-300,
            max_iters: 20_000,
            ..SolverConfig::default()
        };
        let res = run(&ctx, &cfg, d);
        assert_eq!(res.result.termination, Termination::GradTol);
        assert!((res.factor.norm() - 1.0).abs() <= 1e-5);
    }
}

#[test]
fn identical_runs_give_identical_traces() {
    let (_, ctx) = w_problem(3, Engine::Lowmem);
    let a = run(&ctx, &SolverConfig::default(), 2);
    let b = run(&ctx, &SolverConfig::default(), 2);
    assert_eq!(a.result.x, b.result.x);
    let strip = |r: &FactorSolve| -> Vec<(usize, f64, f64)> {
        r.result.trace.iter().map(|t| (t.iter, t.objective, t.grad_norm)).collect()
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn certificate_checkpoints_in_trace() {
    let (_, ctx) = w_problem(2, Engine::Qmt);
    let cfg = SolverConfig { certificate_every: 3, ..SolverConfig::default() };
    let mut hook = |u: &CMatrix| gap_bound(u, &ctx).ok().map(|c| c.bound);
    let res = solve_factor(&ctx, &init_factor(2, 2, 3).unwrap(), &cfg, Some(&mut hook)).unwrap();
    for row in &res.result.trace {
        if row.iter > 0 && row.iter % 3 == 0 {
            assert!(row.bound.is_some_and(|b| b >= -1e-9));
        }
    }
    assert!(res.result.last_bound().is_some());
}

#[test]
fn certificate_stopping_rule() {
    let (_, ctx) = w_problem(2, Engine::Qmt);
    let cfg = SolverConfig {
        certificate_every: 1,
        certificate_tol: Some(1e-3),
        ..SolverConfig::default()
    };
    let mut hook = |u: &CMatrix| gap_bound(u, &ctx).ok().map(|c| c.bound);
    let res = solve_factor(&ctx, &init_factor(2, 2, 3).unwrap(), &cfg, Some(&mut hook)).unwrap();
    assert_eq!(res.result.termination, Termination::Certified);
    assert!(res.result.last_bound().unwrap() <= 1e-3);
}
