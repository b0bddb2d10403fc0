mod common;

use common::*;
use qst::certify::gap_bound;
use qst::kernels::{outcome_probabilities, probs_lowmem, qmt, qmt_gradient};
use qst::objective::{Engine, PenalizedObjective, Shots};
use qst::povm::{full_pauli_ensemble, tetrahedral_ensemble, PauliString, PovmEnsemble, PovmFamily, DEFAULT_MAX_POVMS};
use qst::simulate::{exact_probabilities, simulate_frequencies, ShotPlan, Target};
use qst::states::{make_state, DensityMatrix, State, StateKind, DEFAULT_DENSE_CAP};
use qst::{CMatrix, C64};
use rand::Rng;

#[test]
fn qmt_is_linear() {
    let mut rng = rng(1);
    for n in 1..=4 {
        let d = 1 << n;
        let a = random_hermitian(d, &mut rng);
        let b = random_hermitian(d, &mut rng);
        let (alpha, beta) = (0.7, -1.3);
        let lhs = qmt(&(&a * C64::new(alpha, 0.0) + &b * C64::new(beta, 0.0))).unwrap();
        let (qa, qb) = (qmt(&a).unwrap(), qmt(&b).unwrap());
        for i in 0..lhs.len() {
            assert!((lhs[i] - (alpha * qa[i] + beta * qb[i])).abs() <= 1e-12 * (1.0 + lhs[i].abs()));
        }
    }
}

#[test]
fn probs_lowmem_random_strings_n3() {
    let mut rng = rng(2);
    let u = random_factor(8, 2, &mut rng);
    let uu = &u * u.adjoint();
    let idx: Vec<u64> = (0..20).map(|_| rng.random_range(0..64)).collect();
    let strings: Vec<PauliString> = idx.iter().map(|&i| PauliString::from_index(3, i).unwrap()).collect();
    let got = probs_lowmem(&u, &strings).unwrap();
    for (g, &i) in got.iter().zip(&idx) {
        assert!((g - tr_prod(&pauli_dense(3, i), &uu)).abs() <= 1e-12);
    }
}

#[test]
fn outcome_probabilities_in_unit_interval() {
    let mut rng = rng(3);
    for n in 1..=3 {
        let d = 1 << n;
        let rho = random_density(d, 1 + n, &mut rng);
        let ens = full_pauli_ensemble(n, DEFAULT_MAX_POVMS).unwrap();
        let p = outcome_probabilities(&rho, PovmFamily::Pauli, ens.strings()).unwrap();
        assert!(p.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
        let x = qmt(&rho).unwrap();
        assert!(x.iter().all(|v| v.abs() <= 1.0 + 1e-9));
    }
}

#[test]
fn qmt_gradient_matches_dense_sum() {
    let mut rng = rng(4);
    for family in [PovmFamily::Pauli, PovmFamily::Tetrahedral] {
        let n = 2;
        let rho = random_density(4, 4, &mut rng);
        let ens = match family {
            PovmFamily::Pauli => full_pauli_ensemble(n, DEFAULT_MAX_POVMS).unwrap(),
            PovmFamily::Tetrahedral => tetrahedral_ensemble(n, 8).unwrap(),
        };
        let table = exact_table(&random_density(4, 2, &mut rng), &ens);
        let g = qmt_gradient(&rho, &table).unwrap();
        let mut want = CMatrix::zeros(4, 4);
        for (i, f) in table.freqs().iter().enumerate() {
            if *f > 0.0 {
                let a = ens.element(i);
                want -= &a * C64::new(f / tr_prod(&a, &rho), 0.0);
            }
        }
        assert!((g - want).norm() <= 1e-11);
    }
}

#[test]
fn exact_frequencies_match_qmt() {
    let mut rng = rng(5);
    for n in 1..=3 {
        let d = 1 << n;
        let rho = random_density(d, 2, &mut rng);
        let ens = full_pauli_ensemble(n, DEFAULT_MAX_POVMS).unwrap();
        let target = Target::Dense(DensityMatrix::new(rho.clone()).unwrap());
        let f = simulate_frequencies(&target, &ens, &ShotPlan { shots: Shots::Infinite, seed: 0 }).unwrap();
        let x = qmt(&rho).unwrap();
        for (l, s) in ens.strings().iter().enumerate() {
            let xp = x[s.index() as usize];
            assert!((f.freqs()[2 * l] - 0.5 * (1.0 + xp)).abs() <= 1e-12);
            assert!((f.freqs()[2 * l + 1] - 0.5 * (1.0 - xp)).abs() <= 1e-12);
        }
    }
}

#[test]
fn finite_shots_converge() {
    let mut rng = rng(6);
    let rho = random_density(4, 4, &mut rng);
    let ens = full_pauli_ensemble(2, DEFAULT_MAX_POVMS).unwrap();
    let target = Target::Dense(DensityMatrix::new(rho).unwrap());
    let exact = exact_probabilities(&target, &ens).unwrap();
    let mut prev = f64::INFINITY;
    for shots in [100, 10_000, 1_000_000] {
        let mut tv = 0.0;
        for seed in 0..5 {
            let f = simulate_frequencies(&target, &ens, &ShotPlan { shots: Shots::Finite(shots), seed }).unwrap();
            tv += 0.5 * f.freqs().iter().zip(&exact).map(|(a, b)| (a - b).abs()).sum::<f64>();
        }
        assert!(tv < prev, "total variation did not decrease at N = {shots}");
        prev = tv;
    }
}

#[test]
fn product_fast_path_matches_dense_n4() {
    let State::Product(ps) = make_state(StateKind::RandomProduct, 4, 9, DEFAULT_DENSE_CAP).unwrap() else { unreachable!() };
    let dense = ps.to_dense(DEFAULT_DENSE_CAP).unwrap();
    let ens = full_pauli_ensemble(4, DEFAULT_MAX_POVMS).unwrap();
    for p in [0.0, 0.25] {
        let a = exact_probabilities(&Target::new(State::Product(ps.clone()), p).unwrap(), &ens).unwrap();
        let b = exact_probabilities(&Target::new(State::Dense(dense.clone()), p).unwrap(), &ens).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-13));
    }
}

#[test]
fn engines_agree_on_subsets() {
    let mut rng = rng(7);
    let rho = random_density(8, 3, &mut rng);
    let all = full_pauli_ensemble(3, DEFAULT_MAX_POVMS).unwrap();
    let idx: Vec<u64> = all.indices().into_iter().filter(|i| i % 5 == 1).collect();
    let ens = PovmEnsemble::pauli_from_indices(3, &idx).unwrap();
    let table = exact_table(&rho, &ens);
    let q = PenalizedObjective::new(table.clone(), Engine::Qmt, DEFAULT_DENSE_CAP).unwrap();
    let l = PenalizedObjective::new(table, Engine::Lowmem, DEFAULT_DENSE_CAP).unwrap();
    let u = random_factor(8, 2, &mut rng);
    let (fq, gq) = q.value_and_grad(&u).unwrap();
    let (fl, gl) = l.value_and_grad(&u).unwrap();
    assert!((fq - fl).abs() <= 1e-10 * fq.abs());
    assert!((&gq - gl).norm() <= 1e-10 * gq.norm());
}

#[test]
fn certificate_is_scale_free_and_nonnegative() {
    let mut rng = rng(8);
    let rho = random_density(8, 8, &mut rng);
    let ens = full_pauli_ensemble(3, DEFAULT_MAX_POVMS).unwrap();
    let ctx = PenalizedObjective::new(exact_table(&rho, &ens), Engine::Qmt, DEFAULT_DENSE_CAP).unwrap();
    for _ in 0..5 {
        let u = random_factor(8, 3, &mut rng);
        let a = gap_bound(&u, &ctx).unwrap();
        let b = gap_bound(&(&u * C64::new(3.5, 0.0)), &ctx).unwrap();
        assert!(a.bound >= -1e-9);
        assert!((a.bound - b.bound).abs() <= 1e-12 * a.bound.abs().max(1.0));
        assert_eq!(a.bound, a.trace_term + a.mu);
    }
}
