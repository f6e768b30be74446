//! Conditional updates of the sampler, one at a time, and whole-run contracts.

use dncb_mf::gibbs::{
    impute_masked, run, sample_counts, sample_gamma_aux, thin_counts, update_factors, AuxState, SamplerConfig, SweepCtx,
};
use dncb_mf::model::{generate, simulate};
use dncb_mf::{dncb_mean, make_mask, BetaMatrix, FactorState, Hyperparams};
use dncb_testkit::{series, stats};
use ndarray::{Array2, Axis};
use proptest::prelude::*;

fn ctx(seed: u64, sweep: u64) -> SweepCtx {
    SweepCtx {
        seed,
        sweep,
        parallel: false,
    }
}

fn uniform_state(n: usize, m: usize, theta1: &[f64], theta2: &[f64], phi: f64) -> FactorState {
    let k = theta1.len();
    let t1 = Array2::from_shape_fn((n, k), |(_, kk)| theta1[kk]);
    let t2 = Array2::from_shape_fn((n, k), |(_, kk)| theta2[kk]);
    FactorState::new(t1, t2, Array2::from_elem((k, m), phi)).unwrap()
}

#[test]
fn gamma_sum_has_unit_rate_mean() {
    let hyper = Hyperparams::with_k(1);
    let mut aux = AuxState::new(Array2::from_elem((100, 1000), 0.3), 1);
    sample_gamma_aux(&mut aux, &hyper, ctx(1, 1)).unwrap();
    let g: Vec<f64> = aux.gamma_tot.iter().copied().collect();
    let (m, se) = stats::mean_se(&g);
    assert!((m - 1.5).abs() < 4.0 * se, "{m}");
}

#[test]
fn gamma_sum_ignores_the_proportion() {
    let hyper = Hyperparams::with_k(1);
    let mut beta = Array2::from_elem((2, 20_000), 0.1);
    beta.row_mut(1).fill(0.9);
    let mut aux = AuxState::new(beta, 1);
    aux.y1.fill(3);
    aux.y2.fill(1);
    sample_gamma_aux(&mut aux, &hyper, ctx(2, 1)).unwrap();
    let a: Vec<f64> = aux.gamma_tot.row(0).to_vec();
    let b: Vec<f64> = aux.gamma_tot.row(1).to_vec();
    assert!(stats::ks_two_sample_pvalue(&a, &b) > 1e-3);
}

#[test]
fn counts_match_the_bessel_mean() {
    let (g1, lam1) = (0.8, 3.0);
    let hyper = Hyperparams {
        eps1: 0.75,
        ..Hyperparams::with_k(1)
    };
    let m = 100_000;
    let state = uniform_state(1, m, &[lam1], &[1.0], 1.0);
    let mut aux = AuxState::new(Array2::from_elem((1, m), 0.5), 1);
    aux.gamma1.fill(g1);
    aux.gamma2.fill(0.2);
    sample_counts(&mut aux, &state, &hyper, ctx(3, 1)).unwrap();
    let ys: Vec<f64> = aux.y1.iter().map(|&y| y as f64).collect();
    let pmf = series::bessel_pmf(hyper.eps1 - 1.0, 2.0 * (g1 * lam1).sqrt());
    let exact: f64 = pmf.iter().enumerate().map(|(y, p)| y as f64 * p).sum();
    let (mean, se) = stats::mean_se(&ys);
    assert!((mean - exact).abs() < 4.0 * se, "{mean} vs {exact}");
}

#[test]
fn thinning_follows_component_weights() {
    let m = 10_000;
    let state = uniform_state(1, m, &[3.0, 1.0], &[1.0, 1.0], 1.0);
    let mut aux = AuxState::new(Array2::from_elem((1, m), 0.5), 2);
    aux.y1.fill(1);
    thin_counts(&mut aux, &state, ctx(4, 1)).unwrap();
    let share = aux.theta_counts1[[0, 0]] as f64 / m as f64;
    let se = (0.75f64 * 0.25 / m as f64).sqrt();
    assert!((share - 0.75).abs() < 4.0 * se, "{share}");
    assert_eq!(aux.theta_counts2.sum(), 0);
    assert_eq!(aux.phi_counts.sum(), m as u64);
}

#[test]
fn theta_update_is_the_conjugate_gamma() {
    // a0 = b0 = 0.1, sum_j y = 7, sum_j phi = 2: theta ~ Gam(7.1, 2.1)
    let hyper = Hyperparams::with_k(1);
    let n = 100_000;
    let mut state = uniform_state(n, 4, &[1.0], &[1.0], 0.5);
    let mut aux = AuxState::new(Array2::from_elem((n, 4), 0.5), 1);
    aux.theta_counts1.fill(7);
    update_factors(&mut state, &aux, &hyper, ctx(5, 1)).unwrap();
    let t1: Vec<f64> = state.theta1.iter().copied().collect();
    let (m, se) = stats::mean_se(&t1);
    assert!((m - 7.1 / 2.1).abs() < 4.0 * se, "{m}");
    // no counts at all: the prior shape with the data rate
    let t2: Vec<f64> = state.theta2.iter().copied().collect();
    let (m, se) = stats::mean_se(&t2);
    assert!((m - 0.1 / 2.1).abs() < 4.0 * se, "{m}");
}

#[test]
fn forward_values_have_the_dncb_mean() {
    let hyper = Hyperparams::with_k(1);
    let state = uniform_state(200, 500, &[0.3], &[0.1], 1.0);
    let sim = simulate(&state, &hyper, 8).unwrap();
    let xs: Vec<f64> = sim.data.values().iter().copied().collect();
    let (m, se) = stats::mean_se(&xs);
    let want = dncb_mean(0.75, 0.75, 0.3, 0.1).unwrap();
    assert!((m - want).abs() < 4.0 * se, "{m} vs {want}");
}

fn small_config(seed: u64, parallel: bool) -> SamplerConfig {
    SamplerConfig {
        burnin: 10,
        total: 20,
        thin: 5,
        seed,
        parallel,
    }
}

#[test]
fn runs_are_deterministic_across_threads() {
    let hyper = Hyperparams::with_k(3);
    let (_, sim) = generate(40, 30, &hyper, 1).unwrap();
    let mask = make_mask(40, 30, 0.1, 2).unwrap();
    let seq = run(&sim.data, Some(&mask), &hyper, &small_config(7, false)).unwrap();
    assert_eq!(
        seq,
        run(&sim.data, Some(&mask), &hyper, &small_config(7, false)).unwrap()
    );
    let mut par = Vec::new();
    for threads in [1, 4] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        par.push(pool.install(|| run(&sim.data, Some(&mask), &hyper, &small_config(7, true)).unwrap()));
    }
    assert_eq!(par[0], par[1]);
    // the stream layout makes sequential and parallel execution agree as well
    assert_eq!(par[0].snapshots, seq.snapshots);
}

#[test]
fn held_out_values_are_never_read() {
    let hyper = Hyperparams::with_k(2);
    let (_, sim) = generate(10, 12, &hyper, 3).unwrap();
    let mask = make_mask(10, 12, 0.2, 4).unwrap();
    let mut altered = sim.data.values().clone();
    for &(i, j) in mask.cells() {
        altered[[i, j]] = 0.999;
    }
    let altered = BetaMatrix::from_values(altered).unwrap();
    let a = run(&sim.data, Some(&mask), &hyper, &small_config(5, false)).unwrap();
    let b = run(&altered, Some(&mask), &hyper, &small_config(5, false)).unwrap();
    assert_eq!(a.snapshots, b.snapshots);
}

#[test]
fn label_swap_symmetry() {
    let base = Hyperparams {
        eps1: 0.5,
        eps2: 2.0,
        a0: 1.0,
        b0: 1.0,
        e0: 1.0,
        f0: 1.0,
        k: 2,
    };
    let swapped = Hyperparams {
        eps1: base.eps2,
        eps2: base.eps1,
        ..base.clone()
    };
    let data = BetaMatrix::from_values(ndarray::array![[0.2, 0.7, 0.4], [0.9, 0.35, 0.1]]).unwrap();
    let mirror = BetaMatrix::from_values(data.values().mapv(|x| 1.0 - x)).unwrap();
    let cfg = |seed| SamplerConfig {
        burnin: 0,
        total: 30,
        thin: 30,
        seed,
        parallel: false,
    };
    let mut a: [Vec<f64>; 3] = Default::default();
    let mut b: [Vec<f64>; 3] = Default::default();
    for seed in 0..400 {
        // independent chains; the final state of each is one sample
        let sa = run(&data, None, &base, &cfg(seed)).unwrap().snapshots[0].state.clone();
        let sb = run(&mirror, None, &swapped, &cfg(seed + 10_000)).unwrap().snapshots[0]
            .state
            .clone();
        a[0].push(sa.theta1.sum());
        a[1].push(sa.theta2.sum());
        a[2].push(sa.phi.sum());
        b[0].push(sb.theta2.sum());
        b[1].push(sb.theta1.sum());
        b[2].push(sb.phi.sum());
    }
    for (name, (x, y)) in ["theta1", "theta2", "phi"].iter().zip(a.iter().zip(&b)) {
        let p = stats::ks_two_sample_pvalue(x, y);
        assert!(p > 1e-3, "{name}: p = {p}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Invariants after each step of a sweep.
    #[test]
    fn sweep_invariants(seed in 0u64..1000, n in 1usize..6, m in 1usize..6, k in 1usize..4) {
        let hyper = Hyperparams { eps1: 0.25, eps2: 2.0, ..Hyperparams::with_k(k) };
        let (mut state, sim) = generate(n, m, &hyper, seed).unwrap();
        let mut aux = AuxState::new(sim.data.values().clone(), k);
        let cells: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).filter(|(i, j)| (i + j) % 3 == 0).collect();
        for s in 1..6 {
            let c = ctx(seed, s);
            let before = aux.beta.clone();
            impute_masked(&mut aux, &cells, &hyper, c).unwrap();
            for ((i, j), &y) in aux.beta.indexed_iter() {
                if !cells.contains(&(i, j)) {
                    prop_assert_eq!(before[[i, j]].to_bits(), y.to_bits());
                }
                prop_assert!(y > 0.0 && y < 1.0);
            }
            sample_gamma_aux(&mut aux, &hyper, c).unwrap();
            for ix in aux.beta.indexed_iter().map(|(ix, _)| ix) {
                let (g, g1, g2, b) = (aux.gamma_tot[ix], aux.gamma1[ix], aux.gamma2[ix], aux.beta[ix]);
                prop_assert!(g > 0.0);
                prop_assert!((g1 + g2 - g).abs() <= 4.0 * f64::EPSILON * g);
                prop_assert!((g1 / g - b).abs() <= 4.0 * f64::EPSILON * b);
            }
            sample_counts(&mut aux, &state, &hyper, c).unwrap();
            thin_counts(&mut aux, &state, c).unwrap();
            let rows1: Vec<u64> = aux.y1.map_axis(Axis(1), |r| r.iter().map(|&y| y as u64).sum()).to_vec();
            prop_assert_eq!(rows1, aux.theta_counts1.sum_axis(Axis(1)).to_vec());
            let rows2: Vec<u64> = aux.y2.map_axis(Axis(1), |r| r.iter().map(|&y| y as u64).sum()).to_vec();
            prop_assert_eq!(rows2, aux.theta_counts2.sum_axis(Axis(1)).to_vec());
            let cols: Vec<u64> = (0..m).map(|j| (0..n).map(|i| (aux.y1[[i, j]] + aux.y2[[i, j]]) as u64).sum()).collect();
            prop_assert_eq!(cols, aux.phi_counts.sum_axis(Axis(0)).to_vec());
            update_factors(&mut state, &aux, &hyper, c).unwrap();
            prop_assert!(state.theta1.iter().chain(state.theta2.iter()).chain(state.phi.iter()).all(|&x| x > 0.0 && x.is_finite()));
        }
    }

    #[test]
    fn schedule_matches_config(burnin in 0usize..50, total in 1usize..200, thin in 1usize..20) {
        prop_assume!(thin <= total);
        let hyper = Hyperparams::with_k(1);
        let data = BetaMatrix::from_values(ndarray::array![[0.3]]).unwrap();
        let cfg = SamplerConfig { burnin, total, thin, seed: 0, parallel: false };
        let chain = run(&data, None, &hyper, &cfg).unwrap();
        prop_assert_eq!(chain.snapshots.len(), total / thin);
        prop_assert_eq!(chain.trace.len(), burnin + total);
        for (s, snap) in chain.snapshots.iter().enumerate() {
            prop_assert_eq!(snap.sweep, burnin + (s + 1) * thin);
        }
    }
}
