//! PPD scoring against a naive per-cell oracle, plus mask properties.

use dncb_mf::eval::{holdout_count, HoldoutMask};
use dncb_mf::gibbs::{Snapshot, TracePoint};
use dncb_mf::{
    beta_baseline_ppd, dncb_log_pdf, make_mask, ppd, BetaMatrix, FactorState, Hyperparams, PosteriorChain,
    SamplerConfig,
};
use ndarray::{array, Array2};
use proptest::prelude::*;

/// One-component state whose rates at (i, j) are `(t1[i] phi[j], t2[i] phi[j])`.
fn rank_one(t1: &[f64], t2: &[f64], phi: &[f64]) -> FactorState {
    let col = |v: &[f64]| Array2::from_shape_vec((v.len(), 1), v.to_vec()).unwrap();
    FactorState::new(
        col(t1),
        col(t2),
        Array2::from_shape_vec((1, phi.len()), phi.to_vec()).unwrap(),
    )
    .unwrap()
}

fn chain_of(states: Vec<FactorState>, hyper: &Hyperparams) -> PosteriorChain {
    let s = states.len();
    PosteriorChain {
        snapshots: states
            .into_iter()
            .enumerate()
            .map(|(t, state)| Snapshot { sweep: t + 1, state })
            .collect(),
        config: SamplerConfig {
            burnin: 0,
            total: s,
            thin: 1,
            seed: 0,
            parallel: false,
        },
        hyper: hyper.clone(),
        trace: Vec::<TracePoint>::new(),
    }
}

/// Log of the snapshot average of densities, computed without library helpers.
fn naive_log_avg(logs: &[f64]) -> f64 {
    let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut acc = 0.0;
    for l in logs {
        acc += (l - mx).exp();
    }
    mx + (acc / logs.len() as f64).ln()
}

fn log_dens(b: f64, h: &Hyperparams, st: &FactorState, i: usize, j: usize) -> f64 {
    let r = st.rates(i, j).unwrap();
    dncb_log_pdf(b, h.eps1, h.eps2, r.lam1, r.lam2).unwrap().ln()
}

#[test]
fn single_snapshot_single_cell() {
    let h = Hyperparams::default();
    let st = rank_one(&[1.3, 0.2], &[0.4, 2.0], &[0.7, 1.1]);
    let beta = BetaMatrix::from_values(array![[0.3, 0.6], [0.9, 0.15]]).unwrap();
    let mask = HoldoutMask::from_cells(2, 2, vec![(1, 0)]).unwrap();
    let r = ppd(&chain_of(vec![st.clone()], &h), &beta, &mask, &h).unwrap();
    let want = log_dens(0.9, &h, &st, 1, 0).exp();
    assert!((r.scaled_ppd - want).abs() <= 1e-14 * want);
    assert_eq!((r.n_held_out, r.n_scored, r.n_snapshots), (1, 1, 1));
}

#[test]
fn constant_density_gives_that_constant() {
    let h = Hyperparams::default();
    let st = rank_one(&[1.0, 1.0, 1.0], &[2.0, 2.0, 2.0], &[0.5, 0.5]);
    let beta = BetaMatrix::from_values(Array2::from_elem((3, 2), 0.42)).unwrap();
    let mask = HoldoutMask::from_cells(3, 2, vec![(0, 0), (1, 1), (2, 0), (2, 1)]).unwrap();
    let r = ppd(&chain_of(vec![st.clone(), st.clone()], &h), &beta, &mask, &h).unwrap();
    let c = log_dens(0.42, &h, &st, 0, 0).exp();
    assert!((r.scaled_ppd - c).abs() <= 1e-13 * c, "{} vs {c}", r.scaled_ppd);
}

#[test]
fn three_cells_two_snapshots_match_naive_oracle() {
    let h = Hyperparams {
        eps1: 0.6,
        eps2: 1.4,
        ..Hyperparams::with_k(1)
    };
    let s1 = rank_one(&[0.5, 3.0], &[1.5, 0.2], &[2.0, 0.3, 1.0]);
    let s2 = rank_one(&[4.0, 0.1], &[0.3, 2.2], &[0.8, 5.0, 0.05]);
    let beta = BetaMatrix::from_values(array![[0.12, 0.5, 0.97], [0.33, 0.71, 0.02]]).unwrap();
    let cells = vec![(0, 2), (1, 0), (1, 1)];
    let mask = HoldoutMask::from_cells(2, 3, cells.clone()).unwrap();
    let r = ppd(&chain_of(vec![s1.clone(), s2.clone()], &h), &beta, &mask, &h).unwrap();

    let mut total = 0.0;
    for (c, &(i, j)) in r.cells.iter().zip(&cells) {
        let b = beta.get(i, j);
        let want = naive_log_avg(&[log_dens(b, &h, &s1, i, j), log_dens(b, &h, &s2, i, j)]);
        let got = c.log_density.unwrap();
        assert!(
            (got - want).abs() <= 1e-12 * want.abs().max(1.0),
            "({i},{j}): {got} vs {want}"
        );
        total += want;
    }
    assert!((r.log_ppd_total - total).abs() <= 1e-12 * total.abs());
    let scaled = (total / 3.0).exp();
    assert!((r.scaled_ppd - scaled).abs() <= 1e-12 * scaled);
}

#[test]
fn tiny_densities_do_not_underflow() {
    // every per-snapshot density is below e^-700
    let h = Hyperparams::default();
    let s1 = rank_one(&[760.0], &[1e-300], &[1.0]);
    let s2 = rank_one(&[820.0], &[1e-300], &[1.0]);
    let beta = BetaMatrix::from_values(array![[0.01]]).unwrap();
    let mask = HoldoutMask::from_cells(1, 1, vec![(0, 0)]).unwrap();
    let l = [log_dens(0.01, &h, &s1, 0, 0), log_dens(0.01, &h, &s2, 0, 0)];
    assert!(l.iter().all(|&x| x < -700.0), "{l:?}");
    let r = ppd(&chain_of(vec![s1, s2], &h), &beta, &mask, &h).unwrap();
    let want = naive_log_avg(&l);
    assert!(r.log_ppd_total.is_finite());
    assert!((r.log_ppd_total - want).abs() <= 1e-12 * want.abs());
}

#[test]
fn empty_mask_and_mismatches_are_errors() {
    let h = Hyperparams::default();
    let chain = chain_of(vec![rank_one(&[1.0], &[1.0], &[1.0, 1.0])], &h);
    let beta = BetaMatrix::from_values(array![[0.3, 0.4]]).unwrap();
    let empty = HoldoutMask::from_cells(1, 2, vec![]).unwrap();
    assert!(ppd(&chain, &beta, &empty, &h).is_err());
    assert!(beta_baseline_ppd(&beta, &empty).is_err());
    let wrong = HoldoutMask::from_cells(2, 2, vec![(1, 1)]).unwrap();
    assert!(ppd(
        &chain,
        &BetaMatrix::from_values(array![[0.3, 0.4], [0.5, 0.6]]).unwrap(),
        &wrong,
        &h
    )
    .is_err());
    let no_snaps = chain_of(vec![], &h);
    let one = HoldoutMask::from_cells(1, 2, vec![(0, 1)]).unwrap();
    assert!(ppd(&no_snaps, &beta, &one, &h).is_err());
}

#[test]
fn clamped_cells_are_scored_and_counted() {
    let h = Hyperparams::default();
    let chain = chain_of(vec![rank_one(&[1.0], &[1.0], &[1.0, 1.0])], &h);
    let beta = BetaMatrix::from_values(array![[1.0, 0.4]]).unwrap();
    let mask = HoldoutMask::from_cells(1, 2, vec![(0, 0), (0, 1)]).unwrap();
    let r = ppd(&chain, &beta, &mask, &h).unwrap();
    assert_eq!(r.n_clamped, 1);
    assert!(r.cells[0].clamped && r.cells[0].log_density.is_some());
}

#[test]
fn mask_examples() {
    let m = make_mask(10, 10, 0.1, 7).unwrap();
    assert_eq!(m.len(), 10);
    assert_eq!(m, make_mask(10, 10, 0.1, 7).unwrap());
    assert_ne!(m.cells(), make_mask(10, 10, 0.1, 8).unwrap().cells());
    assert_eq!(holdout_count(5, 5, 0.1), 3);
    assert_eq!(make_mask(5, 5, 0.1, 0).unwrap().len(), 3);
    for f in [0.0, 1.0, -0.1, f64::NAN] {
        assert!(make_mask(4, 4, f, 0).is_err());
    }
    assert!(HoldoutMask::from_cells(2, 2, vec![(2, 0)]).is_err());
    assert!(HoldoutMask::from_cells(2, 2, vec![(1, 0), (1, 0)]).is_err());
}

fn arb_states() -> impl Strategy<Value = Vec<FactorState>> {
    let st = (
        proptest::collection::vec(0.01f64..8.0, 2),
        proptest::collection::vec(0.01f64..8.0, 2),
        proptest::collection::vec(0.01f64..8.0, 3),
    )
        .prop_map(|(a, b, c)| rank_one(&a, &b, &c));
    proptest::collection::vec(st, 1..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn order_of_snapshots_does_not_matter(states in arb_states(), n in 1usize..6, seed: u64) {
        let h = Hyperparams::default();
        let beta = BetaMatrix::from_values(array![[0.1, 0.5, 0.8], [0.6, 0.25, 0.95]]).unwrap();
        let mask = make_mask(2, 3, n as f64 / 6.0, seed).unwrap();
        let fwd = ppd(&chain_of(states.clone(), &h), &beta, &mask, &h).unwrap();
        let mut rev = states;
        rev.reverse();
        let bwd = ppd(&chain_of(rev, &h), &beta, &mask, &h).unwrap();
        prop_assert!((fwd.log_ppd_total - bwd.log_ppd_total).abs() <= 1e-12 * fwd.log_ppd_total.abs().max(1.0));
    }

    /// Raising one snapshot's density at one cell cannot lower the total.
    #[test]
    fn total_is_monotone_in_one_cell(states in arb_states(), pick in 0usize..5) {
        let h = Hyperparams::default();
        let beta = BetaMatrix::from_values(array![[0.1, 0.5, 0.8], [0.6, 0.25, 0.95]]).unwrap();
        let mask = HoldoutMask::from_cells(2, 3, vec![(0, 0), (1, 2)]).unwrap();
        let base = ppd(&chain_of(states.clone(), &h), &beta, &mask, &h).unwrap();

        // only row 0 changes, so the other held-out cell (1, 2) keeps its score
        let s = pick % states.len();
        let mut best = states.clone();
        let mut cand = states[s].clone();
        cand.theta1[[0, 0]] = 0.05 / cand.phi[[0, 0]];
        cand.theta2[[0, 0]] = 3.0 / cand.phi[[0, 0]];
        if log_dens(0.1, &h, &cand, 0, 0) > log_dens(0.1, &h, &states[s], 0, 0) {
            best[s] = cand;
            let better = ppd(&chain_of(best, &h), &beta, &mask, &h).unwrap();
            prop_assert!(better.log_ppd_total >= base.log_ppd_total);
            prop_assert_eq!(better.cells[1].log_density, base.cells[1].log_density);
        }
    }

    #[test]
    fn scaled_lies_between_cell_extremes(states in arb_states()) {
        let h = Hyperparams::default();
        let beta = BetaMatrix::from_values(array![[0.1, 0.5, 0.8], [0.6, 0.25, 0.95]]).unwrap();
        let mask = HoldoutMask::from_cells(2, 3, vec![(0, 0), (0, 2), (1, 1), (1, 2)]).unwrap();
        let r = ppd(&chain_of(states, &h), &beta, &mask, &h).unwrap();
        let ls: Vec<f64> = r.cells.iter().map(|c| c.log_density.unwrap()).collect();
        let lo = ls.iter().cloned().fold(f64::INFINITY, f64::min).exp();
        let hi = ls.iter().cloned().fold(f64::NEG_INFINITY, f64::max).exp();
        prop_assert!(r.scaled_ppd >= lo * (1.0 - 1e-12) && r.scaled_ppd <= hi * (1.0 + 1e-12));
    }
}
