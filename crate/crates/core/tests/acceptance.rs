//! Acceptance suite. Runs every criterion in turn, prints one PASS/FAIL line
//! for each, and exits nonzero if any failed.
//!
//! Built with `harness = false` so the summary lines are always shown.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use dncb_mf::cli::{cmd_embed, cmd_fit, Flags, RunConfig, CHAIN};
use dncb_mf::gibbs::{geweke_check, Corruption, GewekeConfig};
use dncb_mf::io::write_beta_matrix;
use dncb_mf::model::generate;
use dncb_mf::randist::{sample_beta, sample_dncb, BesselParams, BesselSampler};
use dncb_mf::{
    beta_baseline_ppd, dncb_log_pdf, dncb_mean, make_mask, ppd, run, BetaMatrix, Hyperparams, RngStream, SamplerConfig,
};
use dncb_testkit::cluster::{adjusted_rand_index, kmeans};
use dncb_testkit::quad::tanh_sinh;
use dncb_testkit::{series, stats};
use ndarray::Array2;

type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

const EPS: [f64; 3] = [0.25, 0.75, 2.0];
const LAM: [f64; 3] = [0.0, 1.0, 10.0];

/// Every `(e1, e2, l1, l2)` of the density grid.
fn grid() -> Vec<(f64, f64, f64, f64)> {
    let mut g = Vec::new();
    for e1 in EPS {
        for e2 in EPS {
            for l1 in LAM {
                for l2 in LAM {
                    g.push((e1, e2, l1, l2));
                }
            }
        }
    }
    g
}

fn pdf(x: f64, e1: f64, e2: f64, l1: f64, l2: f64) -> f64 {
    dncb_log_pdf(x, e1, e2, l1, l2).unwrap().exp()
}

/// `int_lo^hi g(x) f(x) dx` for `0 <= lo < hi <= 1`. Pieces above 1/2 are
/// integrated through the mirrored density so both endpoints stay accurate.
fn integrate(lo: f64, hi: f64, p: (f64, f64, f64, f64), g: impl Fn(f64) -> f64) -> f64 {
    let (e1, e2, l1, l2) = p;
    let mut total = 0.0;
    if lo < 0.5 {
        let top = hi.min(0.5);
        total += tanh_sinh(lo, top, 1e-13, |_, d_lo, _| {
            g(lo + d_lo) * pdf(lo + d_lo, e1, e2, l1, l2)
        });
    }
    if hi > 0.5 {
        // x = 1 - u with u in (1 - hi, 1 - max(lo, 1/2))
        let (ulo, uhi) = (1.0 - hi, 1.0 - lo.max(0.5));
        total += tanh_sinh(ulo, uhi, 1e-13, |_, d_lo, _| {
            let u = ulo + d_lo;
            g(1.0 - u) * pdf(u, e2, e1, l2, l1)
        });
    }
    total
}

fn c1_density_normalizes() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, (0.0, 0.0, 0.0, 0.0));
    for p in grid() {
        let err = (integrate(0.0, 1.0, p, |_| 1.0) - 1.0).abs();
        if err > worst.0 {
            worst = (err, p);
        }
    }
    let t = start.elapsed();
    outcome(
        worst.0 <= 1e-6 && t < Duration::from_secs(60),
        format!(
            "{} grid points, worst |integral - 1| = {:.2e} at {:?}, {t:.1?}",
            grid().len(),
            worst.0,
            worst.1
        ),
    )
}

fn c2_representations_agree() -> Outcome {
    let start = Instant::now();
    let settings = [
        (0.75, 0.75, 0.0, 0.0),
        (0.25, 0.25, 1.0, 1.0),
        (0.75, 0.75, 10.0, 0.0),
        (2.0, 0.25, 1.0, 10.0),
        (0.25, 2.0, 10.0, 10.0),
        (2.0, 2.0, 3.0, 25.0),
    ];
    let mut worst = 1.0f64;
    for (s, &p) in settings.iter().enumerate() {
        let bins = 50;
        let probs: Vec<f64> = (0..bins)
            .map(|b| integrate(b as f64 / bins as f64, (b + 1) as f64 / bins as f64, p, |_| 1.0))
            .collect();
        let mut rng = RngStream::new(1000 + s as u64, 0);
        let mut counts = vec![0u64; bins];
        for _ in 0..100_000 {
            let x = sample_dncb(p.0, p.1, p.2, p.3, &mut rng).unwrap();
            counts[((x * bins as f64) as usize).min(bins - 1)] += 1;
        }
        worst = worst.min(stats::chi2_pvalue(&counts, &probs));
    }
    let t = start.elapsed();
    outcome(
        worst > 1e-3 && t < Duration::from_secs(60),
        format!("6 settings x 1e5 draws, smallest chi-squared p = {worst:.4}, {t:.1?}"),
    )
}

fn c3_beta_reduction() -> Outcome {
    let mut worst = 0.0f64;
    for e1 in EPS {
        for e2 in EPS {
            for i in 0..100 {
                let x = (i as f64 + 0.5) / 100.0;
                let got = dncb_log_pdf(x, e1, e2, 0.0, 0.0).unwrap().ln();
                worst = worst.max((got - stats::beta_ln_pdf(x, e1, e2)).abs());
            }
        }
    }
    outcome(
        worst <= 1e-10,
        format!("100 points x 9 shape pairs, worst error {worst:.2e}"),
    )
}

fn c4_mean_matches_quadrature() -> Outcome {
    let mut worst = 0.0f64;
    for p in grid() {
        let q = integrate(0.0, 1.0, p, |x| x);
        worst = worst.max((dncb_mean(p.0, p.1, p.2, p.3).unwrap() - q).abs());
    }
    outcome(
        worst <= 1e-6,
        format!("{} grid points, worst |mean - quadrature| = {worst:.2e}", grid().len()),
    )
}

fn c5_bessel_sampler() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    for v in [-0.25, 0.0, 1.0] {
        for a in [0.5, 2.0, 20.0] {
            let sampler = BesselSampler::new(BesselParams::new(v, a).unwrap());
            let mut rng = RngStream::new(77, 0);
            let pmf = series::bessel_pmf(v, a);
            let mut counts = vec![0u64; pmf.len()];
            let mut xs = Vec::with_capacity(100_000);
            for _ in 0..100_000 {
                let y = sampler.sample(&mut rng) as usize;
                counts[y.min(pmf.len() - 1)] += 1;
                xs.push(y as f64);
            }
            let exact = 0.5 * a * (series::ln_bessel_i(v + 1.0, a) - series::ln_bessel_i(v, a)).exp();
            let (m, se) = stats::mean_se(&xs);
            let z = (m - exact) / se;
            let p = stats::chi2_pvalue(&counts, &pmf);
            if !(z.abs() < 4.0 && p > 1e-3) {
                pass = false;
            }
            lines.push(format!("({v},{a}): z={z:.2} p={p:.3}"));
        }
    }
    let t = start.elapsed();
    outcome(
        pass && t < Duration::from_secs(120),
        format!("{}, {t:.1?}", lines.join(" ")),
    )
}

fn geweke_hyper(eps1: f64, eps2: f64) -> Hyperparams {
    Hyperparams {
        eps1,
        eps2,
        a0: 2.0,
        b0: 1.0,
        e0: 2.0,
        f0: 2.0,
        k: 2,
    }
}

fn c6_geweke() -> Outcome {
    let start = Instant::now();
    let clean = geweke_check(&geweke_hyper(0.75, 0.75), &GewekeConfig::default()).unwrap();
    let bad_cfg = GewekeConfig {
        corruption: Corruption::SwapEpsInCounts,
        ..Default::default()
    };
    let bad = geweke_check(&geweke_hyper(0.75, 3.0), &bad_cfg).unwrap();
    let t = start.elapsed();
    let worst = clean.worst().unwrap();
    let caught = bad.worst().unwrap();
    outcome(
        clean.max_abs_z() < 4.0 && bad.max_abs_z() > 6.0 && t < Duration::from_secs(600),
        format!(
            "{} moments, max |z| = {:.2} ({}); corrupted sampler max |z| = {:.1} ({}), {t:.1?}",
            clean.stats.len(),
            worst.z.abs(),
            worst.name,
            caught.z.abs(),
            caught.name
        ),
    )
}

fn c7_beats_single_beta() -> Outcome {
    let start = Instant::now();
    let hyper = Hyperparams::with_k(5);
    let cfg = |seed| SamplerConfig {
        burnin: 1000,
        total: 2000,
        thin: 20,
        seed,
        parallel: true,
    };
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 1..=3u64 {
        let (_, sim) = generate(50, 100, &hyper, seed).unwrap();
        let mask = make_mask(50, 100, 0.1, seed).unwrap();
        let chain = run(&sim.data, Some(&mask), &hyper, &cfg(seed)).unwrap();
        let model = ppd(&chain, &sim.data, &mask, &hyper).unwrap();
        let base = beta_baseline_ppd(&sim.data, &mask).unwrap();
        if model.scaled_ppd > base.scaled_ppd && model.n_scored == model.n_held_out {
            wins += 1;
        }
        lines.push(format!(
            "seed {seed}: {:.4} vs {:.4}",
            model.scaled_ppd, base.scaled_ppd
        ));
    }
    let t = start.elapsed();
    outcome(
        wins == 3 && t < Duration::from_secs(600),
        format!("{wins}/3 beat the beta fit ({}), {t:.1?}", lines.join("; ")),
    )
}

/// Samples in two groups over genes in two pathways; each group is
/// methylated on its own pathway and unmethylated on the other.
fn two_block(seed: u64) -> (BetaMatrix, Vec<usize>) {
    let (n, m) = (20, 40);
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let mut rng = RngStream::new(seed, 99);
    let mut vals = Array2::zeros((n, m));
    for ((i, j), v) in vals.indexed_iter_mut() {
        let (a, b) = if labels[i] == j * 2 / m { (8.0, 2.0) } else { (2.0, 8.0) };
        *v = sample_beta(a, b, &mut rng).unwrap();
    }
    (BetaMatrix::from_values(vals).unwrap(), labels)
}

fn c8_embedding_recovers_blocks(dir: &Path) -> Outcome {
    let start = Instant::now();
    let mut aris = Vec::new();
    for seed in 1..=3u64 {
        let (beta, labels) = two_block(seed);
        let input = dir.join(format!("blocks{seed}.tsv"));
        write_beta_matrix(&input, &beta).unwrap();
        let fit = Flags {
            input: Some(input),
            output: Some(dir.join(format!("blocks{seed}-fit"))),
            k: Some(2),
            seed: Some(seed),
            ..Default::default()
        };
        cmd_fit(&RunConfig::resolve(&fit).unwrap()).unwrap();
        let embed = Flags {
            input: fit.output.clone(),
            output: Some(dir.join(format!("blocks{seed}-embed"))),
            ..Default::default()
        };
        let emb = cmd_embed(&RunConfig::resolve(&embed).unwrap()).unwrap();
        let points: Vec<Vec<f64>> = emb.rho.rows().into_iter().map(|r| r.to_vec()).collect();
        aris.push(adjusted_rand_index(&kmeans(&points, 2), &labels));
    }
    let t = start.elapsed();
    outcome(
        aris.iter().all(|&a| a == 1.0) && t < Duration::from_secs(300),
        format!("ARI per seed {aris:?}, {t:.1?}"),
    )
}

fn c9_determinism(dir: &Path) -> Outcome {
    let (_, sim) = generate(30, 40, &Hyperparams::with_k(3), 5).unwrap();
    let input = dir.join("det.tsv");
    write_beta_matrix(&input, &sim.data).unwrap();
    let fit = |name: &str, parallel: bool, threads: Option<usize>| {
        let f = Flags {
            input: Some(input.clone()),
            output: Some(dir.join(name)),
            k: Some(3),
            burnin: Some(100),
            total: Some(200),
            thin: Some(10),
            seed: Some(42),
            mask_fraction: Some(0.1),
            parallel: Some(parallel),
            threads,
            ..Default::default()
        };
        cmd_fit(&RunConfig::resolve(&f).unwrap()).unwrap();
        std::fs::read(dir.join(name).join(CHAIN)).unwrap()
    };
    let seq = (fit("seq-a", false, None), fit("seq-b", false, None));
    let par = (fit("par-1", true, Some(1)), fit("par-4", true, Some(4)));
    outcome(
        seq.0 == seq.1 && par.0 == par.1,
        format!(
            "sequential reruns identical: {}; 1 vs 4 workers identical: {}",
            seq.0 == seq.1,
            par.0 == par.1
        ),
    )
}

fn c10_schedule() -> Outcome {
    let cfg = SamplerConfig {
        burnin: 1000,
        total: 2000,
        thin: 20,
        seed: 3,
        parallel: false,
    };
    let beta = BetaMatrix::from_values(ndarray::array![[0.2, 0.7], [0.5, 0.9]]).unwrap();
    let chain = run(&beta, None, &Hyperparams::with_k(1), &cfg).unwrap();
    let s = chain.snapshots.len();
    let first = chain.snapshots.first().map(|s| s.sweep);
    let last = chain.snapshots.last().map(|s| s.sweep);
    outcome(
        cfg.n_snapshots() == 100 && s == 100,
        format!(
            "S = {s} (planned {}), saved sweeps {first:?}..{last:?}",
            cfg.n_snapshots()
        ),
    )
}

fn main() {
    let dir = tempfile::TempDir::new().expect("temporary directory");
    let d = dir.path();
    let criteria: Vec<(&str, Check)> = vec![
        ("density normalizes", Box::new(c1_density_normalizes)),
        ("sampler matches density", Box::new(c2_representations_agree)),
        ("beta reduction", Box::new(c3_beta_reduction)),
        ("mean matches quadrature", Box::new(c4_mean_matches_quadrature)),
        ("bessel sampler", Box::new(c5_bessel_sampler)),
        ("gibbs joint-distribution test", Box::new(c6_geweke)),
        ("masked recovery beats beta fit", Box::new(c7_beats_single_beta)),
        (
            "embedding recovers blocks",
            Box::new(move || c8_embedding_recovers_blocks(d)),
        ),
        ("determinism", Box::new(move || c9_determinism(d))),
        ("schedule arithmetic", Box::new(c10_schedule)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let res = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| outcome(false, "panicked"));
        if !res.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {} {name}: {}",
            i + 1,
            if res.pass { "PASS" } else { "FAIL" },
            res.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
