//! Independent oracles for the dncb-mf test suites.
//!
//! Nothing here calls into `dncb-mf`: series are brute-force sums using
//! `statrs`' log-gamma, integrals use a double-exponential rule, and the
//! goodness-of-fit helpers only see samples and reference probabilities.

use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

pub mod quad {
    use std::f64::consts::FRAC_PI_2;

    /// Tanh-sinh quadrature over `[lo, hi]`. The integrand receives
    /// `(x, x - lo, hi - x)` with both distances computed without
    /// cancellation, so endpoint singularities can be evaluated accurately.
    ///
    /// Halves the step until two successive estimates agree to `tol`
    /// (relative), or 12 levels have been used.
    pub fn tanh_sinh(lo: f64, hi: f64, tol: f64, f: impl Fn(f64, f64, f64) -> f64) -> f64 {
        let half = 0.5 * (hi - lo);
        let eval = |t: f64| -> f64 {
            let u = FRAC_PI_2 * t.sinh();
            let d_lo = (hi - lo) / (1.0 + (-2.0 * u).exp());
            let d_hi = (hi - lo) / (1.0 + (2.0 * u).exp());
            if d_lo == 0.0 || d_hi == 0.0 {
                return 0.0;
            }
            let w = half * FRAC_PI_2 * t.cosh() / u.cosh().powi(2);
            if w == 0.0 {
                return 0.0;
            }
            let x = if t < 0.0 { lo + d_lo } else { hi - d_hi };
            w * f(x, d_lo, d_hi)
        };
        const T_MAX: f64 = 6.5;
        let mut h = 0.5;
        let mut sum = eval(0.0);
        let mut k = 1;
        while (k as f64) * h <= T_MAX {
            let t = k as f64 * h;
            sum += eval(t) + eval(-t);
            k += 1;
        }
        let mut estimate = sum * h;
        for _ in 0..12 {
            h *= 0.5;
            // add the odd nodes of the refined grid
            let mut k = 1;
            while (k as f64) * h <= T_MAX {
                let t = k as f64 * h;
                sum += eval(t) + eval(-t);
                k += 2;
            }
            let next = sum * h;
            if (next - estimate).abs() <= tol * next.abs().max(1e-300) {
                return next;
            }
            estimate = next;
        }
        estimate
    }
}

pub mod series {
    use super::ln_gamma;

    fn log_sum_exp(xs: &[f64]) -> f64 {
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
    }

    /// `ln I_v(a)` by direct summation of `sum_m (a/2)^{2m+v} / (m! Gamma(m+v+1))`
    /// with every term evaluated independently in log space.
    pub fn ln_bessel_i(v: f64, a: f64) -> f64 {
        let ln_half = (0.5 * a).ln();
        let mut terms = Vec::new();
        let mut m = 0u64;
        loop {
            let mf = m as f64;
            let t = (2.0 * mf + v) * ln_half - ln_gamma(mf + 1.0) - ln_gamma(mf + v + 1.0);
            terms.push(t);
            let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if mf > a && t < max - 50.0 {
                break;
            }
            m += 1;
        }
        log_sum_exp(&terms)
    }

    /// `ln 1F1(alpha; beta; x)` by direct summation, together with the log of
    /// an explicit bound on the truncated remainder.
    pub fn ln_kummer(alpha: f64, beta: f64, x: f64) -> (f64, f64) {
        let ln_term = |m: f64| {
            ln_gamma(alpha + m) - ln_gamma(alpha) - ln_gamma(beta + m) + ln_gamma(beta) - ln_gamma(m + 1.0)
                + if m > 0.0 { m * x.ln() } else { 0.0 }
        };
        let mut terms = Vec::new();
        let mut m = 0.0;
        loop {
            terms.push(ln_term(m));
            m += 1.0;
            let ratio = x * (alpha + m) / ((beta + m) * (m + 1.0));
            let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if m > 2.0 * x + 10.0 && ratio < 0.5 && ln_term(m) < max - 60.0 {
                // remaining terms are bounded by a geometric series of ratio `ratio`
                let bound = ln_term(m) - (1.0 - ratio).ln();
                return (log_sum_exp(&terms), bound);
            }
        }
    }

    /// `ln Psi2[a; b, c; x, y]` summed over the full `size x size` index
    /// grid, with the log of the largest term on the grid's outer edge (a
    /// tail check: callers assert it is negligible).
    pub fn ln_psi2_grid(a: f64, b: f64, c: f64, x: f64, y: f64, size: usize) -> (f64, f64) {
        let ln_term = |m: f64, n: f64| {
            ln_gamma(a + m + n) - ln_gamma(a) - ln_gamma(b + m) + ln_gamma(b) - ln_gamma(c + n) + ln_gamma(c)
                - ln_gamma(m + 1.0)
                - ln_gamma(n + 1.0)
                + if m > 0.0 { m * x.ln() } else { 0.0 }
                + if n > 0.0 { n * y.ln() } else { 0.0 }
        };
        let mut terms = Vec::with_capacity(size * size);
        let mut edge = f64::NEG_INFINITY;
        for m in 0..size {
            for n in 0..size {
                let t = ln_term(m as f64, n as f64);
                if m == size - 1 || n == size - 1 {
                    edge = edge.max(t);
                }
                terms.push(t);
            }
        }
        (log_sum_exp(&terms), edge)
    }

    /// Normalized Bessel pmf `p(0..len)` with `len` chosen so that the
    /// neglected tail is below `1e-12`.
    pub fn bessel_pmf(v: f64, a: f64) -> Vec<f64> {
        if a == 0.0 {
            return vec![1.0];
        }
        let ln_half = (0.5 * a).ln();
        let mut ln_w = Vec::new();
        let mut y = 0u64;
        loop {
            let yf = y as f64;
            ln_w.push((2.0 * yf + v) * ln_half - ln_gamma(yf + 1.0) - ln_gamma(yf + v + 1.0));
            let max = ln_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let ratio = 0.25 * a * a / ((yf + 1.0) * (yf + v + 1.0));
            if ratio < 0.5 && *ln_w.last().unwrap() < max - 40.0 {
                break;
            }
            y += 1;
        }
        let z = log_sum_exp(&ln_w);
        ln_w.iter().map(|w| (w - z).exp()).collect()
    }
}

pub mod stats {
    use super::*;

    pub fn mean(xs: &[f64]) -> f64 {
        xs.iter().sum::<f64>() / xs.len() as f64
    }

    /// Sample mean and its standard error (iid samples).
    pub fn mean_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = mean(xs);
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (var / n).sqrt())
    }

    /// Sample mean and a batch-means standard error for autocorrelated
    /// chains.
    pub fn mean_se_batched(xs: &[f64], batches: usize) -> (f64, f64) {
        let len = xs.len() / batches;
        let means: Vec<f64> = (0..batches).map(|b| mean(&xs[b * len..(b + 1) * len])).collect();
        let (_, se) = mean_se(&means);
        (mean(&xs[..len * batches]), se)
    }

    /// Pearson chi-squared p-value of observed counts against reference
    /// probabilities. Adjacent cells are pooled until every expected count
    /// is at least 5.
    pub fn chi2_pvalue(observed: &[u64], probs: &[f64]) -> f64 {
        assert_eq!(observed.len(), probs.len());
        let n: u64 = observed.iter().sum();
        let n = n as f64;
        let total_p: f64 = probs.iter().sum();
        let mut cells: Vec<(f64, f64)> = Vec::new();
        let (mut o, mut e) = (0.0, 0.0);
        for (&obs, &p) in observed.iter().zip(probs) {
            o += obs as f64;
            e += n * p / total_p;
            if e >= 5.0 {
                cells.push((o, e));
                o = 0.0;
                e = 0.0;
            }
        }
        if e > 0.0 || o > 0.0 {
            match cells.last_mut() {
                Some(last) => {
                    last.0 += o;
                    last.1 += e;
                }
                None => cells.push((o, e)),
            }
        }
        let stat: f64 = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
        let df = (cells.len() - 1).max(1) as f64;
        ChiSquared::new(df).unwrap().sf(stat)
    }

    // Kolmogorov distribution survival function.
    fn kolmogorov_sf(lambda: f64) -> f64 {
        if lambda < 0.2 {
            return 1.0;
        }
        let mut s = 0.0;
        for k in 1..200 {
            let kf = k as f64;
            let term = 2.0 * (-1f64).powi(k + 1) * (-2.0 * kf * kf * lambda * lambda).exp();
            s += term;
            if term.abs() < 1e-16 {
                break;
            }
        }
        s.clamp(0.0, 1.0)
    }

    /// One-sample Kolmogorov-Smirnov p-value against a continuous CDF.
    pub fn ks_pvalue(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
        let mut xs = samples.to_vec();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let mut d: f64 = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            let f = cdf(x);
            d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
        }
        let sn = n.sqrt();
        kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d)
    }

    /// Two-sample Kolmogorov-Smirnov p-value.
    pub fn ks_two_sample_pvalue(a: &[f64], b: &[f64]) -> f64 {
        let mut xa = a.to_vec();
        let mut xb = b.to_vec();
        xa.sort_by(f64::total_cmp);
        xb.sort_by(f64::total_cmp);
        let (na, nb) = (xa.len() as f64, xb.len() as f64);
        let (mut i, mut j) = (0, 0);
        let mut d: f64 = 0.0;
        while i < xa.len() && j < xb.len() {
            let x = xa[i].min(xb[j]);
            while i < xa.len() && xa[i] <= x {
                i += 1;
            }
            while j < xb.len() && xb[j] <= x {
                j += 1;
            }
            d = d.max((i as f64 / na - j as f64 / nb).abs());
        }
        let ne = (na * nb / (na + nb)).sqrt();
        kolmogorov_sf((ne + 0.12 + 0.11 / ne) * d)
    }

    /// `ln` of the `Beta(a, b)` density at `x`.
    pub fn beta_ln_pdf(x: f64, a: f64, b: f64) -> f64 {
        (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_gamma(a) - ln_gamma(b) + ln_gamma(a + b)
    }

    /// Regularized incomplete beta CDF.
    pub fn beta_cdf(x: f64, a: f64, b: f64) -> f64 {
        statrs::function::beta::beta_reg(a, b, x)
    }
}

pub mod cluster {
    /// Lloyd's k-means with deterministic farthest-point seeding from each
    /// point in turn; returns the labelling with the lowest within-cluster
    /// sum of squares.
    pub fn kmeans(points: &[Vec<f64>], k: usize) -> Vec<usize> {
        let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        let mut best: Option<(f64, Vec<usize>)> = None;
        for start in 0..points.len() {
            let mut centers = vec![points[start].clone()];
            while centers.len() < k {
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        let da = centers.iter().map(|c| dist2(&points[a], c)).fold(f64::MAX, f64::min);
                        let db = centers.iter().map(|c| dist2(&points[b], c)).fold(f64::MAX, f64::min);
                        da.total_cmp(&db)
                    })
                    .unwrap();
                centers.push(points[far].clone());
            }
            let mut labels = vec![0; points.len()];
            for _ in 0..100 {
                let next: Vec<usize> = points
                    .iter()
                    .map(|p| {
                        (0..k)
                            .min_by(|&a, &b| dist2(p, &centers[a]).total_cmp(&dist2(p, &centers[b])))
                            .unwrap()
                    })
                    .collect();
                let done = next == labels;
                labels = next;
                for (c, center) in centers.iter_mut().enumerate() {
                    let members: Vec<&Vec<f64>> = points
                        .iter()
                        .zip(&labels)
                        .filter(|(_, &l)| l == c)
                        .map(|(p, _)| p)
                        .collect();
                    if members.is_empty() {
                        continue;
                    }
                    for (d, x) in center.iter_mut().enumerate() {
                        *x = members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
                    }
                }
                if done {
                    break;
                }
            }
            let wss: f64 = points.iter().zip(&labels).map(|(p, &l)| dist2(p, &centers[l])).sum();
            if best.as_ref().is_none_or(|(b, _)| wss < *b) {
                best = Some((wss, labels));
            }
        }
        best.map(|(_, l)| l).unwrap_or_default()
    }

    /// Adjusted Rand index between two labellings.
    pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
        assert_eq!(a.len(), b.len());
        let ka = a.iter().max().map_or(0, |m| m + 1);
        let kb = b.iter().max().map_or(0, |m| m + 1);
        let mut table = vec![vec![0u64; kb]; ka];
        for (&x, &y) in a.iter().zip(b) {
            table[x][y] += 1;
        }
        let c2 = |n: u64| (n * n.saturating_sub(1)) as f64 / 2.0;
        let sum_cells: f64 = table.iter().flatten().map(|&n| c2(n)).sum();
        let sum_rows: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
        let sum_cols: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
        let total = c2(a.len() as u64);
        let expected = sum_rows * sum_cols / total;
        let max = 0.5 * (sum_rows + sum_cols);
        if max == expected {
            return 1.0;
        }
        (sum_cells - expected) / (max - expected)
    }
}
