//! Data types, the DNCB density and mean, factorized rates and the `rho`
//! embedding.

use ndarray::{Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::randist::{sample_beta, sample_gamma, sample_poisson, stream_key, RngStream, StreamPhase};
use crate::specfun::{kummer_1f1, ln_add_exp, ln_beta, log_humbert_psi2, LogReal};

/// Observed values are clamped into `[CLAMP_DELTA, 1 - CLAMP_DELTA]` on ingestion.
pub const CLAMP_DELTA: f64 = 1e-6;

/// Factor entries are floored here after every update.
pub const POSITIVITY_FLOOR: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq)]
pub struct Hyperparams {
    pub eps1: f64,
    pub eps2: f64,
    /// Shape and rate of the gamma prior on both `theta` matrices.
    pub a0: f64,
    pub b0: f64,
    /// Shape and rate of the gamma prior on `phi`.
    pub e0: f64,
    pub f0: f64,
    pub k: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            eps1: 0.75,
            eps2: 0.75,
            a0: 0.1,
            b0: 0.1,
            e0: 0.1,
            f0: 0.1,
            k: 10,
        }
    }
}

impl Hyperparams {
    pub fn with_k(k: usize) -> Self {
        Hyperparams {
            k,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("eps1", self.eps1),
            ("eps2", self.eps2),
            ("a0", self.a0),
            ("b0", self.b0),
            ("e0", self.e0),
            ("f0", self.f0),
        ];
        for (name, x) in fields {
            if !(x > 0.0) || !x.is_finite() {
                return Err(Error::Config(format!("{name} must be positive and finite, got {x}")));
            }
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn eps_tot(&self) -> f64 {
        self.eps1 + self.eps2
    }
}

/// `N x M` matrix of values in the open unit interval with sample (row) and
/// gene (column) labels.
#[derive(Clone, Debug, PartialEq)]
pub struct BetaMatrix {
    values: Array2<f64>,
    row_ids: Vec<String>,
    col_ids: Vec<String>,
    n_clamped: usize,
}

impl BetaMatrix {
    /// Validates that every value lies in `[0, 1]` and clamps it into
    /// `[CLAMP_DELTA, 1 - CLAMP_DELTA]`, counting the clamped cells.
    pub fn new(mut values: Array2<f64>, row_ids: Vec<String>, col_ids: Vec<String>) -> Result<Self> {
        let (n, m) = values.dim();
        if n == 0 || m == 0 {
            return Err(Error::Dimension(format!("matrix must be non-empty, got {n}x{m}")));
        }
        if row_ids.len() != n || col_ids.len() != m {
            return Err(Error::Dimension(format!(
                "{} row labels and {} column labels for a {n}x{m} matrix",
                row_ids.len(),
                col_ids.len()
            )));
        }
        let mut n_clamped = 0;
        for ((i, j), x) in values.indexed_iter_mut() {
            if !(0.0..=1.0).contains(x) {
                return Err(Error::domain(
                    "BetaMatrix",
                    format!("cell ({}, {}) = {x} is outside [0, 1]", row_ids[i], col_ids[j]),
                ));
            }
            let c = x.clamp(CLAMP_DELTA, 1.0 - CLAMP_DELTA);
            if c != *x {
                *x = c;
                n_clamped += 1;
            }
        }
        Ok(BetaMatrix {
            values,
            row_ids,
            col_ids,
            n_clamped,
        })
    }

    /// Like [`BetaMatrix::new`] with labels `s0, s1, ...` and `g0, g1, ...`.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        let (n, m) = values.dim();
        let rows = (0..n).map(|i| format!("s{i}")).collect();
        let cols = (0..m).map(|j| format!("g{j}")).collect();
        Self::new(values, rows, cols)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn col_ids(&self) -> &[String] {
        &self.col_ids
    }

    /// Number of cells clamped into the open interval on construction.
    pub fn n_clamped(&self) -> usize {
        self.n_clamped
    }

    /// Whether a cell holds a clamped value.
    pub fn is_clamped_value(&self, i: usize, j: usize) -> bool {
        let x = self.values[[i, j]];
        x == CLAMP_DELTA || x == 1.0 - CLAMP_DELTA
    }

    /// Keeps the `n` columns with the largest sample variance (`n - 1`
    /// denominator), preserving their original order. Ties go to the earlier
    /// column.
    pub fn top_variance_columns(&self, n: usize) -> BetaMatrix {
        let m = self.ncols();
        if n >= m {
            return self.clone();
        }
        let rows = self.nrows() as f64;
        let var: Vec<f64> = self
            .values
            .axis_iter(Axis(1))
            .map(|col| {
                if rows < 2.0 {
                    return 0.0;
                }
                let mean = col.sum() / rows;
                col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (rows - 1.0)
            })
            .collect();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| var[b].total_cmp(&var[a]).then(a.cmp(&b)));
        let mut keep = order[..n].to_vec();
        keep.sort_unstable();
        let values = self.values.select(Axis(1), &keep);
        let n_clamped = values
            .iter()
            .filter(|&&x| x == CLAMP_DELTA || x == 1.0 - CLAMP_DELTA)
            .count();
        BetaMatrix {
            values,
            row_ids: self.row_ids.clone(),
            col_ids: keep.iter().map(|&j| self.col_ids[j].clone()).collect(),
            n_clamped,
        }
    }
}

/// `theta1`, `theta2` are `N x K`, `phi` is `K x M`; all entries positive.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorState {
    pub theta1: Array2<f64>,
    pub theta2: Array2<f64>,
    pub phi: Array2<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatePair {
    pub lam1: f64,
    pub lam2: f64,
    pub lam_tot: f64,
}

impl FactorState {
    pub fn new(theta1: Array2<f64>, theta2: Array2<f64>, phi: Array2<f64>) -> Result<Self> {
        if theta1.dim() != theta2.dim() || theta1.ncols() != phi.nrows() || phi.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "theta1 {:?}, theta2 {:?}, phi {:?}",
                theta1.dim(),
                theta2.dim(),
                phi.dim()
            )));
        }
        let bad = theta1
            .iter()
            .chain(theta2.iter())
            .chain(phi.iter())
            .find(|x| !(**x > 0.0) || !x.is_finite());
        if let Some(x) = bad {
            return Err(Error::domain(
                "FactorState",
                format!("factor entries must be positive, got {x}"),
            ));
        }
        Ok(FactorState { theta1, theta2, phi })
    }

    /// Independent draws from the gamma priors.
    pub fn sample_prior<R: Rng + ?Sized>(n: usize, m: usize, hyper: &Hyperparams, rng: &mut R) -> Result<Self> {
        let k = hyper.k;
        let mut draw = |shape, rate, rows, cols| -> Result<Array2<f64>> {
            let mut out = Array2::zeros((rows, cols));
            for x in out.iter_mut() {
                *x = sample_gamma(shape, rate, rng)?.max(POSITIVITY_FLOOR);
            }
            Ok(out)
        };
        let theta1 = draw(hyper.a0, hyper.b0, n, k)?;
        let theta2 = draw(hyper.a0, hyper.b0, n, k)?;
        let phi = draw(hyper.e0, hyper.f0, k, m)?;
        Ok(FactorState { theta1, theta2, phi })
    }

    pub fn nrows(&self) -> usize {
        self.theta1.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.phi.ncols()
    }

    pub fn k(&self) -> usize {
        self.phi.nrows()
    }

    /// Rates of entry `(i, j)`: `lam_r = sum_k theta_r[i, k] phi[k, j]`.
    pub fn rates(&self, i: usize, j: usize) -> Result<RatePair> {
        if i >= self.nrows() || j >= self.ncols() {
            return Err(Error::Dimension(format!(
                "entry ({i}, {j}) outside {}x{}",
                self.nrows(),
                self.ncols()
            )));
        }
        Ok(self.rates_unchecked(i, j))
    }

    #[inline]
    pub(crate) fn rates_unchecked(&self, i: usize, j: usize) -> RatePair {
        let mut lam1 = 0.0;
        let mut lam2 = 0.0;
        for k in 0..self.k() {
            let p = self.phi[[k, j]];
            lam1 += self.theta1[[i, k]] * p;
            lam2 += self.theta2[[i, k]] * p;
        }
        RatePair {
            lam1,
            lam2,
            lam_tot: lam1 + lam2,
        }
    }

    pub(crate) fn floor_positive(&mut self) {
        for x in self
            .theta1
            .iter_mut()
            .chain(self.theta2.iter_mut())
            .chain(self.phi.iter_mut())
        {
            if *x < POSITIVITY_FLOOR {
                *x = POSITIVITY_FLOOR;
            }
        }
    }
}

/// A draw of the full generative process for fixed factors.
#[derive(Clone, Debug)]
pub struct Simulated {
    pub data: BetaMatrix,
    pub y1: Array2<u64>,
    pub y2: Array2<u64>,
}

/// Draws counts `y_r ~ Pois(lam_r)` and values `Beta(eps1 + y1, eps2 + y2)`
/// for every entry. Entry `(i, j)` uses its own stream, so the result does
/// not depend on evaluation order.
pub fn simulate(state: &FactorState, hyper: &Hyperparams, seed: u64) -> Result<Simulated> {
    let (n, m) = (state.nrows(), state.ncols());
    let mut values = Array2::zeros((n, m));
    let mut y1 = Array2::zeros((n, m));
    let mut y2 = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            let mut rng = RngStream::new(seed, stream_key(StreamPhase::Simulate, 0, (i * m + j) as u64)?);
            let r = state.rates_unchecked(i, j);
            let c1 = sample_poisson(r.lam1, &mut rng)?;
            let c2 = sample_poisson(r.lam2, &mut rng)?;
            values[[i, j]] = sample_beta(hyper.eps1 + c1 as f64, hyper.eps2 + c2 as f64, &mut rng)?;
            y1[[i, j]] = c1;
            y2[[i, j]] = c2;
        }
    }
    Ok(Simulated {
        data: BetaMatrix::from_values(values)?,
        y1,
        y2,
    })
}

/// Factors from the priors, then data from [`simulate`].
pub fn generate(n: usize, m: usize, hyper: &Hyperparams, seed: u64) -> Result<(FactorState, Simulated)> {
    hyper.validate()?;
    let mut rng = RngStream::new(seed, stream_key(StreamPhase::Init, 0, 0)?);
    let state = FactorState::sample_prior(n, m, hyper, &mut rng)?;
    let sim = simulate(&state, hyper, seed)?;
    Ok((state, sim))
}

fn check_dncb_params(func: &'static str, e1: f64, e2: f64, l1: f64, l2: f64) -> Result<()> {
    if !(e1 > 0.0) || !(e2 > 0.0) || !e1.is_finite() || !e2.is_finite() {
        return Err(Error::domain(func, format!("shapes must be positive, got {e1}, {e2}")));
    }
    if !(l1 >= 0.0) || !(l2 >= 0.0) || !l1.is_finite() || !l2.is_finite() {
        return Err(Error::domain(
            func,
            format!("rates must be finite and >= 0, got {l1}, {l2}"),
        ));
    }
    Ok(())
}

/// Log density of `DNCB(e1, e2, l1, l2)` at `beta`:
///
/// ```text
/// ln Beta(beta; e1, e2) - (l1 + l2) + ln Psi2[e1 + e2; e1, e2; l1 beta, l2 (1 - beta)]
/// ```
pub fn dncb_log_pdf(beta: f64, e1: f64, e2: f64, l1: f64, l2: f64) -> Result<LogReal> {
    check_dncb_params("dncb_log_pdf", e1, e2, l1, l2)?;
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::domain(
            "dncb_log_pdf",
            format!("beta must lie in (0, 1), got {beta}"),
        ));
    }
    let comp = 1.0 - beta;
    let ln_beta_pdf = (e1 - 1.0) * beta.ln() + (e2 - 1.0) * comp.ln() - ln_beta(e1, e2);
    let psi = log_humbert_psi2(e1 + e2, e1, e2, l1 * beta, l2 * comp)?;
    Ok(LogReal::from_ln(ln_beta_pdf - (l1 + l2) + psi.ln()))
}

/// `E[beta]` under `DNCB(e1, e2, l1, l2)`:
///
/// ```text
/// e^{-l} [ (e1 / e) 1F1(e; e + 1; l) + l1 / (e + 1) 1F1(e + 1; e + 2; l) ]
/// ```
///
/// with `e = e1 + e2`, `l = l1 + l2`.
pub fn dncb_mean(e1: f64, e2: f64, l1: f64, l2: f64) -> Result<f64> {
    check_dncb_params("dncb_mean", e1, e2, l1, l2)?;
    let e = e1 + e2;
    let l = l1 + l2;
    let first = (e1 / e).ln() + kummer_1f1(e, e + 1.0, l)?.ln() - l;
    if l1 == 0.0 {
        return Ok(first.exp());
    }
    let second = l1.ln() - (e + 1.0).ln() + kummer_1f1(e + 1.0, e + 2.0, l)?.ln() - l;
    Ok(ln_add_exp(first, second).exp().min(1.0))
}

/// `E[beta | y1, y2] = (e1 + y1) / (e1 + e2 + y1 + y2)`.
pub fn conditional_mean(e1: f64, e2: f64, y1: u64, y2: u64) -> Result<f64> {
    if !(e1 > 0.0) || !(e2 > 0.0) {
        return Err(Error::domain(
            "conditional_mean",
            format!("shapes must be positive, got {e1}, {e2}"),
        ));
    }
    Ok((e1 + y1 as f64) / (e1 + e2 + y1 as f64 + y2 as f64))
}

/// `rho[i, k] = theta1[i, k] / (theta1[i, k] + theta2[i, k])`.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub rho: Array2<f64>,
}

impl Embedding {
    /// Elementwise mean of several embeddings of equal shape.
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a Embedding>) -> Option<Embedding> {
        let mut iter = items.into_iter();
        let first = iter.next()?;
        let mut acc = first.rho.clone();
        let mut count = 1.0;
        for e in iter {
            acc += &e.rho;
            count += 1.0;
        }
        acc /= count;
        Some(Embedding { rho: acc })
    }
}

pub fn embedding(state: &FactorState) -> Embedding {
    let mut rho = state.theta1.clone();
    rho.zip_mut_with(&state.theta2, |t1, &t2| *t1 = *t1 / (*t1 + t2));
    Embedding { rho }
}
