//! Auxiliary-variable Gibbs sampler.
//!
//! One sweep draws, in order,
//!
//! 1. held-out values `beta ~ Beta(eps1 + y1, eps2 + y2)` (masked cells only),
//! 2. gamma sums `g ~ Gam(eps1 + eps2 + y1 + y2, 1)`, split as
//!    `g1 = beta g`, `g2 = (1 - beta) g`,
//! 3. counts `y_r ~ Bessel(eps_r - 1, 2 sqrt(g_r lam_r))`,
//! 4. multinomial subcounts of each `y_r` over the `K` components,
//! 5. `theta1`, `theta2`, then `phi`, from their gamma conditionals.
//!
//! Subcounts are never stored per entry. Each entry's draw is added straight
//! into the sufficient statistics `sum_j y_r[i, j, k]` and
//! `sum_i sum_r y_r[i, j, k]`.
//!
//! Every random draw comes from a stream keyed by (phase, sweep, item), so a
//! chain depends on the seed only, not on the thread count or scheduling.

use std::ops::Range;

use log::warn;
use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::HoldoutMask;
use crate::model::{embedding, BetaMatrix, Embedding, FactorState, Hyperparams, POSITIVITY_FLOOR};
use crate::randist::{
    sample_bessel, sample_beta, sample_gamma, sample_multinomial_into, sample_poisson, stream_key, BesselParams,
    RngStream, StreamPhase, MAX_STREAM_STEP,
};
use crate::specfun::ln_gamma;

/// Rate cap used to redraw an entry whose counts overflow 32 bits.
pub const OVERFLOW_RATE_CAP: f64 = 1e12;

/// Rows handled by one task when accumulating subcounts.
const ROW_CHUNK: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplerConfig {
    pub burnin: usize,
    /// Sweeps after burn-in.
    pub total: usize,
    pub thin: usize,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            burnin: 1000,
            total: 2000,
            thin: 20,
            seed: 0,
            parallel: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total == 0 {
            return Err(Error::Config("total must be at least 1".into()));
        }
        if self.thin == 0 || self.thin > self.total {
            return Err(Error::Config(format!(
                "thin must lie in [1, total = {}], got {}",
                self.total, self.thin
            )));
        }
        if (self.burnin + self.total) as u64 > MAX_STREAM_STEP {
            return Err(Error::Config(format!(
                "burnin + total must not exceed {MAX_STREAM_STEP}"
            )));
        }
        Ok(())
    }

    pub fn n_sweeps(&self) -> usize {
        self.burnin + self.total
    }

    /// Snapshots are taken at sweeps `burnin + thin`, `burnin + 2 thin`, ...
    pub fn n_snapshots(&self) -> usize {
        self.total / self.thin
    }

    pub fn is_saved(&self, sweep: usize) -> bool {
        sweep > self.burnin && (sweep - self.burnin).is_multiple_of(self.thin)
    }
}

/// Latent variables of the augmentation. Sweeps are 1-based.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxState {
    /// Current values: observed cells as given, held-out cells as last imputed.
    pub beta: Array2<f64>,
    pub y1: Array2<u32>,
    pub y2: Array2<u32>,
    pub gamma_tot: Array2<f64>,
    pub gamma1: Array2<f64>,
    pub gamma2: Array2<f64>,
    /// `sum_j y1[i, j, k]`, shape `N x K`.
    pub theta_counts1: Array2<u64>,
    /// `sum_j y2[i, j, k]`, shape `N x K`.
    pub theta_counts2: Array2<u64>,
    /// `sum_i (y1[i, j, k] + y2[i, j, k])`, shape `K x M`.
    pub phi_counts: Array2<u64>,
}

impl AuxState {
    /// Zero counts and gamma variables around the given values.
    pub fn new(beta: Array2<f64>, k: usize) -> Self {
        let (n, m) = beta.dim();
        AuxState {
            beta,
            y1: Array2::zeros((n, m)),
            y2: Array2::zeros((n, m)),
            gamma_tot: Array2::zeros((n, m)),
            gamma1: Array2::zeros((n, m)),
            gamma2: Array2::zeros((n, m)),
            theta_counts1: Array2::zeros((n, k)),
            theta_counts2: Array2::zeros((n, k)),
            phi_counts: Array2::zeros((k, m)),
        }
    }

    pub fn nrows(&self) -> usize {
        self.beta.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.beta.ncols()
    }

    fn check_dims(&self, state: &FactorState) -> Result<()> {
        let k = state.k();
        if self.beta.dim() != (state.nrows(), state.ncols())
            || self.theta_counts1.dim() != (state.nrows(), k)
            || self.phi_counts.dim() != (k, state.ncols())
        {
            return Err(Error::Dimension(format!(
                "aux state {:?} with K = {} does not match factors {}x{} with K = {k}",
                self.beta.dim(),
                self.theta_counts1.ncols(),
                state.nrows(),
                state.ncols()
            )));
        }
        Ok(())
    }
}

/// Which sweep a draw belongs to. Determines the random streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SweepCtx {
    pub seed: u64,
    pub sweep: u64,
    pub parallel: bool,
}

impl SweepCtx {
    fn rng(&self, phase: StreamPhase, index: usize) -> Result<RngStream> {
        Ok(RngStream::new(self.seed, stream_key(phase, self.sweep, index as u64)?))
    }
}

fn map_range<T, F>(n: usize, parallel: bool, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

/// Draws every masked cell from `Beta(eps1 + y1, eps2 + y2)`.
pub fn impute_masked(aux: &mut AuxState, cells: &[(usize, usize)], hyper: &Hyperparams, ctx: SweepCtx) -> Result<()> {
    let m = aux.ncols();
    for &(i, j) in cells {
        let mut rng = ctx.rng(StreamPhase::Impute, i * m + j)?;
        aux.beta[[i, j]] = sample_beta(
            hyper.eps1 + aux.y1[[i, j]] as f64,
            hyper.eps2 + aux.y2[[i, j]] as f64,
            &mut rng,
        )?;
    }
    Ok(())
}

/// Draws `gamma_tot ~ Gam(eps_tot + y1 + y2, 1)` and splits it by the current
/// values.
pub fn sample_gamma_aux(aux: &mut AuxState, hyper: &Hyperparams, ctx: SweepCtx) -> Result<()> {
    let (n, m) = aux.beta.dim();
    let eps_tot = hyper.eps_tot();
    let rows = map_range(n, ctx.parallel, |i| {
        (0..m)
            .map(|j| {
                let mut rng = ctx.rng(StreamPhase::GammaTot, i * m + j)?;
                let shape = eps_tot + aux.y1[[i, j]] as f64 + aux.y2[[i, j]] as f64;
                Ok(sample_gamma(shape, 1.0, &mut rng)?.max(f64::MIN_POSITIVE))
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    for (i, row) in rows.into_iter().enumerate() {
        for (j, g) in row.into_iter().enumerate() {
            let b = aux.beta[[i, j]];
            aux.gamma_tot[[i, j]] = g;
            aux.gamma1[[i, j]] = b * g;
            aux.gamma2[[i, j]] = (1.0 - b) * g;
        }
    }
    Ok(())
}

/// Draws `y_r ~ Bessel(eps_r - 1, 2 sqrt(gamma_r lam_r))` for every entry.
pub fn sample_counts(aux: &mut AuxState, state: &FactorState, hyper: &Hyperparams, ctx: SweepCtx) -> Result<()> {
    sample_counts_with(aux, state, hyper.eps1, hyper.eps2, ctx)
}

fn sample_counts_with(aux: &mut AuxState, state: &FactorState, eps1: f64, eps2: f64, ctx: SweepCtx) -> Result<()> {
    aux.check_dims(state)?;
    let (n, m) = aux.beta.dim();
    let rows = map_range(n, ctx.parallel, |i| {
        (0..m)
            .map(|j| {
                let mut rng = ctx.rng(StreamPhase::Counts, i * m + j)?;
                let r = state.rates_unchecked(i, j);
                let (g1, g2) = (aux.gamma1[[i, j]], aux.gamma2[[i, j]]);
                let draw = |lam1: f64, lam2: f64, rng: &mut RngStream| -> Result<(u64, u64)> {
                    let p1 = BesselParams::new(eps1 - 1.0, 2.0 * (g1 * lam1).sqrt())?;
                    let p2 = BesselParams::new(eps2 - 1.0, 2.0 * (g2 * lam2).sqrt())?;
                    Ok((sample_bessel(p1, rng), sample_bessel(p2, rng)))
                };
                let (mut c1, mut c2) = draw(r.lam1, r.lam2, &mut rng)?;
                if c1.saturating_add(c2) > u32::MAX as u64 {
                    warn!(
                        "counts at ({i}, {j}) overflow 32 bits; redrawing with rates capped at {OVERFLOW_RATE_CAP:e}"
                    );
                    (c1, c2) = draw(r.lam1.min(OVERFLOW_RATE_CAP), r.lam2.min(OVERFLOW_RATE_CAP), &mut rng)?;
                    if c1.saturating_add(c2) > u32::MAX as u64 {
                        return Err(Error::domain(
                            "sample_counts",
                            format!("counts at ({i}, {j}) overflow 32 bits even with capped rates"),
                        ));
                    }
                }
                Ok((c1 as u32, c2 as u32))
            })
            .collect::<Result<Vec<(u32, u32)>>>()
    })?;
    for (i, row) in rows.into_iter().enumerate() {
        for (j, (c1, c2)) in row.into_iter().enumerate() {
            aux.y1[[i, j]] = c1;
            aux.y2[[i, j]] = c2;
        }
    }
    Ok(())
}

struct ChunkCounts {
    rows: Range<usize>,
    theta1: Array2<u64>,
    theta2: Array2<u64>,
    phi: Array2<u64>,
}

/// Splits each count over the components with weights `theta_r[i, k] phi[k, j]`
/// and accumulates the sufficient statistics of the factor updates.
pub fn thin_counts(aux: &mut AuxState, state: &FactorState, ctx: SweepCtx) -> Result<()> {
    aux.check_dims(state)?;
    let (n, m) = aux.beta.dim();
    let k = state.k();
    let chunks = n.div_ceil(ROW_CHUNK);
    let aux_ref = &*aux;
    let parts = map_range(chunks, ctx.parallel, |c| {
        let rows = c * ROW_CHUNK..((c + 1) * ROW_CHUNK).min(n);
        let mut part = ChunkCounts {
            theta1: Array2::zeros((rows.len(), k)),
            theta2: Array2::zeros((rows.len(), k)),
            phi: Array2::zeros((k, m)),
            rows: rows.clone(),
        };
        let mut weights = vec![0.0; k];
        let mut sub = vec![0u64; k];
        for i in rows.clone() {
            for j in 0..m {
                let counts = [aux_ref.y1[[i, j]], aux_ref.y2[[i, j]]];
                if counts == [0, 0] {
                    continue;
                }
                let mut rng = ctx.rng(StreamPhase::Thin, i * m + j)?;
                for (r, &y) in counts.iter().enumerate() {
                    if y == 0 {
                        continue;
                    }
                    let theta = if r == 0 { &state.theta1 } else { &state.theta2 };
                    for (kk, w) in weights.iter_mut().enumerate() {
                        *w = theta[[i, kk]] * state.phi[[kk, j]];
                    }
                    sample_multinomial_into(y as u64, &weights, &mut sub, &mut rng)?;
                    let acc = if r == 0 { &mut part.theta1 } else { &mut part.theta2 };
                    for (kk, &s) in sub.iter().enumerate() {
                        acc[[i - rows.start, kk]] += s;
                        part.phi[[kk, j]] += s;
                    }
                }
            }
        }
        Ok(part)
    })?;
    aux.phi_counts.fill(0);
    for part in parts {
        aux.theta_counts1
            .slice_mut(ndarray::s![part.rows.clone(), ..])
            .assign(&part.theta1);
        aux.theta_counts2
            .slice_mut(ndarray::s![part.rows, ..])
            .assign(&part.theta2);
        aux.phi_counts += &part.phi;
    }
    Ok(())
}

/// Conjugate updates: both `theta` matrices given the current `phi`, then
/// `phi` given the new `theta`.
pub fn update_factors(state: &mut FactorState, aux: &AuxState, hyper: &Hyperparams, ctx: SweepCtx) -> Result<()> {
    aux.check_dims(state)?;
    let (n, m, k) = (state.nrows(), state.ncols(), state.k());
    let phi_sums = state.phi.sum_axis(Axis(1));
    for r in 0..2 {
        let counts = if r == 0 { &aux.theta_counts1 } else { &aux.theta_counts2 };
        let rows = map_range(n, ctx.parallel, |i| {
            (0..k)
                .map(|kk| {
                    let mut rng = ctx.rng(StreamPhase::Theta, (r * n + i) * k + kk)?;
                    sample_gamma(hyper.a0 + counts[[i, kk]] as f64, hyper.b0 + phi_sums[kk], &mut rng)
                })
                .collect::<Result<Vec<f64>>>()
        })?;
        let theta = if r == 0 { &mut state.theta1 } else { &mut state.theta2 };
        for (i, row) in rows.into_iter().enumerate() {
            for (kk, x) in row.into_iter().enumerate() {
                theta[[i, kk]] = x.max(POSITIVITY_FLOOR);
            }
        }
    }
    let theta_sums = state.theta1.sum_axis(Axis(0)) + state.theta2.sum_axis(Axis(0));
    let rows = map_range(k, ctx.parallel, |kk| {
        (0..m)
            .map(|j| {
                let mut rng = ctx.rng(StreamPhase::Phi, kk * m + j)?;
                sample_gamma(
                    hyper.e0 + aux.phi_counts[[kk, j]] as f64,
                    hyper.f0 + theta_sums[kk],
                    &mut rng,
                )
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    for (kk, row) in rows.into_iter().enumerate() {
        for (j, x) in row.into_iter().enumerate() {
            state.phi[[kk, j]] = x;
        }
    }
    state.floor_positive();
    Ok(())
}

/// Log joint density of values, counts and factors at the current state
/// (gamma variables and subcounts integrated out). Held-out cells enter at
/// their imputed values.
pub fn log_joint(state: &FactorState, aux: &AuxState, hyper: &Hyperparams, parallel: bool) -> Result<f64> {
    aux.check_dims(state)?;
    let (n, m) = aux.beta.dim();
    let ln_b = |a: f64, b: f64| ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
    let ln_pois = |y: u32, lam: f64| {
        if y == 0 {
            -lam
        } else {
            y as f64 * lam.ln() - lam - ln_gamma(y as f64 + 1.0)
        }
    };
    let rows = map_range(n, parallel, |i| {
        let mut acc = 0.0;
        for j in 0..m {
            let b = aux.beta[[i, j]];
            let (c1, c2) = (aux.y1[[i, j]], aux.y2[[i, j]]);
            let (a1, a2) = (hyper.eps1 + c1 as f64, hyper.eps2 + c2 as f64);
            let r = state.rates_unchecked(i, j);
            acc += (a1 - 1.0) * b.ln() + (a2 - 1.0) * (1.0 - b).ln() - ln_b(a1, a2);
            acc += ln_pois(c1, r.lam1) + ln_pois(c2, r.lam2);
        }
        Ok(acc)
    })?;
    let ln_gam = |x: f64, a: f64, b: f64| a * b.ln() - ln_gamma(a) + (a - 1.0) * x.ln() - b * x;
    let mut total: f64 = rows.iter().sum();
    total += state
        .theta1
        .iter()
        .chain(state.theta2.iter())
        .map(|&x| ln_gam(x, hyper.a0, hyper.b0))
        .sum::<f64>();
    total += state.phi.iter().map(|&x| ln_gam(x, hyper.e0, hyper.f0)).sum::<f64>();
    Ok(total)
}

/// Deliberate defects for checking that the joint-distribution test has power.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Corruption {
    #[default]
    None,
    /// Use `eps2` for the first count and `eps1` for the second.
    SwapEpsInCounts,
}

fn sweep(
    state: &mut FactorState,
    aux: &mut AuxState,
    masked: &[(usize, usize)],
    hyper: &Hyperparams,
    ctx: SweepCtx,
    corruption: Corruption,
) -> Result<()> {
    impute_masked(aux, masked, hyper, ctx)?;
    sample_gamma_aux(aux, hyper, ctx)?;
    match corruption {
        Corruption::None => sample_counts(aux, state, hyper, ctx)?,
        Corruption::SwapEpsInCounts => sample_counts_with(aux, state, hyper.eps2, hyper.eps1, ctx)?,
    }
    thin_counts(aux, state, ctx)?;
    update_factors(state, aux, hyper, ctx)
}

/// Factors from the priors and counts `y_r ~ Pois(lam_r)`.
fn initial_state(beta: Array2<f64>, hyper: &Hyperparams, seed: u64) -> Result<(FactorState, AuxState)> {
    let (n, m) = beta.dim();
    let mut rng = RngStream::new(seed, stream_key(StreamPhase::Init, 1, 0)?);
    let state = FactorState::sample_prior(n, m, hyper, &mut rng)?;
    let mut aux = AuxState::new(beta, hyper.k);
    for i in 0..n {
        for j in 0..m {
            let mut rng = RngStream::new(seed, stream_key(StreamPhase::Init, 2, (i * m + j) as u64)?);
            let r = state.rates_unchecked(i, j);
            let c1 = sample_poisson(r.lam1, &mut rng)?;
            let c2 = sample_poisson(r.lam2, &mut rng)?;
            aux.y1[[i, j]] = c1.min(u32::MAX as u64 / 2) as u32;
            aux.y2[[i, j]] = c2.min(u32::MAX as u64 / 2) as u32;
        }
    }
    Ok((state, aux))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub sweep: usize,
    pub state: FactorState,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TracePoint {
    pub sweep: usize,
    pub log_joint: f64,
}

/// Saved factor states of one run. The random streams are determined by
/// `config.seed`, so the chain can be regenerated from its config.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorChain {
    pub snapshots: Vec<Snapshot>,
    pub config: SamplerConfig,
    pub hyper: Hyperparams,
    pub trace: Vec<TracePoint>,
}

impl PosteriorChain {
    /// Checks shapes and the snapshot schedule.
    pub fn validate(&self) -> Result<()> {
        let first = self
            .snapshots
            .first()
            .ok_or_else(|| Error::Config("posterior chain has no snapshots".into()))?;
        let (n, m, k) = (first.state.nrows(), first.state.ncols(), first.state.k());
        if k != self.hyper.k {
            return Err(Error::Dimension(format!(
                "snapshots have K = {k}, hyperparameters say {}",
                self.hyper.k
            )));
        }
        let mut prev = self.config.burnin;
        for s in &self.snapshots {
            let st = &s.state;
            if (st.nrows(), st.ncols(), st.k()) != (n, m, k) {
                return Err(Error::Dimension(format!(
                    "snapshot at sweep {} has a different shape",
                    s.sweep
                )));
            }
            if s.sweep <= prev || !self.config.is_saved(s.sweep) {
                return Err(Error::Config(format!(
                    "snapshot sweep {} breaks the schedule (burnin {}, thin {})",
                    s.sweep, self.config.burnin, self.config.thin
                )));
            }
            prev = s.sweep;
        }
        Ok(())
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.snapshots.first().map(|s| (s.state.nrows(), s.state.ncols()))
    }

    /// Mean over snapshots of the per-snapshot `rho`.
    pub fn mean_embedding(&self) -> Option<Embedding> {
        let parts: Vec<Embedding> = self.snapshots.iter().map(|s| embedding(&s.state)).collect();
        Embedding::mean(&parts)
    }
}

/// Runs the sampler on `beta`, imputing the cells of `mask` at every sweep.
pub fn run(
    beta: &BetaMatrix,
    mask: Option<&HoldoutMask>,
    hyper: &Hyperparams,
    config: &SamplerConfig,
) -> Result<PosteriorChain> {
    hyper.validate()?;
    config.validate()?;
    let (n, m) = (beta.nrows(), beta.ncols());
    if n == 0 || m == 0 {
        return Err(Error::Dimension("empty data matrix".into()));
    }
    if (n * m) as u64 > u32::MAX as u64 {
        return Err(Error::Dimension(format!(
            "{n}x{m} has more entries than the stream layout allows"
        )));
    }
    let masked: Vec<(usize, usize)> = match mask {
        Some(mk) => {
            if mk.dims() != (n, m) {
                return Err(Error::Dimension(format!(
                    "mask is for {:?}, data is {n}x{m}",
                    mk.dims()
                )));
            }
            mk.cells().to_vec()
        }
        None => Vec::new(),
    };
    let mut values = beta.values().clone();
    // held-out values must never be read
    for &(i, j) in &masked {
        values[[i, j]] = f64::NAN;
    }
    let (mut state, mut aux) = initial_state(values, hyper, config.seed)?;
    let mut snapshots = Vec::with_capacity(config.n_snapshots());
    let mut trace = Vec::with_capacity(config.n_sweeps());
    for s in 1..=config.n_sweeps() {
        let ctx = SweepCtx {
            seed: config.seed,
            sweep: s as u64,
            parallel: config.parallel,
        };
        sweep(&mut state, &mut aux, &masked, hyper, ctx, Corruption::None)?;
        trace.push(TracePoint {
            sweep: s,
            log_joint: log_joint(&state, &aux, hyper, config.parallel)?,
        });
        if config.is_saved(s) {
            snapshots.push(Snapshot {
                sweep: s,
                state: state.clone(),
            });
        }
        if s % 500 == 0 {
            log::debug!("sweep {s}/{}", config.n_sweeps());
        }
    }
    Ok(PosteriorChain {
        snapshots,
        config: config.clone(),
        hyper: hyper.clone(),
        trace,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GewekeConfig {
    pub n: usize,
    pub m: usize,
    /// Samples per arm.
    pub samples: usize,
    /// Sweeps discarded before the successive-conditional arm is recorded.
    pub burnin: usize,
    /// Sweeps between recorded successive-conditional samples.
    pub thin: usize,
    /// Batches for the batch-means standard error of the chain arm.
    pub batches: usize,
    pub seed: u64,
    pub corruption: Corruption,
}

impl Default for GewekeConfig {
    fn default() -> Self {
        GewekeConfig {
            n: 3,
            m: 4,
            samples: 10_000,
            burnin: 200,
            thin: 20,
            batches: 50,
            seed: 0,
            corruption: Corruption::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GewekeStat {
    pub name: String,
    pub forward_mean: f64,
    pub forward_se: f64,
    pub chain_mean: f64,
    pub chain_se: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GewekeReport {
    pub stats: Vec<GewekeStat>,
}

impl GewekeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.stats.iter().map(|s| s.z.abs()).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GewekeStat> {
        self.stats.iter().max_by(|a, b| a.z.abs().total_cmp(&b.z.abs()))
    }

    pub fn get(&self, name: &str) -> Option<&GewekeStat> {
        self.stats.iter().find(|s| s.name == name)
    }
}

fn tracked_names(n: usize, m: usize, k: usize) -> Vec<String> {
    let mut base = Vec::new();
    for name in ["theta1", "theta2"] {
        for i in 0..n {
            for kk in 0..k {
                base.push(format!("{name}[{i},{kk}]"));
            }
        }
    }
    for kk in 0..k {
        for j in 0..m {
            base.push(format!("phi[{kk},{j}]"));
        }
    }
    for name in ["y1", "y2", "beta"] {
        for i in 0..n {
            for j in 0..m {
                base.push(format!("{name}[{i},{j}]"));
            }
        }
    }
    let squares: Vec<String> = base.iter().map(|b| format!("{b}^2")).collect();
    base.extend(squares);
    base
}

fn tracked_values(state: &FactorState, y1: &Array2<u32>, y2: &Array2<u32>, beta: &Array2<f64>, out: &mut Vec<f64>) {
    out.clear();
    out.extend(state.theta1.iter().chain(state.theta2.iter()).chain(state.phi.iter()));
    out.extend(y1.iter().map(|&y| y as f64));
    out.extend(y2.iter().map(|&y| y as f64));
    out.extend(beta.iter());
    let len = out.len();
    for t in 0..len {
        out.push(out[t] * out[t]);
    }
}

/// Joint-distribution test of the sampler.
///
/// The forward arm draws factors, counts and values independently from the
/// model. The chain arm alternates sweeps of the sampler with redraws of
/// every value given the counts (the imputation step with all cells held out).
/// Both arms target the same joint law, so the first and second moments of
/// every factor entry, count and value must agree. `z` compares the two means
/// with an iid standard error for the forward arm and a batch-means error for
/// the chain arm.
pub fn geweke_check(hyper: &Hyperparams, cfg: &GewekeConfig) -> Result<GewekeReport> {
    hyper.validate()?;
    let (n, m, k) = (cfg.n, cfg.m, hyper.k);
    if n == 0 || m == 0 || cfg.samples < 2 || cfg.thin == 0 {
        return Err(Error::Config(
            "geweke_check needs nonempty dims, samples >= 2, thin >= 1".into(),
        ));
    }
    if cfg.batches < 2 || !cfg.samples.is_multiple_of(cfg.batches) {
        return Err(Error::Config(format!(
            "samples ({}) must split into batches ({}) evenly, with at least two batches",
            cfg.samples, cfg.batches
        )));
    }
    if (cfg.burnin + cfg.samples * cfg.thin) as u64 > MAX_STREAM_STEP {
        return Err(Error::Config("geweke chain too long for the stream layout".into()));
    }
    let names = tracked_names(n, m, k);
    let dim = names.len();

    let forward = map_range(cfg.samples, true, |s| {
        let mut rng = RngStream::new(cfg.seed, stream_key(StreamPhase::Replicate, 0, s as u64)?);
        let state = FactorState::sample_prior(n, m, hyper, &mut rng)?;
        let mut y1 = Array2::zeros((n, m));
        let mut y2 = Array2::zeros((n, m));
        let mut beta = Array2::zeros((n, m));
        for i in 0..n {
            for j in 0..m {
                let r = state.rates_unchecked(i, j);
                let c1 = sample_poisson(r.lam1, &mut rng)?;
                let c2 = sample_poisson(r.lam2, &mut rng)?;
                beta[[i, j]] = sample_beta(hyper.eps1 + c1 as f64, hyper.eps2 + c2 as f64, &mut rng)?;
                y1[[i, j]] = u32::try_from(c1).map_err(|_| Error::domain("geweke_check", "count overflow"))?;
                y2[[i, j]] = u32::try_from(c2).map_err(|_| Error::domain("geweke_check", "count overflow"))?;
            }
        }
        let mut v = Vec::with_capacity(dim);
        tracked_values(&state, &y1, &y2, &beta, &mut v);
        Ok(v)
    })?;

    let (mut state, mut aux) = initial_state(Array2::from_elem((n, m), 0.5), hyper, cfg.seed)?;
    let all: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    let mut chain = Vec::with_capacity(cfg.samples);
    let mut v = Vec::with_capacity(dim);
    let steps = cfg.burnin + cfg.samples * cfg.thin;
    for s in 1..=steps {
        let ctx = SweepCtx {
            seed: cfg.seed,
            sweep: s as u64,
            parallel: false,
        };
        sweep(&mut state, &mut aux, &all, hyper, ctx, cfg.corruption)?;
        if s > cfg.burnin && (s - cfg.burnin).is_multiple_of(cfg.thin) {
            tracked_values(&state, &aux.y1, &aux.y2, &aux.beta, &mut v);
            chain.push(v.clone());
        }
    }

    let len = cfg.samples as f64;
    let batch = cfg.samples / cfg.batches;
    let stats = (0..dim)
        .map(|t| {
            let fm = forward.iter().map(|x| x[t]).sum::<f64>() / len;
            let fv = forward.iter().map(|x| (x[t] - fm).powi(2)).sum::<f64>() / (len - 1.0);
            let cm = chain.iter().map(|x| x[t]).sum::<f64>() / len;
            let means: Vec<f64> = chain
                .chunks(batch)
                .map(|c| c.iter().map(|x| x[t]).sum::<f64>() / batch as f64)
                .collect();
            let b = means.len() as f64;
            let bv = means.iter().map(|x| (x - cm).powi(2)).sum::<f64>() / (b - 1.0);
            let forward_se = (fv / len).sqrt();
            let chain_se = (bv / b).sqrt();
            let denom = (forward_se.powi(2) + chain_se.powi(2)).sqrt();
            let z = if denom > 0.0 { (fm - cm) / denom } else { 0.0 };
            GewekeStat {
                name: names[t].clone(),
                forward_mean: fm,
                forward_se,
                chain_mean: cm,
                chain_se,
                z,
            }
        })
        .collect();
    Ok(GewekeReport { stats })
}
