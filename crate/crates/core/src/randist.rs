//! Exact samplers used by the generative model and the Gibbs sweep.
//!
//! All samplers take any [`rand::Rng`]; reproducible work uses
//! [`RngStream`], a counter-based ChaCha stream keyed by `(seed, stream_id)`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};

use crate::error::{Error, Result};
use crate::specfun::{ln_gamma, log_bessel_i};

/// Counter-based random stream. The key is derived from `seed`, the ChaCha
/// nonce is `stream_id` and the block counter advances with every draw, so a
/// `(seed, stream_id)` pair always yields the same sequence and distinct
/// stream ids never share blocks.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    core: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(b"dncb-mf\0");
        let mut core = ChaCha8Rng::from_seed(key);
        core.set_stream(stream_id);
        RngStream { seed, stream_id, core }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of 32-bit words consumed so far.
    pub fn position(&self) -> u128 {
        self.core.get_word_pos()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.core.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.core.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.core.fill_bytes(dst)
    }
}

/// What a stream is used for. Together with a step (sweep) number and an
/// item index it forms a unique stream id, see [`stream_key`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum StreamPhase {
    Init = 1,
    Simulate = 2,
    Mask = 3,
    Impute = 4,
    GammaTot = 5,
    Counts = 6,
    Thin = 7,
    Theta = 8,
    Phi = 9,
    Replicate = 10,
}

/// Largest step number representable in a stream id.
pub const MAX_STREAM_STEP: u64 = (1 << 28) - 1;

/// Packs `(phase, step, index)` into a stream id: 4 bits of phase, 28 bits
/// of step and 32 bits of index.
pub fn stream_key(phase: StreamPhase, step: u64, index: u64) -> Result<u64> {
    if step > MAX_STREAM_STEP || index > u32::MAX as u64 {
        return Err(Error::Config(format!(
            "stream key out of range: step {step} (max {MAX_STREAM_STEP}), index {index} (max {})",
            u32::MAX
        )));
    }
    Ok(((phase as u64) << 60) | (step << 32) | index)
}

/// Uniform draw in the open interval (0, 1).
#[inline]
fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Gamma draw with shape-rate parametrization (mean `shape / rate`).
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0) || !(rate > 0.0) || !shape.is_finite() || !rate.is_finite() {
        return Err(Error::domain(
            "sample_gamma",
            format!("shape and rate must be positive, got {shape}, {rate}"),
        ));
    }
    let dist = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::domain("sample_gamma", e.to_string()))?;
    Ok(dist.sample(rng))
}

/// Beta draw realized as `g1 / (g1 + g2)` from two unit-rate gamma draws.
/// The result is kept strictly inside (0, 1).
pub fn sample_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    loop {
        let g1 = sample_gamma(a, 1.0, rng)?;
        let g2 = sample_gamma(b, 1.0, rng)?;
        let s = g1 + g2;
        if s > 0.0 && s.is_finite() {
            return Ok((g1 / s).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0));
        }
    }
}

/// Poisson draw; `lambda == 0` returns 0 without touching the stream.
pub fn sample_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> Result<u64> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::domain(
            "sample_poisson",
            format!("rate must be finite and >= 0, got {lambda}"),
        ));
    }
    if lambda == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(lambda).map_err(|e| Error::domain("sample_poisson", e.to_string()))?;
    Ok(dist.sample(rng) as u64)
}

/// Multinomial draw of `n` trials over categories proportional to `weights`.
pub fn sample_multinomial<R: Rng + ?Sized>(n: u64, weights: &[f64], rng: &mut R) -> Result<Vec<u64>> {
    let mut out = vec![0; weights.len()];
    sample_multinomial_into(n, weights, &mut out, rng)?;
    Ok(out)
}

/// In-place form of [`sample_multinomial`]; `out` must have the same length
/// as `weights` and is overwritten.
pub fn sample_multinomial_into<R: Rng + ?Sized>(n: u64, weights: &[f64], out: &mut [u64], rng: &mut R) -> Result<()> {
    const F: &str = "sample_multinomial";
    if weights.is_empty() {
        return Err(Error::domain(F, "empty weight vector"));
    }
    if out.len() != weights.len() {
        return Err(Error::domain(F, "output length differs from weight length"));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::domain(F, format!("weights must be finite and >= 0, got {w}")));
    }
    if n > 0 && !(weights.iter().sum::<f64>() > 0.0) {
        return Err(Error::domain(F, "weights sum to zero"));
    }
    out.fill(0);
    let k = weights.len();
    let mut remaining = n;
    // tail mass of the categories not yet visited
    let mut rest: f64 = weights.iter().sum();
    for (i, &w) in weights.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if i == k - 1 {
            out[i] = remaining;
            break;
        }
        let p = if rest > 0.0 { (w / rest).clamp(0.0, 1.0) } else { 0.0 };
        let x = Binomial::new(remaining, p)
            .map_err(|e| Error::domain(F, e.to_string()))?
            .sample(rng);
        out[i] = x;
        remaining -= x;
        rest = weights[i + 1..].iter().sum();
    }
    Ok(())
}

/// DNCB draw through its Poisson-randomized beta representation:
/// `y_r ~ Pois(l_r)`, then `Beta(e1 + y1, e2 + y2)`.
pub fn sample_dncb<R: Rng + ?Sized>(e1: f64, e2: f64, l1: f64, l2: f64, rng: &mut R) -> Result<f64> {
    if !(e1 > 0.0) || !(e2 > 0.0) {
        return Err(Error::domain(
            "sample_dncb",
            format!("shapes must be positive, got {e1}, {e2}"),
        ));
    }
    let y1 = sample_poisson(l1, rng)?;
    let y2 = sample_poisson(l2, rng)?;
    sample_beta(e1 + y1 as f64, e2 + y2 as f64, rng)
}

/// Parameters of the Bessel distribution
/// `Bes(y; v, a) = (a/2)^{2y+v} / (y! Gamma(y+v+1) I_v(a))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BesselParams {
    v: f64,
    a: f64,
}

impl BesselParams {
    pub fn new(v: f64, a: f64) -> Result<Self> {
        if !(v > -1.0) || !v.is_finite() {
            return Err(Error::domain("BesselParams", format!("order must be > -1, got {v}")));
        }
        if !(a >= 0.0) || !a.is_finite() {
            return Err(Error::domain("BesselParams", format!("argument must be >= 0, got {a}")));
        }
        Ok(BesselParams { v, a })
    }

    pub fn v(&self) -> f64 {
        self.v
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    /// `(a/2) I_{v+1}(a) / I_v(a)`.
    pub fn mean(&self) -> Result<f64> {
        if self.a == 0.0 {
            return Ok(0.0);
        }
        let hi = log_bessel_i(self.v + 1.0, self.a)?.ln();
        let lo = log_bessel_i(self.v, self.a)?.ln();
        Ok(((0.5 * self.a).ln() + hi - lo).exp())
    }

    /// Normalized log probability of `y`.
    pub fn ln_pmf(&self, y: u64) -> Result<f64> {
        if self.a == 0.0 {
            return Ok(if y == 0 { 0.0 } else { f64::NEG_INFINITY });
        }
        let yf = y as f64;
        Ok((2.0 * yf + self.v) * (0.5 * self.a).ln()
            - ln_gamma(yf + 1.0)
            - ln_gamma(yf + self.v + 1.0)
            - log_bessel_i(self.v, self.a)?.ln())
    }

    fn ratio(&self, y: u64) -> f64 {
        let yf = y as f64;
        0.25 * self.a * self.a / ((yf + 1.0) * (yf + self.v + 1.0))
    }

    // smallest y with p(y+1) <= p(y)
    fn mode(&self) -> u64 {
        let m0 = 0.5 * (self.v.hypot(self.a) - (self.v + 2.0));
        let mut m = if m0 > 0.0 { m0.ceil() as u64 } else { 0 };
        while m > 0 && self.ratio(m - 1) <= 1.0 {
            m -= 1;
        }
        while self.ratio(m) > 1.0 {
            m += 1;
        }
        m
    }
}

/// Arguments below this use inverse-CDF sampling (the mode is then 0 unless
/// the order is within a hair of -1).
pub const BESSEL_INVERSE_MAX_ARG: f64 = 1e-2;

/// Exact sampler for the Bessel distribution.
///
/// The pmf is log-concave in `y`, so it is dominated by a flat top over a
/// window around the mode and geometric tails whose decay is the pmf ratio at
/// the window edges. Acceptance compares unnormalized log-pmf values, so no
/// Bessel function is evaluated. Tiny arguments instead use inversion over
/// the pmf recursion.
#[derive(Clone, Debug)]
pub struct BesselSampler {
    params: BesselParams,
    kind: BesselKind,
}

#[derive(Clone, Debug)]
enum BesselKind {
    Zero,
    Inverse { cdf: Vec<f64> },
    Rejection(Envelope),
}

#[derive(Clone, Debug)]
struct Envelope {
    two_ln_half_a: f64,
    ln_norm: f64, // ln_gamma(m+1) + ln_gamma(m+v+1) - 2m ln(a/2)
    v: f64,
    lo: u64,
    hi: u64,
    center: f64,
    right: f64,
    left: f64,
    ln_p_hi: f64,
    ln_r: f64,
    ln_p_lo: f64,
    ln_q: f64,
}

impl Envelope {
    // ln p(j) - ln p(mode)
    #[inline]
    fn ln_rel(&self, j: u64) -> f64 {
        let jf = j as f64;
        jf * self.two_ln_half_a - ln_gamma(jf + 1.0) - ln_gamma(jf + self.v + 1.0) + self.ln_norm
    }

    fn new(p: BesselParams) -> Self {
        let m = p.mode();
        let mf = m as f64;
        let two_ln_half_a = 2.0 * (0.5 * p.a).ln();
        let mut env = Envelope {
            two_ln_half_a,
            ln_norm: ln_gamma(mf + 1.0) + ln_gamma(mf + p.v + 1.0) - mf * two_ln_half_a,
            v: p.v,
            lo: 0,
            hi: 0,
            center: 0.0,
            right: 0.0,
            left: 0.0,
            ln_p_hi: 0.0,
            ln_r: 0.0,
            ln_p_lo: 0.0,
            ln_q: 0.0,
        };
        let half_width = (0.5 * mf).sqrt().round() as u64;

        let mut hi = m + half_width;
        if p.ratio(hi) >= 1.0 - 1e-12 {
            hi += 1;
        }
        let r = p.ratio(hi);
        env.hi = hi;
        env.ln_r = r.ln();
        env.ln_p_hi = env.ln_rel(hi);
        env.right = env.ln_p_hi.exp() * r / (1.0 - r);

        let lo = m.saturating_sub(half_width);
        env.lo = lo;
        if lo > 0 {
            let q = 1.0 / p.ratio(lo - 1);
            env.ln_q = q.ln();
            env.ln_p_lo = env.ln_rel(lo);
            env.left = env.ln_p_lo.exp() * q * (-((lo as f64) * env.ln_q).exp_m1()) / (1.0 - q);
        }
        env.center = (hi - lo + 1) as f64;
        env
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let total = self.center + self.right + self.left;
        loop {
            let u = rng.random::<f64>() * total;
            let (j, ln_env) = if u < self.center {
                (self.lo + rng.random_range(0..=(self.hi - self.lo)), 0.0)
            } else if u < self.center + self.right {
                let k = 1.0 + (open01(rng).ln() / self.ln_r).floor();
                if !(k < 9.0e15) {
                    continue;
                }
                let k = k as u64;
                (self.hi + k, self.ln_p_hi + k as f64 * self.ln_r)
            } else {
                // truncated geometric on 1..=lo with P(k) proportional to q^k
                let span = -((self.lo as f64) * self.ln_q).exp_m1();
                let k = ((-open01(rng) * span).ln_1p() / self.ln_q).ceil();
                let k = (k.max(1.0) as u64).min(self.lo);
                (self.lo - k, self.ln_p_lo + k as f64 * self.ln_q)
            };
            if open01(rng).ln() + ln_env <= self.ln_rel(j) {
                return j;
            }
        }
    }
}

impl BesselSampler {
    pub fn new(params: BesselParams) -> Self {
        let kind = if params.a == 0.0 {
            BesselKind::Zero
        } else if params.a < BESSEL_INVERSE_MAX_ARG && params.mode() == 0 {
            let mut cdf = Vec::with_capacity(4);
            let mut w = 1.0_f64;
            let mut total = 1.0_f64;
            cdf.push(total);
            let mut y = 0;
            loop {
                w *= params.ratio(y);
                y += 1;
                total += w;
                cdf.push(total);
                let r = params.ratio(y);
                if w == 0.0 || w * r / (1.0 - r) <= 1e-17 * total {
                    break;
                }
            }
            BesselKind::Inverse { cdf }
        } else {
            BesselKind::Rejection(Envelope::new(params))
        };
        BesselSampler { params, kind }
    }

    pub fn params(&self) -> BesselParams {
        self.params
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match &self.kind {
            BesselKind::Zero => 0,
            BesselKind::Inverse { cdf } => {
                let u = rng.random::<f64>() * cdf[cdf.len() - 1];
                cdf.partition_point(|&c| c <= u).min(cdf.len() - 1) as u64
            }
            BesselKind::Rejection(env) => env.sample(rng),
        }
    }
}

/// One Bessel draw. `a == 0` returns 0 without consuming randomness.
pub fn sample_bessel<R: Rng + ?Sized>(p: BesselParams, rng: &mut R) -> u64 {
    if p.a == 0.0 {
        return 0;
    }
    BesselSampler::new(p).sample(rng)
}
