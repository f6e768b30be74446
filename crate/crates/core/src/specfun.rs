//! Log-domain special functions behind the DNCB density, its mean and the
//! Bessel count sampler.
//!
//! Every function here returns the natural log of a non-negative quantity so
//! that the large arguments produced during sampling (`a = 2 sqrt(gamma * lambda)`
//! routinely exceeds 10^3) never overflow. Series are summed with all terms
//! scaled relative to their largest member, and are only stopped once a
//! geometric bound on the remaining tail drops below [`SERIES_REL_TOL`] of the
//! running sum. Running out of [`MAX_SERIES_TERMS`] is an error, never a
//! silent truncation.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};

/// Relative size of the bounded series remainder at which summation stops.
pub const SERIES_REL_TOL: f64 = 1e-16;

/// Hard budget on the number of terms of a single series.
pub const MAX_SERIES_TERMS: usize = 100_000;

/// Hard budget on the total number of terms of the Humbert double series.
/// The significant region grows like `lambda` for rates near `lambda`, so a
/// budget of a few million covers rates into the tens of thousands.
pub const MAX_PSI2_TERMS: usize = 4_000_000;

// Above this argument (and with v^2 <= a) log I_v(a) uses the large-argument
// expansion; its truncation error there is far below double precision.
const LARGE_ARG_MIN: f64 = 100.0;

// Series modes beyond this switch I_v to the uniform (large order) expansion.
const SERIES_MODE_MAX: f64 = 50_000.0;

/// Natural log of a non-negative real. Finite or `-inf` (the log of zero).
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct LogReal(f64);

impl LogReal {
    pub const ZERO: LogReal = LogReal(f64::NEG_INFINITY);
    pub const ONE: LogReal = LogReal(0.0);

    pub fn from_ln(ln: f64) -> Self {
        debug_assert!(!ln.is_nan() && ln != f64::INFINITY, "invalid log value {ln}");
        LogReal(ln)
    }

    pub fn from_value(x: f64) -> Self {
        debug_assert!(x >= 0.0);
        LogReal(x.ln())
    }

    #[inline]
    pub fn ln(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn exp(self) -> f64 {
        self.0.exp()
    }
}

impl fmt::Display for LogReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "exp({})", self.0)
    }
}

/// `ln Gamma(x)` for `x > 0`.
#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `ln B(a, b)`.
#[inline]
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// `ln(e^a + e^b)` without overflow.
#[inline]
pub fn ln_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln sum_i e^{x_i}`; `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// `ln I_v(a)`, the modified Bessel function of the first kind, for `v > -1`
/// and finite `a >= 0`.
///
/// `I_v(0)` diverges for `-1 < v < 0`, which is reported as a domain error.
pub fn log_bessel_i(v: f64, a: f64) -> Result<LogReal> {
    const F: &str = "log_bessel_i";
    if !(v > -1.0) || !v.is_finite() {
        return Err(Error::domain(F, format!("order must be finite and > -1, got {v}")));
    }
    if !(a >= 0.0) || !a.is_finite() {
        return Err(Error::domain(F, format!("argument must be finite and >= 0, got {a}")));
    }
    if a == 0.0 {
        return match v {
            0.0 => Ok(LogReal::ONE),
            v if v > 0.0 => Ok(LogReal::ZERO),
            _ => Err(Error::domain(F, format!("I_v(0) diverges for v = {v} < 0"))),
        };
    }
    if a >= LARGE_ARG_MIN && a >= v * v {
        if let Some(ln) = bessel_i_large_arg(v, a) {
            return Ok(LogReal(ln));
        }
    }
    let q = 0.25 * a * a;
    let ratio = |m: u64| {
        let m = m as f64;
        q / ((m + 1.0) * (m + v + 1.0))
    };
    let m0 = 0.5 * (v.hypot(a) - (v + 2.0));
    if m0 > SERIES_MODE_MAX {
        return Ok(LogReal(bessel_i_uniform(v, a)));
    }
    let mode =
        first_ratio_at_most_one(ratio, m0.max(0.0).ceil() as u64).ok_or(Error::Convergence { func: F, terms: 0 })?;
    let log_mode_term = {
        let m = mode as f64;
        (2.0 * m + v) * (0.5 * a).ln() - ln_gamma(m + 1.0) - ln_gamma(m + v + 1.0)
    };
    let (sum, _) =
        sum_unimodal(mode, ratio, 0.0, MAX_SERIES_TERMS).map_err(|terms| Error::Convergence { func: F, terms })?;
    Ok(LogReal(log_mode_term + sum.ln()))
}

// e^a / sqrt(2 pi a) * sum_k (-1)^k prod_{j<=k} (4v^2 - (2j-1)^2) / (k! (8a)^k)
fn bessel_i_large_arg(v: f64, a: f64) -> Option<f64> {
    let mu = 4.0 * v * v;
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    for k in 1..=500 {
        let odd = (2 * k - 1) as f64;
        let next = -term * (mu - odd * odd) / (8.0 * k as f64 * a);
        if next.abs() > term.abs() && k > 1 {
            // asymptotic series started to diverge before reaching tolerance
            return None;
        }
        term = next;
        sum += term;
        if term.abs() <= SERIES_REL_TOL * sum.abs() {
            return Some(a - 0.5 * (2.0 * PI * a).ln() + sum.ln());
        }
    }
    None
}

// Uniform expansion in the order, I_v(v z) ~ e^{v eta} / (sqrt(2 pi v) (1+z^2)^{1/4}) sum u_k(t) / v^k.
fn bessel_i_uniform(v: f64, a: f64) -> f64 {
    let z = a / v;
    let sq = z.hypot(1.0);
    let t = 1.0 / sq;
    let eta = sq + (z / (1.0 + sq)).ln();
    let t2 = t * t;
    let u1 = t * (3.0 - 5.0 * t2) / 24.0;
    let u2 = t2 * (81.0 - 462.0 * t2 + 385.0 * t2 * t2) / 1152.0;
    let u3 = t * t2 * (30375.0 - 369603.0 * t2 + 765765.0 * t2 * t2 - 425425.0 * t2 * t2 * t2) / 414720.0;
    let u4 = t2
        * t2
        * (4465125.0 - 94121676.0 * t2 + 349922430.0 * t2 * t2 - 446185740.0 * t2.powi(3) + 185910725.0 * t2.powi(4))
        / 39813120.0;
    let s = 1.0 + u1 / v + u2 / (v * v) + u3 / v.powi(3) + u4 / v.powi(4);
    v * eta - 0.5 * (2.0 * PI * v).ln() - 0.5 * sq.ln() + s.ln()
}

/// `ln 1F1(alpha; beta; x)`, Kummer's confluent hypergeometric function, for
/// `alpha, beta > 0` and finite `x >= 0`.
pub fn kummer_1f1(alpha: f64, beta: f64, x: f64) -> Result<LogReal> {
    const F: &str = "kummer_1f1";
    if !(alpha > 0.0) || !alpha.is_finite() || !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::domain(
            F,
            format!("parameters must be positive, got alpha = {alpha}, beta = {beta}"),
        ));
    }
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::domain(F, format!("argument must be finite and >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(LogReal::ONE);
    }
    let ratio = |m: u64| {
        let m = m as f64;
        x * (alpha + m) / ((beta + m) * (m + 1.0))
    };
    sum_forward(ratio, MAX_SERIES_TERMS)
        .map(|(ln, _)| LogReal(ln))
        .map_err(|terms| Error::Convergence { func: F, terms })
}

/// `ln Psi2[e_tot; e1, e2; x1, x2]`, Humbert's confluent hypergeometric
/// function of two variables:
///
/// ```text
/// Psi2 = sum_{m,n >= 0} (e_tot)_{m+n} / ((e1)_m (e2)_n) * x1^m / m! * x2^n / n!
/// ```
///
/// The double series is enumerated row by row (fixed `n`), starting from the
/// row containing the largest terms and moving outwards; each row is summed
/// outwards from its own largest term.
pub fn log_humbert_psi2(e_tot: f64, e1: f64, e2: f64, x1: f64, x2: f64) -> Result<LogReal> {
    const F: &str = "log_humbert_psi2";
    for (name, s) in [("e_tot", e_tot), ("e1", e1), ("e2", e2)] {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::domain(F, format!("{name} must be positive, got {s}")));
        }
    }
    for (name, x) in [("x1", x1), ("x2", x2)] {
        if !(x >= 0.0) || !x.is_finite() {
            return Err(Error::domain(F, format!("{name} must be finite and >= 0, got {x}")));
        }
    }
    if x1 == 0.0 && x2 == 0.0 {
        return Ok(LogReal::ONE);
    }
    // Rows run over the first variable, so that one must be non-zero.
    let terms = if x1 == 0.0 {
        Psi2Terms::new(e_tot, e2, e1, x2, x1)
    } else {
        Psi2Terms::new(e_tot, e1, e2, x1, x2)
    };
    terms
        .sum()
        .map(LogReal)
        .map_err(|terms| Error::Convergence { func: F, terms })
}

struct Psi2Terms {
    a: f64,
    b: f64,
    c: f64,
    x: f64,
    y: f64,
    ln_x: f64,
    ln_y: f64,
    ln_gamma_abc: f64,
}

impl Psi2Terms {
    fn new(a: f64, b: f64, c: f64, x: f64, y: f64) -> Self {
        Psi2Terms {
            a,
            b,
            c,
            x,
            y,
            ln_x: x.ln(),
            ln_y: y.ln(),
            ln_gamma_abc: -ln_gamma(a) + ln_gamma(b) + ln_gamma(c),
        }
    }

    fn ln_term(&self, m: u64, n: u64) -> f64 {
        let (mf, nf) = (m as f64, n as f64);
        let mut t = self.ln_gamma_abc + ln_gamma(self.a + mf + nf)
            - ln_gamma(self.b + mf)
            - ln_gamma(self.c + nf)
            - ln_gamma(mf + 1.0)
            - ln_gamma(nf + 1.0);
        if m > 0 {
            t += mf * self.ln_x;
        }
        if n > 0 {
            t += nf * self.ln_y;
        }
        t
    }

    fn row_ratio(&self, m: u64, n: u64) -> f64 {
        let (mf, nf) = (m as f64, n as f64);
        self.x * (self.a + mf + nf) / ((self.b + mf) * (mf + 1.0))
    }

    fn col_ratio(&self, m: u64, n: u64) -> f64 {
        let (mf, nf) = (m as f64, n as f64);
        self.y * (self.a + mf + nf) / ((self.c + nf) * (nf + 1.0))
    }

    // Row n is log-concave in m when a + n >= b.
    fn row_mode(&self, n: u64) -> Option<u64> {
        if self.a + (n as f64) < self.b {
            return None;
        }
        first_ratio_at_most_one(|m| self.row_ratio(m, n), 0)
    }

    fn col_mode(&self, m: u64) -> Option<u64> {
        if self.y == 0.0 || self.a + (m as f64) < self.c {
            return None;
        }
        first_ratio_at_most_one(|n| self.col_ratio(m, n), 0)
    }

    fn start_row(&self) -> u64 {
        if self.y == 0.0 {
            return 0;
        }
        let Some(mut m) = self.row_mode(0) else {
            return 0;
        };
        let mut n = 0;
        for _ in 0..100 {
            let Some(n_next) = self.col_mode(m) else {
                return n;
            };
            let Some(m_next) = self.row_mode(n_next) else {
                return n_next;
            };
            if n_next == n && m_next == m {
                break;
            }
            n = n_next;
            m = m_next;
        }
        n
    }

    // ln of the row sum at n, plus the number of terms used.
    fn row(&self, n: u64, ln_total: f64, budget: usize) -> Result<(f64, usize), usize> {
        match self.row_mode(n) {
            Some(mode) => {
                let ln_peak = self.ln_term(mode, n);
                let floor = (ln_total - ln_peak).min(690.0).exp();
                let (sum, used) = sum_unimodal(mode, |m| self.row_ratio(m, n), floor, budget)?;
                Ok((ln_peak + sum.ln(), used))
            }
            None => {
                let (ln_sum, used) = sum_forward(|m| self.row_ratio(m, n), budget)?;
                Ok((self.ln_term(0, n) + ln_sum, used))
            }
        }
    }

    fn sum(&self) -> Result<f64, usize> {
        let n0 = self.start_row();
        let (ln_first, mut used) = self.row(n0, f64::NEG_INFINITY, MAX_PSI2_TERMS)?;
        let mut ln_total = ln_first;
        if self.y == 0.0 {
            return Ok(ln_total);
        }
        for upward in [true, false] {
            let mut prev = ln_first;
            let mut n = n0;
            loop {
                if upward {
                    n += 1;
                } else if n == 0 {
                    break;
                } else {
                    n -= 1;
                }
                let budget = MAX_PSI2_TERMS.checked_sub(used).ok_or(used)?;
                let (ln_row, row_used) = self.row(n, ln_total, budget).map_err(|u| used + u)?;
                used += row_used;
                ln_total = ln_add_exp(ln_total, ln_row);
                if ln_row < prev {
                    let q = (ln_row - prev).exp();
                    if (ln_row - ln_total).exp() * q / (1.0 - q) <= SERIES_REL_TOL {
                        break;
                    }
                }
                if ln_row == f64::NEG_INFINITY {
                    break;
                }
                prev = ln_row;
            }
        }
        Ok(ln_total)
    }
}

// Smallest m >= 0 with ratio(m) <= 1, for a ratio that is decreasing in m.
// `hint` is a guess at the answer.
fn first_ratio_at_most_one(ratio: impl Fn(u64) -> f64, hint: u64) -> Option<u64> {
    const LIMIT: u64 = 1 << 52;
    let (mut lo, mut hi);
    if ratio(hint) <= 1.0 {
        if hint == 0 || ratio(hint - 1) > 1.0 {
            return Some(hint);
        }
        if ratio(0) <= 1.0 {
            return Some(0);
        }
        lo = 0;
        hi = hint;
    } else {
        lo = hint;
        let mut step = 1;
        hi = hint + step;
        while ratio(hi) > 1.0 {
            lo = hi;
            step *= 2;
            hi = hint + step;
            if hi > LIMIT {
                return None;
            }
        }
    }
    // invariant: ratio(lo) > 1 >= ratio(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ratio(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(hi)
}

// Sum of a log-concave positive sequence, scaled so that the term at `mode`
// is 1. `ratio(m)` is t(m+1)/t(m). Summation in each direction stops once a
// geometric bound on the remaining terms is below SERIES_REL_TOL times
// max(sum, floor). Errors carry the number of terms used.
fn sum_unimodal(mode: u64, ratio: impl Fn(u64) -> f64, floor: f64, budget: usize) -> Result<(f64, usize), usize> {
    let mut sum = 1.0_f64;
    let mut used = 1usize;

    let mut t = 1.0_f64;
    let mut m = mode;
    loop {
        t *= ratio(m);
        m += 1;
        sum += t;
        used += 1;
        let r = ratio(m);
        if t == 0.0 || (r < 1.0 && t * r / (1.0 - r) <= SERIES_REL_TOL * sum.max(floor)) {
            break;
        }
        if used >= budget {
            return Err(used);
        }
    }

    t = 1.0;
    m = mode;
    while m > 0 {
        t /= ratio(m - 1);
        m -= 1;
        sum += t;
        used += 1;
        if m == 0 || t == 0.0 {
            break;
        }
        let q = 1.0 / ratio(m - 1);
        if q < 1.0 && t * q / (1.0 - q) <= SERIES_REL_TOL * sum.max(floor) {
            break;
        }
        if used >= budget {
            return Err(used);
        }
    }
    Ok((sum, used))
}

// ln of sum_{m>=0} t(m) with t(0) = 1, for ratios that eventually decrease.
fn sum_forward(ratio: impl Fn(u64) -> f64, budget: usize) -> Result<(f64, usize), usize> {
    let mut t = 1.0_f64;
    let mut sum = 1.0_f64;
    let mut ln_scale = 0.0_f64;
    let mut used = 1usize;
    let mut m = 0u64;
    loop {
        let r = ratio(m);
        t *= r;
        m += 1;
        sum += t;
        used += 1;
        if t > 1e250 {
            ln_scale += t.ln();
            sum /= t;
            t = 1.0;
        }
        if t == 0.0 {
            break;
        }
        let r_next = ratio(m);
        if r_next < 1.0 && r_next <= r && t * r_next / (1.0 - r_next) <= SERIES_REL_TOL * sum {
            break;
        }
        if used >= budget {
            return Err(used);
        }
    }
    Ok((ln_scale + sum.ln(), used))
}
