//! Holdout masks and pointwise predictive density (PPD) scoring.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gibbs::PosteriorChain;
use crate::model::{dncb_log_pdf, BetaMatrix, Hyperparams};
use crate::randist::{stream_key, RngStream, StreamPhase};
use crate::specfun::{ln_beta, log_sum_exp};

/// A set of held-out cells of an `nrows x ncols` matrix, kept sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct HoldoutMask {
    nrows: usize,
    ncols: usize,
    cells: Vec<(usize, usize)>,
    fraction: f64,
    seed: Option<u64>,
}

impl HoldoutMask {
    /// Mask from an explicit cell list (for example one read from a file).
    pub fn from_cells(nrows: usize, ncols: usize, mut cells: Vec<(usize, usize)>) -> Result<Self> {
        if let Some(&(i, j)) = cells.iter().find(|&&(i, j)| i >= nrows || j >= ncols) {
            return Err(Error::Dimension(format!(
                "mask cell ({i}, {j}) outside a {nrows}x{ncols} matrix"
            )));
        }
        cells.sort_unstable();
        if let Some(w) = cells.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("duplicate mask cell {:?}", w[0])));
        }
        let total = nrows * ncols;
        let fraction = if total == 0 {
            0.0
        } else {
            cells.len() as f64 / total as f64
        };
        Ok(HoldoutMask {
            nrows,
            ncols,
            cells,
            fraction,
            seed: None,
        })
    }

    pub fn cells(&self) -> &[(usize, usize)] {
        &self.cells
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nrows, self.ncols)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.cells.binary_search(&(i, j)).is_ok()
    }

    pub fn fraction(&self) -> f64 {
        self.fraction
    }

    /// Seed of a random mask; `None` for masks built from explicit cells.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }
}

/// `round(fraction * n * m)`, halves rounded away from zero.
pub fn holdout_count(n_rows: usize, n_cols: usize, fraction: f64) -> usize {
    (fraction * (n_rows * n_cols) as f64).round() as usize
}

/// Uniformly random set of `round(fraction * n_rows * n_cols)` distinct cells.
pub fn make_mask(n_rows: usize, n_cols: usize, fraction: f64, seed: u64) -> Result<HoldoutMask> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "mask fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let total = n_rows * n_cols;
    let count = holdout_count(n_rows, n_cols, fraction);
    let mut rng = RngStream::new(seed, stream_key(StreamPhase::Mask, 0, 0)?);
    let cells = rand::seq::index::sample(&mut rng, total, count)
        .into_iter()
        .map(|c| (c / n_cols, c % n_cols))
        .collect();
    let mut mask = HoldoutMask::from_cells(n_rows, n_cols, cells)?;
    mask.fraction = fraction;
    mask.seed = Some(seed);
    Ok(mask)
}

/// Score of one held-out cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellScore {
    pub row: usize,
    pub col: usize,
    /// Value the cell was scored at (after clamping).
    pub value: f64,
    pub clamped: bool,
    /// Log of the predictive density averaged over snapshots.
    pub log_density: Option<f64>,
    /// Why the cell could not be scored.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PpdReport {
    /// Sum of the per-cell log predictive densities.
    pub log_ppd_total: f64,
    /// Geometric mean predictive density, `exp(log_ppd_total / n_scored)`.
    pub scaled_ppd: f64,
    pub n_held_out: usize,
    /// Cells that entered the total; equal to `n_held_out` unless some
    /// density evaluation failed.
    pub n_scored: usize,
    /// Held-out cells whose values were clamped at ingestion.
    pub n_clamped: usize,
    pub n_snapshots: usize,
    pub cells: Vec<CellScore>,
}

fn check_mask(beta: &BetaMatrix, mask: &HoldoutMask) -> Result<()> {
    if mask.dims() != (beta.nrows(), beta.ncols()) {
        return Err(Error::Dimension(format!(
            "mask is for {:?}, data is {}x{}",
            mask.dims(),
            beta.nrows(),
            beta.ncols()
        )));
    }
    if mask.is_empty() {
        return Err(Error::Config("holdout mask is empty; nothing to score".into()));
    }
    Ok(())
}

fn summarize(beta: &BetaMatrix, cells: Vec<CellScore>, n_snapshots: usize) -> Result<PpdReport> {
    let scored: Vec<f64> = cells.iter().filter_map(|c| c.log_density).collect();
    if scored.is_empty() {
        return Err(Error::domain("ppd", "no held-out cell could be scored"));
    }
    let log_ppd_total: f64 = scored.iter().sum();
    let n_clamped = cells.iter().filter(|c| beta.is_clamped_value(c.row, c.col)).count();
    Ok(PpdReport {
        log_ppd_total,
        scaled_ppd: (log_ppd_total / scored.len() as f64).exp(),
        n_held_out: cells.len(),
        n_scored: scored.len(),
        n_clamped,
        n_snapshots,
        cells,
    })
}

/// PPD of the held-out cells under the chain: each cell's DNCB density is
/// averaged over snapshots (in log space), and the cell averages multiply.
pub fn ppd(chain: &PosteriorChain, beta: &BetaMatrix, mask: &HoldoutMask, hyper: &Hyperparams) -> Result<PpdReport> {
    check_mask(beta, mask)?;
    if chain.snapshots.is_empty() {
        return Err(Error::Config("posterior chain has no snapshots".into()));
    }
    if chain.dims() != Some((beta.nrows(), beta.ncols())) {
        return Err(Error::Dimension(format!(
            "chain is for {:?}, data is {}x{}",
            chain.dims(),
            beta.nrows(),
            beta.ncols()
        )));
    }
    let ln_s = (chain.snapshots.len() as f64).ln();
    let cells = mask
        .cells()
        .par_iter()
        .map(|&(i, j)| {
            let value = beta.get(i, j);
            let dens: Result<Vec<f64>> = chain
                .snapshots
                .iter()
                .map(|s| {
                    let r = s.state.rates_unchecked(i, j);
                    Ok(dncb_log_pdf(value, hyper.eps1, hyper.eps2, r.lam1, r.lam2)?.ln())
                })
                .collect();
            let (log_density, error) = match dens {
                Ok(d) => (Some(log_sum_exp(&d) - ln_s), None),
                Err(e) => (None, Some(e.to_string())),
            };
            CellScore {
                row: i,
                col: j,
                value,
                clamped: beta.is_clamped_value(i, j),
                log_density,
                error,
            }
        })
        .collect();
    summarize(beta, cells, chain.snapshots.len())
}

/// Method-of-moments `Beta(a, b)` fit. Needs at least two values with
/// positive sample variance below `mean (1 - mean)`.
pub fn fit_beta_moments(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len() as f64;
    if values.len() < 2 {
        return Err(Error::domain("fit_beta_moments", "need at least two values"));
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let common = mean * (1.0 - mean) / var - 1.0;
    if !(var > 0.0) || !(common > 0.0) {
        return Err(Error::domain(
            "fit_beta_moments",
            format!("moments (mean {mean}, var {var}) admit no beta fit"),
        ));
    }
    Ok((mean * common, (1.0 - mean) * common))
}

/// PPD of a single beta distribution fitted by moments to the training
/// (non-held-out) values.
pub fn beta_baseline_ppd(beta: &BetaMatrix, mask: &HoldoutMask) -> Result<PpdReport> {
    check_mask(beta, mask)?;
    let train: Vec<f64> = beta
        .values()
        .indexed_iter()
        .filter(|((i, j), _)| !mask.contains(*i, *j))
        .map(|(_, &v)| v)
        .collect();
    let (a, b) = fit_beta_moments(&train)?;
    let norm = ln_beta(a, b);
    let cells = mask
        .cells()
        .iter()
        .map(|&(i, j)| {
            let value = beta.get(i, j);
            CellScore {
                row: i,
                col: j,
                value,
                clamped: beta.is_clamped_value(i, j),
                log_density: Some((a - 1.0) * value.ln() + (b - 1.0) * (1.0 - value).ln() - norm),
                error: None,
            }
        })
        .collect();
    summarize(beta, cells, 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_size_and_determinism() {
        let m = make_mask(10, 10, 0.1, 4).unwrap();
        assert_eq!(m.len(), 10);
        assert_eq!(m, make_mask(10, 10, 0.1, 4).unwrap());
        assert_ne!(m.cells(), make_mask(10, 10, 0.1, 5).unwrap().cells());
        assert_eq!(make_mask(5, 5, 0.1, 0).unwrap().len(), 3);
        assert!(make_mask(5, 5, 0.0, 0).is_err());
        assert!(make_mask(5, 5, 1.0, 0).is_err());
    }

    #[test]
    fn explicit_mask_validation() {
        assert!(HoldoutMask::from_cells(2, 2, vec![(2, 0)]).is_err());
        assert!(HoldoutMask::from_cells(2, 2, vec![(1, 1), (1, 1)]).is_err());
        let m = HoldoutMask::from_cells(2, 3, vec![(1, 2), (0, 1)]).unwrap();
        assert_eq!(m.cells(), &[(0, 1), (1, 2)]);
        assert!(m.contains(1, 2) && !m.contains(0, 0));
        assert!((m.fraction() - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn moment_fit_recovers_parameters() {
        let xs: Vec<f64> = (1..1000).map(|i| i as f64 / 1000.0).collect();
        let (a, b) = fit_beta_moments(&xs).unwrap();
        // uniform on (0, 1) is Beta(1, 1)
        assert!((a - 1.0).abs() < 0.01 && (b - 1.0).abs() < 0.01, "{a} {b}");
        assert!(fit_beta_moments(&[0.5, 0.5]).is_err());
    }
}
