//! Doubly non-central beta matrix factorization (DNCB-MF).
//!
//! Each entry of an `N x M` matrix of values in `(0, 1)` is modelled as a
//! doubly non-central beta draw whose two non-centrality rates are low-rank
//! products of gamma-distributed factors. The crate provides
//!
//! * [`specfun`]: log-domain `I_v`, `1F1` and Humbert `Psi2`,
//! * [`randist`]: exact samplers (including the Bessel distribution) driven by
//!   counter-based random streams,
//! * [`model`]: the data types, the DNCB density and mean, rates and the
//!   `rho` embedding,
//! * [`gibbs`]: the auxiliary-variable Gibbs sampler and a joint-distribution
//!   (Geweke) test harness,
//! * [`eval`]: holdout masks and pointwise predictive density scoring,
//! * [`io`] and [`cli`]: file formats and the batch commands behind the
//!   `dncb-mf` binary.

// Domain checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod eval;
pub mod gibbs;
pub mod io;
pub mod model;
pub mod randist;
pub mod specfun;

pub use error::{Error, Result};
pub use eval::{beta_baseline_ppd, make_mask, ppd, HoldoutMask, PpdReport};
pub use gibbs::{geweke_check, run, AuxState, GewekeConfig, PosteriorChain, SamplerConfig, Snapshot};
pub use model::{
    conditional_mean, dncb_log_pdf, dncb_mean, embedding, BetaMatrix, Embedding, FactorState, Hyperparams, RatePair,
};
pub use randist::{BesselParams, RngStream};
pub use specfun::LogReal;
