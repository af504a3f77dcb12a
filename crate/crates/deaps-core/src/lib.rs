//! Self-supervised representation learning for quasiperiodic time series.
//!
//! The crate trains a patch-transformer encoder without labels by pairing
//! windows drawn from two recordings of the same subject. A student network
//! is optimized directly while a teacher network tracks it as an exponential
//! moving average. Three objectives shape the representation space:
//!
//! * a similarity loss that aligns windows across recordings, capturing
//!   subject-level (static) structure,
//! * a gradual loss that asks the middle window of a within-record triplet
//!   to land on the offset-weighted interpolation of its two endpoints,
//!   capturing within-record (dynamic) structure, restricted per triplet to
//!   the most rapidly changing projection features,
//! * a covariance penalty on projection batches that discourages redundant
//!   features.
//!
//! Everything needed to exercise the method at desk scale ships alongside:
//! a synthetic signal generator with known static/dynamic ground truth
//! ([`synthgen`]), the preprocessing chain ([`pipeline`]), batch construction
//! ([`sampling`]), two reference baselines ([`baselines`]), and a downstream
//! evaluation kit ([`evalkit`]).

pub mod baselines;
pub mod error;
pub mod evalkit;
pub mod gradcheck;
pub mod io;
pub mod model;
pub mod objectives;
pub mod pipeline;
pub mod plot;
pub mod sampling;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
