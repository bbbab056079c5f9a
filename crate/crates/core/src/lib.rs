//! Lifted linear (Koopman) models of nonlinear maps: direct encoding of the
//! transition matrix from inner products over a domain, least-squares
//! baselines, subspace-specific neural observables, modal stability analysis
//! and the experiment pipeline that ties them together.

pub mod config;
pub mod dictionary;
pub mod dynamics;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod modal;
pub mod neural;
pub mod pipeline;

pub use error::{Error, Result};
