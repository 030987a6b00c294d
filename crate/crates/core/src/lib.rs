//! Relating verb–frame frequency distributions to acceptability judgments.
//!
//! The crate covers the whole pipeline: bleached item and list generation
//! ([`bleach`]), ordinal-model normalization of Likert ratings
//! ([`normalize`]), agreement statistics ([`agreement`]), direct frequency
//! normalizations ([`freq`]) and factorizations ([`factor`]) of verb × frame
//! count matrices, and nested cross-validated ridge evaluation ([`eval`]).
//! [`pipeline`] sequences the stages from one config file.

pub mod agreement;
pub mod bleach;
pub mod data;
pub mod error;
pub mod eval;
pub mod factor;
pub mod freq;
pub mod normalize;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
