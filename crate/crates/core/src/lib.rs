//! Delay-Doppler CDMA over OTFS: spreading sequences, framing, channel
//! models, MMSE detection, sensing estimation, Cramer-Rao bounds and the
//! Monte-Carlo drivers that tie them together.

// `!(x >= 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod config;
pub mod crb;
pub mod error;
pub mod frame;
pub mod linalg;
pub mod montecarlo;
pub mod receiver;
pub mod sensing;
pub mod sequences;

pub use error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
