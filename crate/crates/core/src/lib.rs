// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annotations;
pub mod cli;
pub mod conformal;
pub mod error;
pub mod metrics;
pub mod platform;
pub mod router;
pub mod scorer;
pub mod simulator;
mod serde_ext;
pub mod types;

pub use error::{Error, Result};
