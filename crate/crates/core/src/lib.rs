// Negated comparisons are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod blackscholes;
pub mod calibration;
pub mod charfn;
pub mod error;
pub mod exotics;
pub mod fourier;
pub mod model;
pub mod montecarlo;

pub use error::{Error, Result};
pub use model::{ModelParams, NaturalParams};
