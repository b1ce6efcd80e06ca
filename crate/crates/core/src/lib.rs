//! Supermode-resolved squeezing model for a synchronously pumped OPO, with
//! homodyne trace simulation and state reconstruction.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cavity;
pub mod cli;
pub mod config;
pub mod error;
pub mod homodyne;
pub mod optimize;
pub mod squeezing;
pub mod state;
pub mod stats;
pub mod supermode;
pub mod trace_file;
pub mod units;

pub use error::{Error, Result};
