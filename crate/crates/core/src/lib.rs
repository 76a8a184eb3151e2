// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod generator;
pub mod io;
pub mod latent;
pub mod sampling;

pub use error::{Error, Result};
