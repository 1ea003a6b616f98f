//! Anticipation of hybrid (discrete + Gaussian) mixture distributions through
//! nonlinear dynamics, with linearity-gated adaptive mixand splitting.

pub mod anticipation;
pub mod benchmark;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod gaussian;
pub mod io;
pub mod linearity;
pub mod models;
pub mod qp;
pub mod reduction;
pub mod sigma;
pub mod splitting;
pub mod tracks;

pub use error::{Error, Result};
