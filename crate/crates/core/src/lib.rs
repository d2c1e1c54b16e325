//! Minimax linear estimation of average treatment effects under Lipschitz
//! smoothness, with bias-aware confidence intervals.

pub mod alt_estimators;
pub mod cli;
pub mod data;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod normal;
pub mod path;
pub mod pipeline;
pub mod qp;
pub mod variance;

pub use error::{Error, Result};
