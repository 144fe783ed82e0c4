//! Rank-association penalized regression.
//!
//! Fits a linear risk model on an internal dataset while rewarding agreement
//! between the model's implied risk ranking and the ranking produced by an
//! external risk score.

pub mod baselines;
pub mod concordance;
pub mod data;
pub mod error;
mod linalg;
pub mod selection;
pub mod simbench;
pub mod solver;
pub mod survival;

pub use error::{RasperError, Result};
