//! Constrained linear regression games.
//!
//! Each training environment is a player choosing a linear predictor inside
//! an `l_inf` box; the ensemble (sum of all players' predictors) is the model
//! that is evaluated. The crate provides closed-form equilibria, learning
//! dynamics that reach them, a synthetic data generator and a benchmark
//! harness comparing the equilibrium ensemble with pooled ERM.

pub mod bench;
pub mod dynamics;
pub mod error;
pub mod game;
pub mod numerics;
pub mod plot;
pub mod population;
pub mod sem;
pub mod verify;


pub use error::{Error, Result};
pub use numerics::Matrix;
