//! Decision-focused electricity price prediction for storage arbitrage.

pub mod arbitrage;
pub mod canonical;
pub mod data;
pub mod error;
pub mod ess;
pub mod exec;
pub mod losses;
pub mod metrics;
pub mod predictor;
pub mod training;

pub use error::{Error, Result};
