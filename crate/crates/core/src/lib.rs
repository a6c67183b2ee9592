//! Deep hedging of contingent claims on simulated forward markets.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiment;
pub mod hedge;
pub mod local;
pub mod loss;
pub mod market;
pub mod paths;
pub mod payoff;
pub mod policy;
pub mod report;
pub mod rng;
pub mod simulator;
pub mod train;

pub use error::{Error, Result};
