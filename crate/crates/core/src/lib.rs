//! Decentralized Bayesian optimization with knowledge tokens.

pub mod bench;
pub mod error;
pub mod gp;
pub mod graph;
pub mod lm;
pub mod metrics;
pub mod reasoning;
pub mod rng;
pub mod runtime;
pub mod space;
pub mod token;
pub mod verify;

pub use error::{AdkoError, Result};
