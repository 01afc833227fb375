//! Simulation engine for multi-cycle phase I dose-escalation trials.

pub mod designs;
pub mod error;
pub mod harness;
pub mod kernels;
pub mod patient;
pub mod rng;
pub mod rules;
pub mod trial;

pub use error::{Error, Result};
