//! Voltage regulation on radial distribution feeders hosting AI-training
//! data centers.

pub mod analysis;
pub mod config;
pub mod control;
pub mod error;
pub mod feeder;
pub mod report;
pub mod sim;
pub mod verify;
pub mod workload;

pub use error::{Error, Result};
