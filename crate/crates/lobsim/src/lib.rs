//! Event-driven limit order book simulator with a jump-diffusion/fluid
//! high-frequency limit and statistical diagnostics.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod gridfn;
pub mod harness;
pub mod imbalance;
pub mod kernels;
pub mod limit;
pub mod micro;
pub mod model;

pub use error::{LobError, Result};
