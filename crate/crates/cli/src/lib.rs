//! Command-line experiments for the `qstab` library: single trajectories,
//! Monte Carlo ensembles, exit-time estimates and the ensemble ODE, each
//! written out as CSV or JSON next to the canonical config that produced it.

pub mod commands;
pub mod config;
pub mod error;

pub use config::{resolve, ConfigArgs, ControlMode, Initial, Preset, Resolved, SimConfig};
pub use error::{CliError, Result};
