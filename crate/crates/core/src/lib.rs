//! Simulation and switching feedback control of spin-`J` systems under
//! continuous measurement of `F_z`.
//!
//! The crate is organized bottom-up:
//!
//! - [`state`]: density matrices, validation, projection, `V` and `Q`.
//! - [`spin`]: `F_y`, `F_z` and their eigenstates.
//! - [`model`]: the general measurement model, used as a dense reference.
//! - [`dynamics`]: Euler-Maruyama for the conditional state, RK4 for the
//!   ensemble average.
//! - [`controller`]: the two-branch switching law.
//! - [`montecarlo`]: ensembles, mean-vs-ODE comparison, exit times.

pub mod controller;
pub mod dynamics;
pub mod error;
pub mod model;
pub mod montecarlo;
pub mod sampling;
pub mod spin;
pub mod state;

pub use controller::{feedback_gain, ControlPolicy, ControllerState, Mode};
pub use dynamics::{
    em_step, ensemble_rhs, integrate_ensemble, simulate_trajectory, sme_diffusion, sme_drift,
    EnsembleTrajectory, NoiseKey, SdeStepConfig, TrajectoryConfig, TrajectoryRecord,
};
pub use error::{Error, Result};
pub use model::GeneralModel;
pub use montecarlo::{
    compare_mean_vs_ode, estimate_exit_time, run_ensemble, EnsembleStats, ExitTimeConfig,
    ExitTimeReport,
};
pub use spin::SpinOperators;
pub use state::{
    distance_v, lyapunov_q, maximally_mixed, measurement_probabilities, project_to_state_space,
    CMatrix, QuantumState, ToleranceConfig, C64,
};
