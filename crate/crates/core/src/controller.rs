//! Switching feedback law with a hysteresis band.
//!
//! Far from the target (`V >= 1 - gamma/2`) the drive is held at `u = 1`;
//! close to it (`V <= 1 - gamma`) the state feedback
//! `u = -Tr(i [F_y, rho] rho_f)` is applied. Inside the open band
//! `1 - gamma < V < 1 - gamma/2` the controller keeps whatever branch it was
//! on when it entered.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spin::SpinOperators;
use crate::state::{check_index, distance_v, QuantumState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Feedback,
    Constant,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Feedback => "feedback",
            Mode::Constant => "constant",
        }
    }
}

/// Parameters and current branch of the switching controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerState {
    gamma: f64,
    target: usize,
    mode: Mode,
    outside_guaranteed: bool,
}

impl ControllerState {
    /// Build a controller for target `f` (1-based) with switching parameter
    /// `gamma`, picking the initial branch from `initial_rho`.
    ///
    /// `gamma >= 1/N` is accepted but flagged, see
    /// [`ControllerState::outside_guaranteed_range`].
    pub fn new(
        gamma: f64,
        target: usize,
        ops: &SpinOperators,
        initial_rho: &QuantumState,
    ) -> Result<Self> {
        if !gamma.is_finite() || gamma <= 0.0 {
            return Err(Error::invalid(format!(
                "switching parameter gamma must be > 0, got {gamma}"
            )));
        }
        let n = ops.dim();
        check_index(target, n)?;
        if initial_rho.dim() != n {
            return Err(Error::invalid(format!(
                "initial state has dimension {}, operators have {n}",
                initial_rho.dim()
            )));
        }
        let outside_guaranteed = gamma >= 1.0 / n as f64;
        if outside_guaranteed {
            warn!(
                "gamma = {gamma} >= 1/N = {}: stabilization is not guaranteed",
                1.0 / n as f64
            );
        }
        let v = distance_v(initial_rho, target)?;
        // no crossing history inside the band: start on the constant branch
        let mode = if v <= 1.0 - gamma {
            Mode::Feedback
        } else {
            Mode::Constant
        };
        Ok(ControllerState {
            gamma,
            target,
            mode,
            outside_guaranteed,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// True when `gamma >= 1/N`, outside the range for which global
    /// stabilization is proven.
    pub fn outside_guaranteed_range(&self) -> bool {
        self.outside_guaranteed
    }

    /// Branch after observing distance `v`, given the current branch.
    pub fn next_mode(&self, v: f64) -> Mode {
        if v <= 1.0 - self.gamma {
            Mode::Feedback
        } else if v >= 1.0 - self.gamma / 2.0 {
            Mode::Constant
        } else {
            self.mode
        }
    }

    /// Evaluate the law at `rho`: returns the control input and the updated
    /// controller. Pure in `(self, rho)`.
    pub fn control(
        &self,
        rho: &QuantumState,
        ops: &SpinOperators,
    ) -> Result<(f64, ControllerState)> {
        let v = distance_v(rho, self.target)?;
        let mode = self.next_mode(v);
        let u = match mode {
            Mode::Feedback => feedback_gain(rho, self.target, ops)?,
            Mode::Constant => 1.0,
        };
        Ok((u, ControllerState { mode, ..*self }))
    }
}

/// `u = -Tr(i [F_y, rho] rho_f) = -(i [F_y, rho])_ff`.
///
/// Only row and column `f` of the tridiagonal `F_y` enter, so this is
/// `2 Im(sum_k (F_y)_fk rho_kf)`.
pub fn feedback_gain(rho: &QuantumState, f: usize, ops: &SpinOperators) -> Result<f64> {
    let n = ops.dim();
    check_index(f, n)?;
    if rho.dim() != n {
        return Err(Error::invalid("state and operators differ in dimension"));
    }
    let r = rho.matrix();
    let fy = ops.fy();
    let i = f - 1;
    // (i[F_y, rho])_ii = i * sum_k (F_y_ik rho_ki - rho_ik F_y_ki)
    //                  = i * 2i Im(sum_k F_y_ik rho_ki) = -2 Im(...)
    let lo = i.saturating_sub(1);
    let hi = (i + 1).min(n - 1);
    let s: num_complex::Complex64 = (lo..=hi).map(|k| fy[(i, k)] * r[(k, i)]).sum();
    Ok(2.0 * s.im)
}

/// Either the switching law or a state-independent constant input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControlPolicy {
    Switching(ControllerState),
    Constant(f64),
}

impl ControlPolicy {
    /// Input to apply at `rho` and the policy to use for the next step.
    pub fn control(&self, rho: &QuantumState, ops: &SpinOperators) -> Result<(f64, ControlPolicy)> {
        match self {
            ControlPolicy::Switching(c) => {
                let (u, next) = c.control(rho, ops)?;
                Ok((u, ControlPolicy::Switching(next)))
            }
            ControlPolicy::Constant(u) => Ok((*u, *self)),
        }
    }

    pub fn mode(&self) -> Option<Mode> {
        match self {
            ControlPolicy::Switching(c) => Some(c.mode()),
            ControlPolicy::Constant(_) => None,
        }
    }
}
