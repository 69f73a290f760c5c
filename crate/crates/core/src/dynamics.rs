//! Time stepping for the measured spin system.
//!
//! The conditional state obeys the Ito equation
//!
//! ```text
//! d rho = -i u [F_y, rho] dt - 1/2 [F_z, [F_z, rho]] dt
//!         + sqrt(eta) (F_z rho + rho F_z - 2 Tr(F_z rho) rho) dW
//! ```
//!
//! integrated here with Euler-Maruyama plus a projection back onto the
//! state space. The ensemble average obeys the same equation without the
//! noise term; that ODE is integrated with classical RK4.
//!
//! Because `F_z` is diagonal and `F_y` tridiagonal, drift and diffusion are
//! evaluated entrywise in `O(N^2)` instead of through dense products.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::controller::{ControlPolicy, Mode};
use crate::error::{Error, Result};
use crate::model::check_eta;
use crate::spin::SpinOperators;
use crate::state::{
    check_index, distance_v, project_to_state_space, CMatrix, QuantumState, ToleranceConfig, C64,
};

/// `V` below this counts as converged.
pub const DEFAULT_CONVERGENCE_THRESHOLD: f64 = 0.01;
pub const DEFAULT_DT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdeStepConfig {
    pub dt: f64,
    pub eta: f64,
    /// Project back onto the state space every this many steps.
    pub projection_every: usize,
    pub tol: ToleranceConfig,
}

impl Default for SdeStepConfig {
    fn default() -> Self {
        SdeStepConfig {
            dt: DEFAULT_DT,
            eta: 1.0,
            projection_every: 1,
            tol: ToleranceConfig::default(),
        }
    }
}

impl SdeStepConfig {
    pub fn new(dt: f64, eta: f64) -> Result<Self> {
        let cfg = SdeStepConfig {
            dt,
            eta,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_projection_every(mut self, k: usize) -> Result<Self> {
        self.projection_every = k;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!(
                "time step must be > 0, got {}",
                self.dt
            )));
        }
        check_eta(self.eta)?;
        if self.projection_every == 0 {
            return Err(Error::invalid("projection_every must be >= 1"));
        }
        self.tol.validate()
    }
}

/// Identifies one Brownian path: ChaCha8 seeded by `base_seed`, stream
/// `trajectory`. Draws are consumed one per step, so the `k`-th increment of a
/// path only depends on `(base_seed, trajectory, k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseKey {
    pub base_seed: u64,
    pub trajectory: u64,
}

impl NoiseKey {
    pub fn new(base_seed: u64, trajectory: u64) -> Self {
        NoiseKey {
            base_seed,
            trajectory,
        }
    }

    pub fn increments(&self, dt: f64) -> WienerIncrements {
        WienerIncrements::new(*self, dt)
    }
}

/// Stream of Gaussian increments with variance `dt`.
#[derive(Debug, Clone)]
pub struct WienerIncrements {
    rng: ChaCha8Rng,
    sqrt_dt: f64,
}

impl WienerIncrements {
    pub fn new(key: NoiseKey, dt: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(key.base_seed);
        rng.set_stream(key.trajectory);
        WienerIncrements {
            rng,
            sqrt_dt: dt.sqrt(),
        }
    }

    /// A standard normal draw (unit variance).
    pub fn next_standard(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn next_increment(&mut self) -> f64 {
        self.sqrt_dt * self.next_standard()
    }
}

impl Iterator for WienerIncrements {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        Some(self.next_increment())
    }
}

fn check_dims(rho: &CMatrix, ops: &SpinOperators) {
    assert_eq!(
        rho.nrows(),
        ops.dim(),
        "state and operator dimensions differ"
    );
    assert_eq!(
        rho.ncols(),
        ops.dim(),
        "state and operator dimensions differ"
    );
}

/// Accumulate `scale * drift(rho, u)` into `out`.
fn add_drift(out: &mut CMatrix, rho: &CMatrix, u: f64, ops: &SpinOperators, scale: f64) {
    let n = ops.dim();
    let lam = ops.lambdas();
    let fy = ops.fy();
    let minus_iu = C64::new(0.0, -u * scale);
    for m in 0..n {
        for l in 0..n {
            // (F_y rho - rho F_y)_lm over the nonzero band of F_y
            let mut comm = C64::new(0.0, 0.0);
            if l > 0 {
                comm += fy[(l, l - 1)] * rho[(l - 1, m)];
            }
            if l + 1 < n {
                comm += fy[(l, l + 1)] * rho[(l + 1, m)];
            }
            if m > 0 {
                comm -= rho[(l, m - 1)] * fy[(m - 1, m)];
            }
            if m + 1 < n {
                comm -= rho[(l, m + 1)] * fy[(m + 1, m)];
            }
            let d = lam[l] - lam[m];
            out[(l, m)] += minus_iu * comm - rho[(l, m)] * (0.5 * d * d * scale);
        }
    }
}

/// Accumulate `scale * diffusion(rho)` into `out`.
fn add_diffusion(out: &mut CMatrix, rho: &CMatrix, ops: &SpinOperators, eta: f64, scale: f64) {
    let n = ops.dim();
    let lam = ops.lambdas();
    let mean: f64 = (0..n).map(|k| lam[k] * rho[(k, k)].re).sum();
    let s = eta.sqrt() * scale;
    for m in 0..n {
        for l in 0..n {
            out[(l, m)] += rho[(l, m)] * ((lam[l] + lam[m] - 2.0 * mean) * s);
        }
    }
}

/// `-i u [F_y, rho] - 1/2 [F_z, [F_z, rho]]`.
pub fn sme_drift(rho: &CMatrix, u: f64, ops: &SpinOperators) -> CMatrix {
    check_dims(rho, ops);
    let mut out = CMatrix::zeros(ops.dim(), ops.dim());
    add_drift(&mut out, rho, u, ops, 1.0);
    out
}

/// `sqrt(eta) (F_z rho + rho F_z - 2 Tr(F_z rho) rho)`.
pub fn sme_diffusion(rho: &CMatrix, ops: &SpinOperators, eta: f64) -> CMatrix {
    check_dims(rho, ops);
    let mut out = CMatrix::zeros(ops.dim(), ops.dim());
    add_diffusion(&mut out, rho, ops, eta, 1.0);
    out
}

/// Right-hand side of the ensemble-average dynamics (the noise-free drift).
pub fn ensemble_rhs(rho_bar: &CMatrix, u: f64, ops: &SpinOperators) -> CMatrix {
    sme_drift(rho_bar, u, ops)
}

/// `rho + drift dt + diffusion dW`, without projection.
pub fn em_increment(
    rho: &CMatrix,
    u: f64,
    cfg: &SdeStepConfig,
    dw: f64,
    ops: &SpinOperators,
) -> CMatrix {
    check_dims(rho, ops);
    let mut out = rho.clone();
    add_drift(&mut out, rho, u, ops, cfg.dt);
    add_diffusion(&mut out, rho, ops, cfg.eta, dw);
    out
}

/// One Euler-Maruyama step followed by projection onto the state space.
pub fn em_step(
    rho: &QuantumState,
    u: f64,
    cfg: &SdeStepConfig,
    dw: f64,
    ops: &SpinOperators,
) -> Result<QuantumState> {
    let next = em_increment(rho.matrix(), u, cfg, dw, ops);
    project_to_state_space(&next, &cfg.tol)
}

/// Horizon, output sampling and bookkeeping for a single path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub horizon: f64,
    pub step: SdeStepConfig,
    /// Record every `record_stride`-th integration step (the last step is
    /// always recorded).
    pub record_stride: usize,
    pub keep_states: bool,
    pub convergence_threshold: f64,
}

impl TrajectoryConfig {
    pub fn new(horizon: f64, step: SdeStepConfig) -> Result<Self> {
        let cfg = TrajectoryConfig {
            horizon,
            step,
            record_stride: 1,
            keep_states: false,
            convergence_threshold: DEFAULT_CONVERGENCE_THRESHOLD,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn keeping_states(mut self, keep: bool) -> Self {
        self.keep_states = keep;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.step.validate()?;
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid(format!(
                "horizon must be > 0, got {}",
                self.horizon
            )));
        }
        if self.record_stride == 0 {
            return Err(Error::invalid("record stride must be >= 1"));
        }
        if !(self.convergence_threshold > 0.0 && self.convergence_threshold <= 1.0) {
            return Err(Error::invalid("convergence threshold must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Number of integration steps, `round(horizon / dt)` but at least one.
    pub fn n_steps(&self) -> usize {
        ((self.horizon / self.step.dt).round() as usize).max(1)
    }

    /// Integration step indices that land on the output grid.
    pub fn output_steps(&self) -> Vec<usize> {
        let n = self.n_steps();
        let mut out: Vec<usize> = (0..=n).step_by(self.record_stride).collect();
        if *out.last().unwrap() != n {
            out.push(n);
        }
        out
    }
}

/// Sampled path of a single closed-loop simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub v: Vec<f64>,
    /// Input applied from each recorded state (sample-and-hold over the next step).
    pub u: Vec<f64>,
    pub purity: Vec<f64>,
    pub mode: Vec<Option<Mode>>,
    pub states: Option<Vec<QuantumState>>,
    pub noise: NoiseKey,
    pub target: usize,
    /// `V` below threshold at the horizon.
    pub converged: bool,
    /// First integration time at which `V` dropped below the threshold.
    pub first_converged_time: Option<f64>,
}

impl TrajectoryRecord {
    pub fn final_v(&self) -> f64 {
        *self.v.last().expect("records are never empty")
    }
}

/// Integrate one path of the closed loop from `rho0` up to the horizon.
///
/// Deterministic in all arguments: the noise comes from `noise` only, and the
/// control is evaluated once per step from the state being stepped.
/// `target` is the eigenstate `V` is measured against; for a switching policy
/// it must equal the controller's target.
pub fn simulate_trajectory(
    rho0: &QuantumState,
    ops: &SpinOperators,
    policy: &ControlPolicy,
    target: usize,
    cfg: &TrajectoryConfig,
    noise: NoiseKey,
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    let n = ops.dim();
    check_index(target, n)?;
    if rho0.dim() != n {
        return Err(Error::invalid(format!(
            "initial state has dimension {}, operators have {n}",
            rho0.dim()
        )));
    }
    if let ControlPolicy::Switching(c) = policy {
        if c.target() != target {
            return Err(Error::invalid(format!(
                "controller target {} differs from recorded target {target}",
                c.target()
            )));
        }
    }

    let step = &cfg.step;
    let n_steps = cfg.n_steps();
    let outputs = cfg.output_steps();
    let mut next_out = 0;
    let cap = outputs.len();
    let mut rec = TrajectoryRecord {
        times: Vec::with_capacity(cap),
        v: Vec::with_capacity(cap),
        u: Vec::with_capacity(cap),
        purity: Vec::with_capacity(cap),
        mode: Vec::with_capacity(cap),
        states: cfg.keep_states.then(|| Vec::with_capacity(cap)),
        noise,
        target,
        converged: false,
        first_converged_time: None,
    };

    let mut dw = noise.increments(step.dt);
    let mut rho = rho0.clone();
    // unprojected iterate, only differs from `rho` when projection_every > 1
    let mut raw: Option<CMatrix> = None;
    let mut policy = *policy;

    for k in 0..=n_steps {
        let t = k as f64 * step.dt;
        let v = distance_v(&rho, target)?;
        if v < cfg.convergence_threshold && rec.first_converged_time.is_none() {
            rec.first_converged_time = Some(t);
        }
        let (u, next_policy) = policy.control(&rho, ops)?;
        if next_out < cap && outputs[next_out] == k {
            rec.times.push(t);
            rec.v.push(v);
            rec.u.push(u);
            rec.purity.push(rho.purity());
            rec.mode.push(next_policy.mode());
            if let Some(states) = rec.states.as_mut() {
                states.push(rho.clone());
            }
            next_out += 1;
        }
        if k == n_steps {
            break;
        }
        policy = next_policy;
        let base = raw.as_ref().unwrap_or(rho.matrix());
        let incr = em_increment(base, u, step, dw.next_increment(), ops);
        if (k + 1) % step.projection_every == 0 {
            rho = project_to_state_space(&incr, &step.tol).map_err(|e| e.at_time(t + step.dt))?;
            raw = None;
        } else {
            // state functionals between projections read a projected copy
            rho = project_to_state_space(&incr, &step.tol).map_err(|e| e.at_time(t + step.dt))?;
            raw = Some(incr);
        }
    }
    rec.converged = rec.final_v() < cfg.convergence_threshold;
    Ok(rec)
}

/// Deterministic trajectory of the ensemble-average state.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<QuantumState>,
}

impl EnsembleTrajectory {
    pub fn final_state(&self) -> &QuantumState {
        self.states.last().expect("trajectory is never empty")
    }
}

/// RK4 integration of the ensemble dynamics under a state-independent input
/// `u_of_t`, re-projecting onto the state space after every step.
pub fn integrate_ensemble<F>(
    rho0: &QuantumState,
    u_of_t: F,
    horizon: f64,
    dt: f64,
    ops: &SpinOperators,
) -> Result<EnsembleTrajectory>
where
    F: Fn(f64) -> f64,
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("ODE step must be > 0, got {dt}")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid(format!(
            "horizon must be > 0, got {horizon}"
        )));
    }
    if rho0.dim() != ops.dim() {
        return Err(Error::invalid(
            "initial state and operators differ in dimension",
        ));
    }
    let tol = ToleranceConfig::default();
    let n_steps = ((horizon / dt).round() as usize).max(1);
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    times.push(0.0);
    states.push(rho0.clone());
    let mut rho = rho0.matrix().clone();
    let half = C64::new(0.5 * dt, 0.0);
    let full = C64::new(dt, 0.0);
    for k in 0..n_steps {
        let t = k as f64 * dt;
        let u_mid = u_of_t(t + 0.5 * dt);
        let k1 = ensemble_rhs(&rho, u_of_t(t), ops);
        let k2 = ensemble_rhs(&(&rho + &k1 * half), u_mid, ops);
        let k3 = ensemble_rhs(&(&rho + &k2 * half), u_mid, ops);
        let k4 = ensemble_rhs(&(&rho + &k3 * full), u_of_t(t + dt), ops);
        let incr = (k1 + (k2 + k3) * C64::new(2.0, 0.0) + k4) * C64::new(dt / 6.0, 0.0);
        let next = project_to_state_space(&(&rho + incr), &tol).map_err(|e| e.at_time(t + dt))?;
        rho = next.matrix().clone();
        times.push((k + 1) as f64 * dt);
        states.push(next);
    }
    Ok(EnsembleTrajectory { times, states })
}
