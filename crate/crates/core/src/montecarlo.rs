//! Ensembles of closed-loop trajectories and exit-time statistics.
//!
//! Work is fanned out over rayon, but trajectories are grouped into
//! fixed-size blocks that are reduced sequentially and then merged in block
//! order. The floating-point summation order therefore depends only on `M`,
//! never on the number of worker threads.

use rayon::prelude::*;
use serde::Serialize;

use crate::controller::ControlPolicy;
use crate::dynamics::{
    em_step, integrate_ensemble, simulate_trajectory, NoiseKey, SdeStepConfig, TrajectoryConfig,
};
use crate::error::{Error, Result};
use crate::spin::SpinOperators;
use crate::state::{check_index, distance_v, project_to_state_space, CMatrix, QuantumState, C64};

const BLOCK: usize = 8;

/// Aggregated statistics of `M` trajectories on a shared output grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub mean_v: Vec<f64>,
    /// Fraction of trajectories with `V` below the convergence threshold, per time.
    pub conv_fraction: Vec<f64>,
    pub mean_states: Vec<QuantumState>,
    /// `conv_fraction` at the horizon.
    pub convergence_fraction: f64,
    /// Final `V` of each completed trajectory, by trajectory index.
    pub final_v: Vec<(usize, f64)>,
    pub base_seed: u64,
    pub m: usize,
    /// Trajectories that failed numerically, with their indices.
    pub failures: Vec<(usize, Error)>,
}

impl EnsembleStats {
    pub fn completed(&self) -> usize {
        self.final_v.len()
    }

    /// Noise keys of all requested trajectories.
    pub fn trajectory_keys(&self) -> impl Iterator<Item = NoiseKey> + '_ {
        (0..self.m as u64).map(move |i| NoiseKey::new(self.base_seed, i))
    }
}

#[derive(Debug, Clone)]
struct Accumulator {
    sum_v: Vec<f64>,
    sum_conv: Vec<f64>,
    sum_state: Vec<CMatrix>,
    final_v: Vec<(usize, f64)>,
    failures: Vec<(usize, Error)>,
}

impl Accumulator {
    fn new(len: usize, n: usize) -> Self {
        Accumulator {
            sum_v: vec![0.0; len],
            sum_conv: vec![0.0; len],
            sum_state: vec![CMatrix::zeros(n, n); len],
            final_v: Vec::new(),
            failures: Vec::new(),
        }
    }

    fn merge(mut self, other: Accumulator) -> Accumulator {
        for (a, b) in self.sum_v.iter_mut().zip(&other.sum_v) {
            *a += b;
        }
        for (a, b) in self.sum_conv.iter_mut().zip(&other.sum_conv) {
            *a += b;
        }
        for (a, b) in self.sum_state.iter_mut().zip(&other.sum_state) {
            *a += b;
        }
        self.final_v.extend(other.final_v);
        self.failures.extend(other.failures);
        self
    }
}

/// Run `m` trajectories from `rho0` under `policy` and reduce them.
///
/// Trajectory `i` uses noise key `(base_seed, i)`. Failed trajectories are
/// reported in [`EnsembleStats::failures`] and left out of the averages; the
/// call errors only when every trajectory fails.
pub fn run_ensemble(
    rho0: &QuantumState,
    ops: &SpinOperators,
    policy: &ControlPolicy,
    target: usize,
    cfg: &TrajectoryConfig,
    m: usize,
    base_seed: u64,
) -> Result<EnsembleStats> {
    if m == 0 {
        return Err(Error::invalid("ensemble size must be >= 1"));
    }
    cfg.validate()?;
    let cfg = cfg.keeping_states(true);
    let grid: Vec<f64> = cfg
        .output_steps()
        .iter()
        .map(|&k| k as f64 * cfg.step.dt)
        .collect();
    let len = grid.len();
    let n = ops.dim();
    let threshold = cfg.convergence_threshold;

    let blocks: Vec<Accumulator> = (0..m.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut acc = Accumulator::new(len, n);
            for i in (b * BLOCK)..((b + 1) * BLOCK).min(m) {
                let key = NoiseKey::new(base_seed, i as u64);
                match simulate_trajectory(rho0, ops, policy, target, &cfg, key) {
                    Ok(rec) => {
                        let states = rec.states.as_ref().expect("states were requested");
                        for (t, (v, s)) in rec.v.iter().zip(states).enumerate() {
                            acc.sum_v[t] += v;
                            if *v < threshold {
                                acc.sum_conv[t] += 1.0;
                            }
                            acc.sum_state[t] += s.matrix();
                        }
                        acc.final_v.push((i, rec.final_v()));
                    }
                    Err(e) => acc.failures.push((i, e)),
                }
            }
            acc
        })
        .collect();

    let total = blocks
        .into_iter()
        .reduce(Accumulator::merge)
        .expect("at least one block");
    let done = total.final_v.len();
    if done == 0 {
        let (i, e) = total.failures[0].clone();
        return Err(Error::NumericalFailure {
            message: format!("all {m} trajectories failed; first failure (trajectory {i}): {e}"),
            time: None,
        });
    }
    let scale = 1.0 / done as f64;
    let mean_states = total
        .sum_state
        .iter()
        .map(|s| project_to_state_space(&(s * C64::new(scale, 0.0)), &cfg.step.tol))
        .collect::<Result<Vec<_>>>()?;
    let conv_fraction: Vec<f64> = total.sum_conv.iter().map(|c| c * scale).collect();
    Ok(EnsembleStats {
        times: grid,
        mean_v: total
            .sum_v
            .iter()
            .map(|v| (v * scale).clamp(0.0, 1.0))
            .collect(),
        convergence_fraction: *conv_fraction.last().unwrap(),
        conv_fraction,
        mean_states,
        final_v: total.final_v,
        base_seed,
        m,
        failures: total.failures,
    })
}

/// Largest entrywise deviation between the Monte Carlo mean state under a
/// constant input `u` and the ensemble ODE, over the output grid.
///
/// The ODE step `dt_ode` must divide the output spacing of `cfg`.
pub fn compare_mean_vs_ode(
    rho0: &QuantumState,
    ops: &SpinOperators,
    u: f64,
    cfg: &TrajectoryConfig,
    m: usize,
    dt_ode: f64,
    base_seed: u64,
) -> Result<f64> {
    let stats = run_ensemble(rho0, ops, &ControlPolicy::Constant(u), 1, cfg, m, base_seed)?;
    let horizon = *stats.times.last().unwrap();
    let ode = integrate_ensemble(rho0, |_| u, horizon, dt_ode, ops)?;
    let mut worst: f64 = 0.0;
    for (t, mc) in stats.times.iter().zip(&stats.mean_states) {
        let idx = (t / dt_ode).round() as usize;
        if idx >= ode.states.len() || (idx as f64 * dt_ode - t).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "output time {t} is not on the ODE grid with step {dt_ode}"
            )));
        }
        let diff = mc.matrix() - ode.states[idx].matrix();
        worst = diff.iter().map(|z| z.norm()).fold(worst, f64::max);
    }
    Ok(worst)
}

/// Settings for [`estimate_exit_time`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExitTimeConfig {
    /// The far region is `{V > 1 - gamma_a}`; a path exits once `V <= 1 - gamma_a`.
    pub gamma_a: f64,
    pub t_cap: f64,
    pub step: SdeStepConfig,
    pub m: usize,
    pub base_seed: u64,
    /// Horizon used in the Dynkin-type bound; defaults to the median exit time.
    pub t0: Option<f64>,
}

/// First-exit-time sample summary together with the bound
/// `E[tau] <= T0 / (1 - P(tau > T0))`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitTimeReport {
    pub gamma_a: f64,
    pub target: usize,
    pub m: usize,
    pub base_seed: u64,
    pub t_cap: f64,
    /// Exit times of the paths that left before `t_cap`, by trajectory index.
    pub samples: Vec<f64>,
    pub censored: usize,
    pub mean: Option<f64>,
    pub std_err: Option<f64>,
    pub t0: Option<f64>,
    /// Fraction of all paths (censored included) with `tau > t0`.
    pub p_exceed: Option<f64>,
    pub dynkin_bound: Option<f64>,
    /// Set when no path exited, so no mean is reported.
    pub inconclusive: bool,
}

/// First time a path under `u = 1` started at `rho0` reaches `V <= 1 - gamma_a`,
/// or `None` if it has not by `t_cap`.
pub fn first_exit_time(
    rho0: &QuantumState,
    ops: &SpinOperators,
    target: usize,
    gamma_a: f64,
    t_cap: f64,
    step: &SdeStepConfig,
    key: NoiseKey,
) -> Result<Option<f64>> {
    let level = 1.0 - gamma_a;
    let n_steps = (t_cap / step.dt).round() as usize;
    let mut dw = key.increments(step.dt);
    let mut rho = rho0.clone();
    for k in 0..=n_steps {
        let t = k as f64 * step.dt;
        if distance_v(&rho, target)? <= level {
            return Ok(Some(t));
        }
        if k == n_steps {
            break;
        }
        rho = em_step(&rho, 1.0, step, dw.next_increment(), ops)
            .map_err(|e| e.at_time(t + step.dt))?;
    }
    Ok(None)
}

/// Monte Carlo estimate of the mean first exit time from `{V > 1 - gamma_a}`
/// under the constant drive `u = 1`.
pub fn estimate_exit_time(
    rho0: &QuantumState,
    ops: &SpinOperators,
    target: usize,
    cfg: &ExitTimeConfig,
) -> Result<ExitTimeReport> {
    check_index(target, ops.dim())?;
    cfg.step.validate()?;
    if !(cfg.gamma_a > 0.0 && cfg.gamma_a < 1.0) {
        return Err(Error::invalid(format!(
            "gamma_a must lie in (0, 1), got {}",
            cfg.gamma_a
        )));
    }
    if !(cfg.t_cap > 0.0 && cfg.t_cap.is_finite()) {
        return Err(Error::invalid(format!(
            "t_cap must be > 0, got {}",
            cfg.t_cap
        )));
    }
    if cfg.m == 0 {
        return Err(Error::invalid("ensemble size must be >= 1"));
    }
    if let Some(t0) = cfg.t0 {
        if !(t0 > 0.0 && t0 <= cfg.t_cap) {
            return Err(Error::invalid(format!(
                "t0 must lie in (0, t_cap], got {t0}"
            )));
        }
    }
    let v0 = distance_v(rho0, target)?;
    if v0 <= 1.0 - cfg.gamma_a {
        return Err(Error::Precondition(format!(
            "initial state already satisfies V = {v0} <= 1 - gamma_a = {}",
            1.0 - cfg.gamma_a
        )));
    }

    let taus: Vec<Option<f64>> = (0..cfg.m)
        .into_par_iter()
        .map(|i| {
            let key = NoiseKey::new(cfg.base_seed, i as u64);
            first_exit_time(rho0, ops, target, cfg.gamma_a, cfg.t_cap, &cfg.step, key)
        })
        .collect::<Result<_>>()?;

    let samples: Vec<f64> = taus.iter().flatten().copied().collect();
    let censored = cfg.m - samples.len();
    let mut report = ExitTimeReport {
        gamma_a: cfg.gamma_a,
        target,
        m: cfg.m,
        base_seed: cfg.base_seed,
        t_cap: cfg.t_cap,
        samples,
        censored,
        mean: None,
        std_err: None,
        t0: None,
        p_exceed: None,
        dynkin_bound: None,
        inconclusive: true,
    };
    if report.samples.is_empty() {
        return Ok(report);
    }
    report.inconclusive = false;
    let k = report.samples.len() as f64;
    let mean = report.samples.iter().sum::<f64>() / k;
    report.mean = Some(mean);
    if report.samples.len() > 1 {
        let var = report
            .samples
            .iter()
            .map(|x| (x - mean).powi(2))
            .sum::<f64>()
            / (k - 1.0);
        report.std_err = Some((var / k).sqrt());
    }
    let t0 = cfg.t0.unwrap_or_else(|| median(&report.samples));
    report.t0 = Some(t0);
    if t0 > 0.0 {
        let exceed = taus.iter().filter(|t| t.is_none_or(|t| t > t0)).count();
        let p = exceed as f64 / cfg.m as f64;
        report.p_exceed = Some(p);
        if p < 1.0 {
            report.dynkin_bound = Some(t0 / (1.0 - p));
        }
    }
    Ok(report)
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::ControllerState;
    use crate::state::maximally_mixed;

    fn small_cfg(horizon: f64) -> TrajectoryConfig {
        TrajectoryConfig::new(horizon, SdeStepConfig::default())
            .unwrap()
            .with_stride(100)
    }

    #[test]
    fn single_trajectory_ensemble_matches_record() {
        let ops = SpinOperators::new(1.0).unwrap();
        let rho0 = ops.eigenstate(1).unwrap();
        let ctl = ControlPolicy::Switching(ControllerState::new(0.1, 3, &ops, &rho0).unwrap());
        let cfg = small_cfg(2.0);
        let stats = run_ensemble(&rho0, &ops, &ctl, 3, &cfg, 1, 42).unwrap();
        let rec = simulate_trajectory(&rho0, &ops, &ctl, 3, &cfg, NoiseKey::new(42, 0)).unwrap();
        assert_eq!(stats.times, rec.times);
        assert_eq!(stats.mean_v, rec.v);
        assert_eq!(stats.final_v, vec![(0, rec.final_v())]);
        assert_eq!(stats.completed(), 1);
        assert!(stats.failures.is_empty());
    }

    #[test]
    fn ensemble_is_independent_of_thread_count() {
        let ops = SpinOperators::new(1.0).unwrap();
        let rho0 = ops.eigenstate(1).unwrap();
        let cfg = small_cfg(1.0);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    run_ensemble(&rho0, &ops, &ControlPolicy::Constant(1.0), 3, &cfg, 37, 9)
                        .unwrap()
                })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn mixed_start_matches_ode_within_sampling_error() {
        // the ODE side is constant; single paths still purify, so the mean
        // only agrees statistically
        let ops = SpinOperators::new(1.0).unwrap();
        let rho0 = maximally_mixed(3).unwrap();
        let ode = integrate_ensemble(&rho0, |_| 1.0, 1.0, 0.01, &ops).unwrap();
        assert!(ode.states.iter().all(|s| s == &rho0));
        let dev = compare_mean_vs_ode(&rho0, &ops, 1.0, &small_cfg(1.0), 400, 0.01, 0).unwrap();
        assert!(dev < 0.1, "{dev}");
    }

    #[test]
    fn ode_grid_must_align() {
        let ops = SpinOperators::new(1.0).unwrap();
        let rho0 = maximally_mixed(3).unwrap();
        assert!(compare_mean_vs_ode(&rho0, &ops, 1.0, &small_cfg(1.0), 2, 0.03, 0).is_err());
    }

    #[test]
    fn exit_time_precondition_and_arguments() {
        let ops = SpinOperators::new(1.0).unwrap();
        let cfg = ExitTimeConfig {
            gamma_a: 0.1,
            t_cap: 5.0,
            step: SdeStepConfig::default(),
            m: 4,
            base_seed: 0,
            t0: None,
        };
        let near = ops.eigenstate(3).unwrap();
        assert!(matches!(
            estimate_exit_time(&near, &ops, 3, &cfg),
            Err(Error::Precondition(_))
        ));
        let far = ops.eigenstate(1).unwrap();
        for bad in [0.0, 1.0, 1.5] {
            let c = ExitTimeConfig {
                gamma_a: bad,
                ..cfg
            };
            assert!(matches!(
                estimate_exit_time(&far, &ops, 3, &c),
                Err(Error::InvalidArgument(_))
            ));
        }
        let c = ExitTimeConfig {
            t0: Some(10.0),
            ..cfg
        };
        assert!(estimate_exit_time(&far, &ops, 3, &c).is_err());
    }

    #[test]
    fn all_censored_is_inconclusive() {
        let ops = SpinOperators::new(1.0).unwrap();
        let cfg = ExitTimeConfig {
            gamma_a: 0.1,
            t_cap: 0.002,
            step: SdeStepConfig::default(),
            m: 3,
            base_seed: 0,
            t0: None,
        };
        let r = estimate_exit_time(&ops.eigenstate(1).unwrap(), &ops, 3, &cfg).unwrap();
        assert!(r.inconclusive);
        assert_eq!(r.censored, 3);
        assert_eq!(r.mean, None);
        assert_eq!(r.dynkin_bound, None);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
