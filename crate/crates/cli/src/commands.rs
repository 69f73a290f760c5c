//! Subcommand bodies. Each one computes everything first and then writes its
//! files from a single thread.

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use qstab::dynamics::TrajectoryRecord;
use qstab::state::frobenius_norm;
use qstab::{
    distance_v, estimate_exit_time, integrate_ensemble, lyapunov_q, maximally_mixed, run_ensemble,
    simulate_trajectory, ExitTimeConfig, NoiseKey,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ControlMode, Resolved};
use crate::error::{CliError, Result};

/// 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn prepare_output(r: &Resolved) -> Result<&Path> {
    let dir = r.config.output.as_path();
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    fs::write(dir.join("config.json"), r.config.to_canonical_json())?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn trajectory_file_name(base_seed: u64, index: usize) -> String {
    format!("trajectory_seed{base_seed}_{index}.csv")
}

fn write_trajectory(path: &Path, rec: &TrajectoryRecord) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "V", "u", "purity", "mode"])?;
    for k in 0..rec.times.len() {
        let mode = rec.mode[k].map_or("open", |m| m.as_str());
        w.write_record([
            num(rec.times[k]),
            num(rec.v[k]),
            num(rec.u[k]),
            num(rec.purity[k]),
            mode.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One CSV per trajectory; returns the written paths in trajectory order.
pub fn simulate(r: &Resolved) -> Result<Vec<PathBuf>> {
    let dir = prepare_output(r)?;
    let (c, s) = (&r.config, &r.setup);
    let records: Vec<_> = (0..c.m)
        .into_par_iter()
        .map(|i| {
            simulate_trajectory(
                &s.rho0,
                &s.ops,
                &s.policy,
                c.f,
                &s.trajectory,
                NoiseKey::new(c.base_seed, i as u64),
            )
            .map_err(|e| CliError::from(e).with_context(&format!("trajectory {i}")))
        })
        .collect();
    let mut paths = Vec::with_capacity(c.m);
    for (i, rec) in records.into_iter().enumerate() {
        let rec = rec?;
        let path = dir.join(trajectory_file_name(c.base_seed, i));
        write_trajectory(&path, &rec)?;
        let hit = rec
            .first_converged_time
            .map_or("never below threshold".to_string(), |t| {
                format!("first below threshold at t = {t}")
            });
        println!(
            "path {i}: final V = {:.6e}, {hit} -> {}",
            rec.final_v(),
            path.display()
        );
        paths.push(path);
    }
    Ok(paths)
}

#[derive(Debug, Serialize)]
struct Failure {
    trajectory: usize,
    error: String,
}

#[derive(Debug, Serialize)]
struct EnsembleSummary {
    convergence_fraction: f64,
    #[serde(rename = "M")]
    m: usize,
    base_seed: u64,
    completed: usize,
    final_mean_v: f64,
    outside_guaranteed_range: bool,
    failures: Vec<Failure>,
}

pub fn ensemble(r: &Resolved) -> Result<()> {
    let dir = prepare_output(r)?;
    let (c, s) = (&r.config, &r.setup);
    let stats = run_ensemble(
        &s.rho0,
        &s.ops,
        &s.policy,
        c.f,
        &s.trajectory,
        c.m,
        c.base_seed,
    )?;
    for (i, e) in &stats.failures {
        warn!("trajectory {i} failed: {e}");
    }
    let mut w = csv::Writer::from_path(dir.join("ensemble.csv"))?;
    w.write_record(["t", "mean_V", "conv_frac"])?;
    for k in 0..stats.times.len() {
        w.write_record([
            num(stats.times[k]),
            num(stats.mean_v[k]),
            num(stats.conv_fraction[k]),
        ])?;
    }
    w.flush()?;
    let summary = EnsembleSummary {
        convergence_fraction: stats.convergence_fraction,
        m: stats.m,
        base_seed: stats.base_seed,
        completed: stats.completed(),
        final_mean_v: *stats.mean_v.last().expect("nonempty grid"),
        outside_guaranteed_range: matches!(&s.policy, qstab::ControlPolicy::Switching(cs) if cs.outside_guaranteed_range()),
        failures: stats
            .failures
            .iter()
            .map(|(i, e)| Failure {
                trajectory: *i,
                error: e.to_string(),
            })
            .collect(),
    };
    write_json(&dir.join("ensemble_summary.json"), &summary)?;
    println!(
        "M = {}: converged fraction {:.4}, final mean V = {:.6e}",
        summary.m, summary.convergence_fraction, summary.final_mean_v
    );
    Ok(())
}

pub fn exit_time(r: &Resolved) -> Result<()> {
    let dir = prepare_output(r)?;
    let (c, s) = (&r.config, &r.setup);
    let cfg = ExitTimeConfig {
        gamma_a: c.gamma_a,
        t_cap: c.t_cap,
        step: s.step,
        m: c.m,
        base_seed: c.base_seed,
        t0: c.t0,
    };
    let report = estimate_exit_time(&s.rho0, &s.ops, c.f, &cfg)?;
    write_json(&dir.join("exit_time.json"), &report)?;
    if report.inconclusive {
        warn!(
            "all {} paths were censored at t_cap = {}",
            report.m, report.t_cap
        );
    }
    let show = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.6}"));
    println!(
        "exit times: {} of {} uncensored, mean {} +/- {}, bound {}",
        report.samples.len(),
        report.m,
        show(report.mean),
        show(report.std_err),
        show(report.dynkin_bound)
    );
    Ok(())
}

pub fn ode(r: &Resolved) -> Result<()> {
    let (c, s) = (&r.config, &r.setup);
    let u = match c.control {
        ControlMode::Constant(u) => u,
        ControlMode::Switching => {
            return Err(CliError::Config(
                "control: the ensemble ODE needs an open-loop input, use `constant:<u>`".into(),
            ))
        }
    };
    let dir = prepare_output(r)?;
    let traj = integrate_ensemble(&s.rho0, |_| u, c.horizon, c.dt_ode, &s.ops)?;
    let mixed = maximally_mixed(s.ops.dim())?;
    let dist = |k: usize| frobenius_norm(&(traj.states[k].matrix() - mixed.matrix()));
    let mut w = csv::Writer::from_path(dir.join("ode.csv"))?;
    w.write_record(["t", "Q", "dist_to_mixed", "V"])?;
    let last = traj.times.len() - 1;
    for k in (0..=last).filter(|k| k % c.stride == 0 || *k == last) {
        let rho = &traj.states[k];
        w.write_record([
            num(traj.times[k]),
            num(lyapunov_q(rho)),
            num(dist(k)),
            num(distance_v(rho, c.f)?),
        ])?;
    }
    w.flush()?;
    println!(
        "final ||rho - I/N||_F = {:.6e} at t = {}",
        dist(last),
        traj.times[last]
    );
    Ok(())
}
