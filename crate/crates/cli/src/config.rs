//! Experiment configuration: built-in defaults, presets, a JSON file and
//! command-line flags, applied in that order.
//!
//! Every field remembers where its value came from so that validation errors
//! can point at the offending line of the config file or at the flag.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, ValueEnum};
use qstab::{
    CMatrix, ControlPolicy, ControllerState, QuantumState, SdeStepConfig, SpinOperators,
    ToleranceConfig, TrajectoryConfig, C64,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initial {
    /// 1-based index of an `F_z` eigenstate.
    Eigenstate(usize),
    /// JSON file `{"re": [[..]], "im": [[..]]}` holding a density matrix.
    MatrixFile(PathBuf),
}

/// `mh` for the switching law, `constant:<u>` for a fixed input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ControlMode {
    Switching,
    Constant(f64),
}

impl FromStr for ControlMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "mh" {
            return Ok(ControlMode::Switching);
        }
        let bad = || format!("control must be `mh` or `constant:<u>`, got `{s}`");
        let u: f64 = s
            .strip_prefix("constant:")
            .ok_or_else(bad)?
            .parse()
            .map_err(|_| bad())?;
        if !u.is_finite() {
            return Err(bad());
        }
        Ok(ControlMode::Constant(u))
    }
}

impl fmt::Display for ControlMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlMode::Switching => f.write_str("mh"),
            ControlMode::Constant(u) => write!(f, "constant:{u}"),
        }
    }
}

impl TryFrom<String> for ControlMode {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<ControlMode> for String {
    fn from(c: ControlMode) -> String {
        c.to_string()
    }
}

/// Declares [`SimConfig`], its all-optional file counterpart and the merge
/// between them from one field list.
macro_rules! config_fields {
    ($( $(#[$meta:meta])* $field:ident : $ty:ty => $key:literal, )*) => {
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct SimConfig {
            $( $(#[$meta])* #[serde(rename = $key)] pub $field: $ty, )*
        }

        #[derive(Debug, Default, Deserialize)]
        #[serde(deny_unknown_fields)]
        struct PartialConfig {
            $( #[serde(rename = $key)] $field: Option<$ty>, )*
        }

        impl PartialConfig {
            fn apply(self, cfg: &mut SimConfig, origins: &mut Origins, at: impl Fn(&'static str) -> Origin) {
                $( if let Some(v) = self.$field {
                    cfg.$field = v;
                    origins.insert($key, at($key));
                } )*
            }
        }
    };
}

config_fields! {
    /// Spin quantum number; the Hilbert space has dimension `2J + 1`.
    j: f64 => "J",
    gamma: f64 => "gamma",
    /// Target eigenstate, 1-based.
    f: usize => "f",
    initial: Initial => "initial",
    eta: f64 => "eta",
    dt: f64 => "dt",
    horizon: f64 => "T",
    /// Number of trajectories.
    m: usize => "M",
    base_seed: u64 => "base_seed",
    output: PathBuf => "output",
    /// Record every `stride`-th integration step.
    stride: usize => "stride",
    control: ControlMode => "control",
    gamma_a: f64 => "gamma_a",
    t_cap: f64 => "t_cap",
    t0: Option<f64> => "t0",
    dt_ode: f64 => "dt_ode",
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            j: 1.0,
            gamma: 0.1,
            f: 3,
            initial: Initial::Eigenstate(1),
            eta: 1.0,
            dt: qstab::dynamics::DEFAULT_DT,
            horizon: 10.0,
            m: 100,
            base_seed: 0,
            output: PathBuf::from("qstab-out"),
            stride: 100,
            control: ControlMode::Switching,
            gamma_a: 0.1,
            t_cap: 200.0,
            t0: None,
            dt_ode: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// J = 10, gamma = 0.04, three paths from the lowest eigenstate
    Fig1,
    /// As fig1 with gamma = 0.4 and ten paths
    Fig2,
    /// J = 1, gamma = 0.1, M = 100, T = 50
    AcceptanceN3,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig1 => "fig1",
            Preset::Fig2 => "fig2",
            Preset::AcceptanceN3 => "acceptance-n3",
        }
    }

    pub fn config(self) -> SimConfig {
        // eta = 0.3: at eta = 1 both gammas behave alike over any feasible horizon
        let figure = SimConfig {
            j: 10.0,
            gamma: 0.04,
            f: 11,
            initial: Initial::Eigenstate(1),
            eta: 0.3,
            horizon: 100.0,
            m: 3,
            base_seed: 0,
            stride: 100,
            ..SimConfig::default()
        };
        match self {
            Preset::Fig1 => figure,
            Preset::Fig2 => SimConfig {
                gamma: 0.4,
                m: 10,
                ..figure
            },
            Preset::AcceptanceN3 => SimConfig {
                horizon: 50.0,
                base_seed: 1,
                stride: 1000,
                ..SimConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Origin {
    Default,
    Preset(Preset),
    File { path: PathBuf, line: Option<usize> },
    Flag(&'static str),
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Default => f.write_str("default"),
            Origin::Preset(p) => write!(f, "preset {}", p.name()),
            Origin::File {
                path,
                line: Some(l),
            } => write!(f, "{}:{l}", path.display()),
            Origin::File { path, line: None } => write!(f, "{}", path.display()),
            Origin::Flag(flag) => f.write_str(flag),
        }
    }
}

type Origins = BTreeMap<&'static str, Origin>;

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON config file; its fields override the preset
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Spin quantum number J
    #[arg(long = "j", value_name = "J")]
    pub j: Option<f64>,
    /// Switching parameter of the feedback law
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Target eigenstate index
    #[arg(long = "target", short = 'f')]
    pub f: Option<usize>,
    /// Initial eigenstate index
    #[arg(long, value_name = "K", conflicts_with = "initial_matrix")]
    pub initial: Option<usize>,
    /// Initial density matrix as a JSON file
    #[arg(long, value_name = "FILE")]
    pub initial_matrix: Option<PathBuf>,
    /// Detection efficiency in (0, 1]
    #[arg(long)]
    pub eta: Option<f64>,
    /// SDE time step
    #[arg(long)]
    pub dt: Option<f64>,
    /// Simulated time
    #[arg(long = "horizon", short = 'T')]
    pub horizon: Option<f64>,
    /// Number of trajectories
    #[arg(long = "paths", short = 'M')]
    pub m: Option<usize>,
    /// Base seed; trajectory i uses stream i
    #[arg(long = "seed")]
    pub base_seed: Option<u64>,
    /// Output directory
    #[arg(long, short = 'o')]
    pub output: Option<PathBuf>,
    /// Record every n-th step
    #[arg(long)]
    pub stride: Option<usize>,
    /// `mh` or `constant:<u>`
    #[arg(long)]
    pub control: Option<ControlMode>,
    /// Exit level for exit-time: paths stop once V <= 1 - gamma_a
    #[arg(long)]
    pub gamma_a: Option<f64>,
    /// Censoring time for exit-time
    #[arg(long)]
    pub t_cap: Option<f64>,
    /// Horizon of the exit-time bound (default: median exit time)
    #[arg(long)]
    pub t0: Option<f64>,
    /// RK4 step for the ensemble ODE
    #[arg(long)]
    pub dt_ode: Option<f64>,
}

impl ConfigArgs {
    fn apply(&self, cfg: &mut SimConfig, origins: &mut Origins) {
        macro_rules! flag {
            ($field:ident, $key:literal, $flag:literal) => {
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                    origins.insert($key, Origin::Flag($flag));
                }
            };
        }
        flag!(j, "J", "--j");
        flag!(gamma, "gamma", "--gamma");
        flag!(f, "f", "--target");
        flag!(eta, "eta", "--eta");
        flag!(dt, "dt", "--dt");
        flag!(horizon, "T", "--horizon");
        flag!(m, "M", "--paths");
        flag!(base_seed, "base_seed", "--seed");
        flag!(output, "output", "--output");
        flag!(stride, "stride", "--stride");
        flag!(control, "control", "--control");
        flag!(gamma_a, "gamma_a", "--gamma-a");
        flag!(t_cap, "t_cap", "--t-cap");
        flag!(dt_ode, "dt_ode", "--dt-ode");
        if let Some(k) = self.initial {
            cfg.initial = Initial::Eigenstate(k);
            origins.insert("initial", Origin::Flag("--initial"));
        }
        if let Some(p) = &self.initial_matrix {
            cfg.initial = Initial::MatrixFile(p.clone());
            origins.insert("initial", Origin::Flag("--initial-matrix"));
        }
        if let Some(t0) = self.t0 {
            cfg.t0 = Some(t0);
            origins.insert("t0", Origin::Flag("--t0"));
        }
    }
}

/// Everything a subcommand needs, built from a validated config.
#[derive(Debug, Clone)]
pub struct Setup {
    pub ops: SpinOperators,
    pub rho0: QuantumState,
    pub step: SdeStepConfig,
    pub trajectory: TrajectoryConfig,
    pub policy: ControlPolicy,
}

/// A validated config together with its prepared objects.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: SimConfig,
    pub setup: Setup,
}

struct Issue {
    key: &'static str,
    msg: String,
}

fn issue(key: &'static str, msg: impl Into<String>) -> Issue {
    Issue {
        key,
        msg: msg.into(),
    }
}

/// Merge defaults, preset, file and flags, then validate.
pub fn resolve(args: &ConfigArgs) -> Result<Resolved> {
    let mut origins = Origins::new();
    let mut config = match args.preset {
        Some(p) => {
            for key in FIELD_KEYS {
                origins.insert(key, Origin::Preset(p));
            }
            p.config()
        }
        None => SimConfig::default(),
    };
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let partial: PartialConfig =
            serde_json::from_str(&text).map_err(|e| json_error(path, &e))?;
        partial.apply(&mut config, &mut origins, |key| Origin::File {
            path: path.clone(),
            line: key_line(&text, key),
        });
    }
    args.apply(&mut config, &mut origins);
    match config.setup() {
        Ok(setup) => Ok(Resolved { config, setup }),
        Err(Issue { key, msg }) => {
            let origin = origins.get(key).cloned().unwrap_or(Origin::Default);
            Err(CliError::Config(format!("{origin}: {key} {msg}")))
        }
    }
}

const FIELD_KEYS: [&str; 16] = [
    "J",
    "gamma",
    "f",
    "initial",
    "eta",
    "dt",
    "T",
    "M",
    "base_seed",
    "output",
    "stride",
    "control",
    "gamma_a",
    "t_cap",
    "t0",
    "dt_ode",
];

fn json_error(path: &Path, e: &serde_json::Error) -> CliError {
    let text = e.to_string();
    let msg = text
        .rsplit_once(" at line ")
        .map_or(text.as_str(), |(m, _)| m);
    CliError::Config(format!(
        "{}:{}:{}: {msg}",
        path.display(),
        e.line(),
        e.column()
    ))
}

/// Line (1-based) on which `"key":` appears.
fn key_line(text: &str, key: &str) -> Option<usize> {
    let quoted = format!("\"{key}\"");
    text.lines()
        .position(|l| {
            l.split(quoted.as_str())
                .nth(1)
                .is_some_and(|rest| rest.trim_start().starts_with(':'))
        })
        .map(|i| i + 1)
}

fn positive(key: &'static str, x: f64) -> std::result::Result<(), Issue> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(issue(key, format!("must be > 0, got {x}")))
    }
}

impl SimConfig {
    /// Canonical JSON form: fixed field order, shortest round-trip floats.
    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn dim(&self) -> usize {
        (2.0 * self.j).round() as usize + 1
    }

    fn setup(&self) -> std::result::Result<Setup, Issue> {
        let two_j = 2.0 * self.j;
        if !self.j.is_finite()
            || self.j <= 0.0
            || (two_j - two_j.round()).abs() > 1e-12
            || two_j > 1e6
        {
            return Err(issue(
                "J",
                format!("must be a positive multiple of 1/2, got {}", self.j),
            ));
        }
        let ops = SpinOperators::new(self.j).map_err(|e| issue("J", e.to_string()))?;
        let n = ops.dim();
        if !(1..=n).contains(&self.f) {
            return Err(issue("f", format!("must be in 1..={n}, got {}", self.f)));
        }
        let rho0 = match &self.initial {
            Initial::Eigenstate(k) => {
                if !(1..=n).contains(k) {
                    return Err(issue(
                        "initial",
                        format!("eigenstate must be in 1..={n}, got {k}"),
                    ));
                }
                ops.eigenstate(*k)
                    .map_err(|e| issue("initial", e.to_string()))?
            }
            Initial::MatrixFile(path) => load_matrix(path, n).map_err(|m| issue("initial", m))?,
        };
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(issue(
                "eta",
                format!("must satisfy 0 < eta <= 1, got {}", self.eta),
            ));
        }
        positive("dt", self.dt)?;
        positive("T", self.horizon)?;
        if self.horizon < self.dt {
            return Err(issue(
                "T",
                format!("must be at least dt = {}, got {}", self.dt, self.horizon),
            ));
        }
        if self.m == 0 {
            return Err(issue("M", "must be >= 1, got 0"));
        }
        if self.stride == 0 {
            return Err(issue("stride", "must be >= 1, got 0"));
        }
        positive("gamma", self.gamma)?;
        if !(self.gamma_a > 0.0 && self.gamma_a < 1.0) {
            return Err(issue(
                "gamma_a",
                format!("must satisfy 0 < gamma_a < 1, got {}", self.gamma_a),
            ));
        }
        positive("t_cap", self.t_cap)?;
        if let Some(t0) = self.t0 {
            if !(t0 > 0.0 && t0 <= self.t_cap) {
                return Err(issue(
                    "t0",
                    format!("must satisfy 0 < t0 <= t_cap = {}, got {t0}", self.t_cap),
                ));
            }
        }
        positive("dt_ode", self.dt_ode)?;
        if self.output.as_os_str().is_empty() {
            return Err(issue("output", "must not be empty"));
        }
        let step = SdeStepConfig::new(self.dt, self.eta).map_err(|e| issue("dt", e.to_string()))?;
        let trajectory = TrajectoryConfig::new(self.horizon, step)
            .map_err(|e| issue("T", e.to_string()))?
            .with_stride(self.stride);
        let policy = match self.control {
            ControlMode::Switching => ControlPolicy::Switching(
                ControllerState::new(self.gamma, self.f, &ops, &rho0)
                    .map_err(|e| issue("gamma", e.to_string()))?,
            ),
            ControlMode::Constant(u) => ControlPolicy::Constant(u),
        };
        Ok(Setup {
            ops,
            rho0,
            step,
            trajectory,
            policy,
        })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixFile {
    re: Vec<Vec<f64>>,
    #[serde(default)]
    im: Option<Vec<Vec<f64>>>,
}

fn load_matrix(path: &Path, n: usize) -> std::result::Result<QuantumState, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let file: MatrixFile =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let square = |rows: &Vec<Vec<f64>>| rows.len() == n && rows.iter().all(|r| r.len() == n);
    if !square(&file.re) || file.im.as_ref().is_some_and(|im| !square(im)) {
        return Err(format!("matrix in {} must be {n}x{n}", path.display()));
    }
    let m = CMatrix::from_fn(n, n, |r, c| {
        C64::new(file.re[r][c], file.im.as_ref().map_or(0.0, |im| im[r][c]))
    });
    QuantumState::new(m, &ToleranceConfig::default())
        .map_err(|e| format!("matrix in {}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn control_mode_parsing() {
        assert_eq!("mh".parse::<ControlMode>().unwrap(), ControlMode::Switching);
        assert_eq!(
            "constant:1".parse::<ControlMode>().unwrap(),
            ControlMode::Constant(1.0)
        );
        assert_eq!(
            "constant:-0.25".parse::<ControlMode>().unwrap(),
            ControlMode::Constant(-0.25)
        );
        assert!("constant:".parse::<ControlMode>().is_err());
        assert!("constant:inf".parse::<ControlMode>().is_err());
        assert!("bang".parse::<ControlMode>().is_err());
        assert_eq!(ControlMode::Constant(1.0).to_string(), "constant:1");
    }

    #[test]
    fn canonical_form_round_trips() {
        for p in [Preset::Fig1, Preset::Fig2, Preset::AcceptanceN3] {
            let text = p.config().to_canonical_json();
            let back: SimConfig = serde_json::from_str(&text).unwrap();
            assert_eq!(back, p.config());
            assert_eq!(back.to_canonical_json(), text);
        }
        let odd = SimConfig {
            dt: 0.1 + 0.2,
            t0: Some(1.0 / 3.0),
            control: ControlMode::Constant(0.7),
            ..SimConfig::default()
        };
        let text = odd.to_canonical_json();
        assert_eq!(
            serde_json::from_str::<SimConfig>(&text)
                .unwrap()
                .to_canonical_json(),
            text
        );
    }

    #[test]
    fn presets_validate() {
        for p in [Preset::Fig1, Preset::Fig2, Preset::AcceptanceN3] {
            let args = ConfigArgs {
                preset: Some(p),
                ..ConfigArgs::default()
            };
            let r = resolve(&args).unwrap();
            assert_eq!(r.setup.ops.dim(), r.config.dim());
        }
        assert!(resolve(&ConfigArgs::default()).is_ok());
    }

    #[test]
    fn flag_errors_name_the_flag() {
        let args = ConfigArgs {
            gamma: Some(0.0),
            ..ConfigArgs::default()
        };
        let msg = resolve(&args).unwrap_err().to_string();
        assert!(msg.contains("--gamma: gamma must be > 0"), "{msg}");

        let args = ConfigArgs {
            preset: Some(Preset::Fig1),
            f: Some(22),
            ..ConfigArgs::default()
        };
        let msg = resolve(&args).unwrap_err().to_string();
        assert!(msg.contains("f must be in 1..=21"), "{msg}");
    }

    #[test]
    fn key_lines() {
        let text = "{\n  \"gamma\": 0.1,\n  \"gamma_a\" : 2\n}";
        assert_eq!(key_line(text, "gamma"), Some(2));
        assert_eq!(key_line(text, "gamma_a"), Some(3));
        assert_eq!(key_line(text, "eta"), None);
    }

    #[test]
    fn rejects_half_integer_violations() {
        for j in [0.0, -1.0, 0.3, f64::NAN] {
            let args = ConfigArgs {
                j: Some(j),
                ..ConfigArgs::default()
            };
            let msg = resolve(&args).unwrap_err().to_string();
            assert!(
                msg.contains("J must be a positive multiple of 1/2"),
                "{msg}"
            );
        }
    }
}
