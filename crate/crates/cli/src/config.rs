//! Experiment configuration: JSON schema, defaults and validation.
//!
//! A config names one `command` and carries exactly one matching block,
//! keyed by the command name with `-` replaced by `_`:
//!
//! ```json
//! { "schema_version": "1.0", "command": "ldp-lower", "model": {...}, "ldp_lower": {...} }
//! ```

use std::path::{Path, PathBuf};

use fwspde_core::action::OptimizerOptions;
use fwspde_core::exit::{BallNorm, BoundaryCell};
use fwspde_core::models::{DriftSpec, Model, ModelSpec, NoiseSpec, Tolerances};
use fwspde_core::skeleton::{ControlPath, TimeGrid};
use fwspde_core::spectral::{BasisSpec, SpectralField};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: &str = "1.0";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Simulate,
    Skeleton,
    Action,
    Quasipotential,
    LdpLower,
    LdpUpper,
    Sweep,
    ExitScaling,
    ExitPlace,
    Verify,
}

impl CommandKind {
    pub const ALL: [CommandKind; 10] = [
        CommandKind::Simulate,
        CommandKind::Skeleton,
        CommandKind::Action,
        CommandKind::Quasipotential,
        CommandKind::LdpLower,
        CommandKind::LdpUpper,
        CommandKind::Sweep,
        CommandKind::ExitScaling,
        CommandKind::ExitPlace,
        CommandKind::Verify,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Simulate => "simulate",
            CommandKind::Skeleton => "skeleton",
            CommandKind::Action => "action",
            CommandKind::Quasipotential => "quasipotential",
            CommandKind::LdpLower => "ldp-lower",
            CommandKind::LdpUpper => "ldp-upper",
            CommandKind::Sweep => "sweep",
            CommandKind::ExitScaling => "exit-scaling",
            CommandKind::ExitPlace => "exit-place",
            CommandKind::Verify => "verify",
        }
    }

    pub fn block_key(self) -> String {
        self.name().replace('-', "_")
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimBlock {
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Brownian modes kept; all noise modes when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_truncation: Option<usize>,
}

fn default_eps() -> f64 {
    0.1
}

impl Default for SimBlock {
    fn default() -> Self {
        SimBlock {
            eps: default_eps(),
            noise_truncation: None,
        }
    }
}

fn default_drift() -> DriftSpec {
    DriftSpec::None
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub basis: BasisSpec,
    #[serde(default = "default_drift")]
    pub drift: DriftSpec,
    pub noise: NoiseSpec,
    pub horizon: f64,
    pub dt: f64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub sim: SimBlock,
}

impl ModelConfig {
    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            basis: self.basis.clone(),
            drift: self.drift.clone(),
            noise: self.noise.clone(),
            horizon: self.horizon,
            dt: self.dt,
            tolerances: self.tolerances.clone(),
        }
    }
}

/// A control path on the model grid.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlSpec {
    #[default]
    Zero,
    Constant { value: Vec<f64> },
    /// `u(t) = amplitude exp(-rate (T - t))`.
    Exponential { amplitude: Vec<f64>, rate: f64 },
    /// Node values on a uniform grid over `[0, T]` (`values.len() - 1` steps).
    Nodes { values: Vec<Vec<f64>> },
}

impl ControlSpec {
    pub fn build(&self, model: &Model, path: &str) -> Result<ControlPath, CliError> {
        let grid = TimeGrid::of_model(model);
        let m = model.n_noise_modes();
        let check = |v: &[f64], at: String| {
            if v.len() != m {
                Err(CliError::range(at, format!("expected {m} noise-mode values, got {}", v.len())))
            } else if v.iter().any(|x| !x.is_finite()) {
                Err(CliError::range(at, "values must be finite"))
            } else {
                Ok(())
            }
        };
        let u = match self {
            ControlSpec::Zero => ControlPath::zeros(grid, m),
            ControlSpec::Constant { value } => {
                check(value, format!("{path}.value"))?;
                ControlPath::constant(grid, value.clone())?
            }
            ControlSpec::Exponential { amplitude, rate } => {
                check(amplitude, format!("{path}.amplitude"))?;
                if !rate.is_finite() {
                    return Err(CliError::range(format!("{path}.rate"), "must be finite"));
                }
                let t_end = grid.t_end();
                ControlPath::from_fn(grid, |t| {
                    let s = (-rate * (t_end - t)).exp();
                    amplitude.iter().map(|a| a * s).collect()
                })?
            }
            ControlSpec::Nodes { values } => {
                if values.len() < 2 {
                    return Err(CliError::range(format!("{path}.values"), "need at least two nodes"));
                }
                for (i, v) in values.iter().enumerate() {
                    check(v, format!("{path}.values[{i}]"))?;
                }
                let g = TimeGrid::new(grid.t_end(), values.len() - 1)?;
                ControlPath::new(g, values.clone())?
            }
        };
        Ok(u)
    }
}

fn default_paths_ldp() -> usize {
    100_000
}

fn default_eps_list() -> Vec<f64> {
    vec![0.5, 0.33, 0.25, 0.2]
}

fn default_target_tol() -> f64 {
    1e-3
}

fn default_penalty() -> f64 {
    10.0
}

fn default_one() -> usize {
    1
}

fn default_lower_tol() -> f64 {
    0.35
}

fn default_upper_tol() -> f64 {
    0.15
}

fn default_qp_horizons() -> Vec<f64> {
    vec![2.0, 4.0, 8.0, 16.0]
}

fn default_eta() -> f64 {
    0.2
}

fn default_max_steps() -> u64 {
    100_000_000
}

fn default_norm() -> BallNorm {
    BallNorm::L2
}

fn default_record() -> Record {
    Record::Paths
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Record {
    /// Every node of every path (`paths.csv`).
    Paths,
    /// Per-node sample moments over paths (`moments.csv`).
    Moments,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default = "default_one")]
    pub n_paths: usize,
    #[serde(default)]
    pub control: ControlSpec,
    #[serde(default = "default_record")]
    pub record: Record,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub control: ControlSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    pub target: Vec<f64>,
    #[serde(default = "default_target_tol")]
    pub target_tol: f64,
    /// Control-grid steps; the model grid when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_steps: Option<usize>,
    #[serde(default = "default_penalty")]
    pub penalty_weight: f64,
    #[serde(default)]
    pub optimizer: OptimizerOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum QpTargetConfig {
    Point { y: Vec<f64> },
    Points { ys: Vec<Vec<f64>> },
    /// The points `origin +- radius e_k`.
    BallBoundary { radius: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuasipotentialBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Vec<f64>>,
    pub target: QpTargetConfig,
    #[serde(default = "default_qp_horizons")]
    pub horizons: Vec<f64>,
    #[serde(default = "default_target_tol")]
    pub tol: f64,
    #[serde(default = "default_penalty")]
    pub penalty_weight: f64,
    #[serde(default)]
    pub optimizer: OptimizerOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdpLowerBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    /// Control generating the reference path.
    pub control: ControlSpec,
    pub delta: f64,
    #[serde(default = "default_eps_list")]
    pub eps_list: Vec<f64>,
    #[serde(default = "default_paths_ldp")]
    pub n_paths: usize,
    #[serde(default = "default_lower_tol")]
    pub tolerance_margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdpUpperBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    pub s0: f64,
    pub delta: f64,
    #[serde(default = "default_eps_list")]
    pub eps_list: Vec<f64>,
    #[serde(default = "default_paths_ldp")]
    pub n_paths: usize,
    #[serde(default = "default_upper_tol")]
    pub tolerance_margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    pub radius: f64,
    pub n_directions: usize,
    pub control: ControlSpec,
    pub delta: f64,
    #[serde(default = "default_eps_list")]
    pub eps_list: Vec<f64>,
    #[serde(default = "default_paths_ldp")]
    pub n_paths: usize,
    #[serde(default = "default_lower_tol")]
    pub tolerance_margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitScalingBlock {
    pub radius: f64,
    #[serde(default = "default_norm")]
    pub norm: BallNorm,
    /// Equilibrium and domain centre; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    /// Start of the paths; the centre when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    pub eps_list: Vec<f64>,
    pub n_paths: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// `V(O, boundary)`; computed by the quasipotential solver when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_ref: Option<f64>,
    #[serde(default = "default_qp_horizons")]
    pub qp_horizons: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitPlaceBlock {
    pub radius: f64,
    #[serde(default = "default_norm")]
    pub norm: BallNorm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    pub eps: f64,
    pub n_paths: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    pub cells: Vec<BoundaryCell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_ref: Option<f64>,
    #[serde(default = "default_qp_horizons")]
    pub qp_horizons: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyBlock {
    pub radius: f64,
    #[serde(default = "default_norm")]
    pub norm: BallNorm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    pub probes: Vec<Vec<f64>>,
    pub t0: f64,
    pub rho: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: String,
    pub model: ModelConfig,
    pub command: CommandKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skeleton: Option<SkeletonBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<ActionBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quasipotential: Option<QuasipotentialBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ldp_lower: Option<LdpLowerBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ldp_upper: Option<LdpUpperBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_scaling: Option<ExitScalingBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_place: Option<ExitPlaceBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub master_seed: u64,
}

/// Parses and validates a config from JSON text.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::Parse {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    if let Some(cmd) = value.get("command").and_then(|c| c.as_str()) {
        if CommandKind::parse(cmd).is_none() {
            let valid: Vec<&str> = CommandKind::ALL.iter().map(|c| c.name()).collect();
            return Err(CliError::schema(
                "command",
                format!("unknown command {cmd:?}; valid commands: {}", valid.join(", ")),
            ));
        }
    }
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        CliError::schema(if path == "." { "(root)".to_string() } else { path }, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| CliError::Parse {
        line: 0,
        column: 0,
        msg: format!("config is not valid UTF-8: {e}"),
    })?;
    parse_config(&text)
}

/// Canonical JSON text of a config; `parse_config(&emit_config(c)) == c`.
pub fn emit_config(cfg: &ExperimentConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("configs serialize") + "\n"
}

fn positive(path: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::range(path, format!("must be positive and finite, got {v}")))
    }
}

fn nonneg(path: &str, v: f64) -> Result<(), CliError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::range(path, format!("must be nonnegative and finite, got {v}")))
    }
}

fn at_least_one(path: &str, v: usize) -> Result<(), CliError> {
    if v >= 1 {
        Ok(())
    } else {
        Err(CliError::range(path, "must be at least 1"))
    }
}

fn eps_grid(path: &str, eps: &[f64]) -> Result<(), CliError> {
    if eps.is_empty() {
        return Err(CliError::range(path, "must not be empty"));
    }
    for (i, e) in eps.iter().enumerate() {
        positive(&format!("{path}[{i}]"), *e)?;
    }
    if let Some(i) = eps.windows(2).position(|w| w[1] >= w[0]) {
        return Err(CliError::range(
            format!("{path}[{}]", i + 1),
            "eps values must be strictly decreasing",
        ));
    }
    Ok(())
}

fn state(path: &str, v: &Option<Vec<f64>>, n: usize) -> Result<(), CliError> {
    if let Some(v) = v {
        if v.len() != n {
            return Err(CliError::range(path, format!("expected {n} coefficients, got {}", v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(CliError::range(path, "coefficients must be finite"));
        }
    }
    Ok(())
}

fn tol_margin(path: &str, v: f64) -> Result<(), CliError> {
    if v.is_nan() {
        Err(CliError::range(path, "must not be NaN"))
    } else {
        Ok(())
    }
}

impl ExperimentConfig {
    /// Minimal config for `command` on the single-mode OU model.
    pub fn example(command: CommandKind) -> Self {
        let spec = ModelSpec::ornstein_uhlenbeck(1.0, 0.01);
        let mut cfg = ExperimentConfig {
            schema_version: SCHEMA_VERSION.to_string(),
            model: ModelConfig {
                basis: spec.basis,
                drift: spec.drift,
                noise: spec.noise,
                horizon: spec.horizon,
                dt: spec.dt,
                tolerances: spec.tolerances,
                sim: SimBlock::default(),
            },
            command,
            simulate: None,
            skeleton: None,
            action: None,
            quasipotential: None,
            ldp_lower: None,
            ldp_upper: None,
            sweep: None,
            exit_scaling: None,
            exit_place: None,
            verify: None,
            output_dir: None,
            master_seed: 0,
        };
        match command {
            CommandKind::Simulate => {
                cfg.simulate = Some(SimulateBlock {
                    x0: None,
                    n_paths: 10,
                    control: ControlSpec::Zero,
                    record: Record::Paths,
                })
            }
            CommandKind::Skeleton => {
                cfg.skeleton = Some(SkeletonBlock {
                    x0: Some(vec![0.5]),
                    control: ControlSpec::Constant { value: vec![0.2] },
                })
            }
            CommandKind::Action => {
                cfg.action = Some(ActionBlock {
                    x0: None,
                    target: vec![1.0],
                    target_tol: default_target_tol(),
                    control_steps: None,
                    penalty_weight: default_penalty(),
                    optimizer: OptimizerOptions::default(),
                })
            }
            CommandKind::Quasipotential => {
                cfg.quasipotential = Some(QuasipotentialBlock {
                    origin: None,
                    target: QpTargetConfig::BallBoundary { radius: 1.0 },
                    horizons: default_qp_horizons(),
                    tol: default_target_tol(),
                    penalty_weight: default_penalty(),
                    optimizer: OptimizerOptions::default(),
                })
            }
            CommandKind::LdpLower => {
                cfg.ldp_lower = Some(LdpLowerBlock {
                    x0: None,
                    control: ControlSpec::Zero,
                    delta: 0.5,
                    eps_list: vec![0.2, 0.1, 0.05],
                    n_paths: 10_000,
                    tolerance_margin: 0.05,
                })
            }
            CommandKind::LdpUpper => {
                cfg.ldp_upper = Some(LdpUpperBlock {
                    x0: None,
                    s0: 0.5,
                    delta: 0.4,
                    eps_list: vec![0.2, 0.1],
                    n_paths: 2_000,
                    tolerance_margin: default_upper_tol(),
                })
            }
            CommandKind::Sweep => {
                cfg.sweep = Some(SweepBlock {
                    center: None,
                    radius: 1.0,
                    n_directions: 1,
                    control: ControlSpec::Constant { value: vec![1.0] },
                    delta: 0.4,
                    eps_list: vec![0.5, 0.33, 0.25],
                    n_paths: 10_000,
                    tolerance_margin: default_lower_tol(),
                })
            }
            CommandKind::ExitScaling => {
                cfg.exit_scaling = Some(ExitScalingBlock {
                    radius: 1.0,
                    norm: BallNorm::L2,
                    center: None,
                    x0: None,
                    eps_list: vec![0.5, 0.4],
                    n_paths: 100,
                    max_steps: default_max_steps(),
                    eta: default_eta(),
                    v_ref: Some(1.0),
                    qp_horizons: default_qp_horizons(),
                })
            }
            CommandKind::ExitPlace => {
                cfg.exit_place = Some(ExitPlaceBlock {
                    radius: 1.0,
                    norm: BallNorm::L2,
                    center: None,
                    x0: None,
                    eps: 0.5,
                    n_paths: 200,
                    max_steps: default_max_steps(),
                    cells: vec![
                        BoundaryCell {
                            name: "plus".into(),
                            axis: vec![1.0],
                            min_cos: 0.0,
                            two_sided: false,
                        },
                        BoundaryCell {
                            name: "minus".into(),
                            axis: vec![-1.0],
                            min_cos: 1e-12,
                            two_sided: false,
                        },
                    ],
                    v_ref: Some(1.0),
                    qp_horizons: default_qp_horizons(),
                })
            }
            CommandKind::Verify => {
                cfg.verify = Some(VerifyBlock {
                    radius: 1.0,
                    norm: BallNorm::L2,
                    center: None,
                    probes: vec![vec![0.0], vec![0.9], vec![-0.9]],
                    t0: 3.0,
                    rho: 0.1,
                })
            }
        }
        cfg
    }

    fn blocks_present(&self) -> Vec<CommandKind> {
        let flags = [
            self.simulate.is_some(),
            self.skeleton.is_some(),
            self.action.is_some(),
            self.quasipotential.is_some(),
            self.ldp_lower.is_some(),
            self.ldp_upper.is_some(),
            self.sweep.is_some(),
            self.exit_scaling.is_some(),
            self.exit_place.is_some(),
            self.verify.is_some(),
        ];
        CommandKind::ALL
            .into_iter()
            .zip(flags)
            .filter(|(_, f)| *f)
            .map(|(c, _)| c)
            .collect()
    }

    /// Builds the validated model.
    pub fn build_model(&self) -> Result<Model, CliError> {
        Model::new(self.model.spec()).map_err(|e| match e {
            fwspde_core::Error::InvalidInput(msg) => CliError::range("model", msg),
            other => CliError::Core(other),
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::schema(
                "schema_version",
                format!("unsupported version {:?}; expected {SCHEMA_VERSION:?}", self.schema_version),
            ));
        }
        let present = self.blocks_present();
        let key = self.command.block_key();
        if !present.contains(&self.command) {
            return Err(CliError::schema(key, format!("missing block for command {}", self.command.name())));
        }
        if let Some(extra) = present.iter().find(|c| **c != self.command) {
            return Err(CliError::schema(
                extra.block_key(),
                format!("exactly one command block allowed; command is {}", self.command.name()),
            ));
        }
        let m = &self.model;
        positive("model.horizon", m.horizon)?;
        positive("model.dt", m.dt)?;
        if m.dt > m.horizon {
            return Err(CliError::range("model.dt", "must not exceed model.horizon"));
        }
        nonneg("model.sim.eps", m.sim.eps)?;
        if let Some(t) = m.sim.noise_truncation {
            at_least_one("model.sim.noise_truncation", t)?;
            if t > m.noise.q_eigenvalues.len() {
                return Err(CliError::range(
                    "model.sim.noise_truncation",
                    format!("exceeds the {} noise modes", m.noise.q_eigenvalues.len()),
                ));
            }
        }
        positive("model.tolerances.picard_tol", m.tolerances.picard_tol)?;
        at_least_one("model.tolerances.max_picard_iters", m.tolerances.max_picard_iters)?;
        positive("model.tolerances.blowup_factor", m.tolerances.blowup_factor)?;
        if let Some(v) = m.tolerances.subinterval_len {
            positive("model.tolerances.subinterval_len", v)?;
        }
        if let Some(v) = m.tolerances.cutoff_radius {
            positive("model.tolerances.cutoff_radius", v)?;
        }
        let model = self.build_model()?;
        let n = model.n_modes();
        if let Some(b) = &self.simulate {
            state("simulate.x0", &b.x0, n)?;
            at_least_one("simulate.n_paths", b.n_paths)?;
            b.control.build(&model, "simulate.control")?;
        }
        if let Some(b) = &self.skeleton {
            state("skeleton.x0", &b.x0, n)?;
            b.control.build(&model, "skeleton.control")?;
        }
        if let Some(b) = &self.action {
            state("action.x0", &b.x0, n)?;
            state("action.target", &Some(b.target.clone()), n)?;
            positive("action.target_tol", b.target_tol)?;
            positive("action.penalty_weight", b.penalty_weight)?;
            if let Some(s) = b.control_steps {
                at_least_one("action.control_steps", s)?;
            }
        }
        if let Some(b) = &self.quasipotential {
            state("quasipotential.origin", &b.origin, n)?;
            match &b.target {
                QpTargetConfig::Point { y } => state("quasipotential.target.y", &Some(y.clone()), n)?,
                QpTargetConfig::Points { ys } => {
                    if ys.is_empty() {
                        return Err(CliError::range("quasipotential.target.ys", "must not be empty"));
                    }
                    for (i, y) in ys.iter().enumerate() {
                        state(&format!("quasipotential.target.ys[{i}]"), &Some(y.clone()), n)?;
                    }
                }
                QpTargetConfig::BallBoundary { radius } => positive("quasipotential.target.radius", *radius)?,
            }
            if b.horizons.is_empty() {
                return Err(CliError::range("quasipotential.horizons", "must not be empty"));
            }
            for (i, t) in b.horizons.iter().enumerate() {
                positive(&format!("quasipotential.horizons[{i}]"), *t)?;
            }
            positive("quasipotential.tol", b.tol)?;
            positive("quasipotential.penalty_weight", b.penalty_weight)?;
        }
        if let Some(b) = &self.ldp_lower {
            state("ldp_lower.x0", &b.x0, n)?;
            b.control.build(&model, "ldp_lower.control")?;
            positive("ldp_lower.delta", b.delta)?;
            eps_grid("ldp_lower.eps_list", &b.eps_list)?;
            at_least_one("ldp_lower.n_paths", b.n_paths)?;
            tol_margin("ldp_lower.tolerance_margin", b.tolerance_margin)?;
        }
        if let Some(b) = &self.ldp_upper {
            state("ldp_upper.x0", &b.x0, n)?;
            nonneg("ldp_upper.s0", b.s0)?;
            positive("ldp_upper.delta", b.delta)?;
            eps_grid("ldp_upper.eps_list", &b.eps_list)?;
            at_least_one("ldp_upper.n_paths", b.n_paths)?;
            tol_margin("ldp_upper.tolerance_margin", b.tolerance_margin)?;
        }
        if let Some(b) = &self.sweep {
            state("sweep.center", &b.center, n)?;
            nonneg("sweep.radius", b.radius)?;
            if b.n_directions > n {
                return Err(CliError::range("sweep.n_directions", format!("at most {n} modes")));
            }
            b.control.build(&model, "sweep.control")?;
            positive("sweep.delta", b.delta)?;
            eps_grid("sweep.eps_list", &b.eps_list)?;
            at_least_one("sweep.n_paths", b.n_paths)?;
            tol_margin("sweep.tolerance_margin", b.tolerance_margin)?;
        }
        if let Some(b) = &self.exit_scaling {
            positive("exit_scaling.radius", b.radius)?;
            state("exit_scaling.center", &b.center, n)?;
            state("exit_scaling.x0", &b.x0, n)?;
            eps_grid("exit_scaling.eps_list", &b.eps_list)?;
            at_least_one("exit_scaling.n_paths", b.n_paths)?;
            if b.max_steps == 0 {
                return Err(CliError::range("exit_scaling.max_steps", "must be at least 1"));
            }
            positive("exit_scaling.eta", b.eta)?;
            if let Some(v) = b.v_ref {
                positive("exit_scaling.v_ref", v)?;
            } else if b.norm != BallNorm::L2 {
                return Err(CliError::range("exit_scaling.v_ref", "required for the sup-norm domain"));
            }
        }
        if let Some(b) = &self.exit_place {
            positive("exit_place.radius", b.radius)?;
            state("exit_place.center", &b.center, n)?;
            state("exit_place.x0", &b.x0, n)?;
            positive("exit_place.eps", b.eps)?;
            at_least_one("exit_place.n_paths", b.n_paths)?;
            if b.max_steps == 0 {
                return Err(CliError::range("exit_place.max_steps", "must be at least 1"));
            }
            for (i, c) in b.cells.iter().enumerate() {
                state(&format!("exit_place.cells[{i}].axis"), &Some(c.axis.clone()), n)?;
            }
            if let Some(v) = b.v_ref {
                positive("exit_place.v_ref", v)?;
            } else if b.norm != BallNorm::L2 {
                return Err(CliError::range("exit_place.v_ref", "required for the sup-norm domain"));
            }
        }
        if let Some(b) = &self.verify {
            positive("verify.radius", b.radius)?;
            state("verify.center", &b.center, n)?;
            for (i, p) in b.probes.iter().enumerate() {
                state(&format!("verify.probes[{i}]"), &Some(p.clone()), n)?;
            }
            positive("verify.t0", b.t0)?;
            positive("verify.rho", b.rho)?;
        }
        Ok(())
    }
}

/// `coeffs` as a field of the model basis, zero when absent.
pub fn field_or_zero(model: &Model, coeffs: &Option<Vec<f64>>) -> Result<SpectralField, CliError> {
    Ok(match coeffs {
        Some(c) => SpectralField::new(model.basis().clone(), c.clone())?,
        None => SpectralField::zeros(model.basis()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples_validate_and_round_trip() {
        for c in CommandKind::ALL {
            let cfg = ExperimentConfig::example(c);
            cfg.validate().unwrap();
            assert_eq!(parse_config(&emit_config(&cfg)).unwrap(), cfg);
        }
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(
            r#"{"schema_version": "1.0", "command": "simulate",
                "model": {"basis": {"kind": "dirichlet_interval", "n_modes": 1},
                          "noise": {"q_eigenvalues": [1.0], "g": {"kind": "constant", "c": 1.0}},
                          "horizon": 1.0, "dt": 0.01},
                "simulate": {}}"#,
        )
        .unwrap();
        assert_eq!(cfg.model.drift, DriftSpec::None);
        assert_eq!(cfg.model.sim.eps, 0.1);
        assert_eq!(cfg.master_seed, 0);
        assert_eq!(cfg.simulate.unwrap().n_paths, 1);
    }

    #[test]
    fn negative_eps_is_a_range_error() {
        let mut cfg = ExperimentConfig::example(CommandKind::Simulate);
        cfg.model.sim.eps = -1.0;
        let err = parse_config(&emit_config(&cfg)).unwrap_err();
        assert!(matches!(&err, CliError::Range { path, .. } if path == "model.sim.eps"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_command_lists_valid_ones() {
        let text = emit_config(&ExperimentConfig::example(CommandKind::Simulate))
            .replace("\"command\": \"simulate\"", "\"command\": \"teleport\"");
        let err = parse_config(&text).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, CliError::Schema { .. }));
        assert!(msg.contains("exit-scaling") && msg.contains("ldp-lower"), "{msg}");
    }

    #[test]
    fn schema_errors_carry_paths() {
        let text = emit_config(&ExperimentConfig::example(CommandKind::LdpLower))
            .replace("\"delta\": 0.5", "\"delta\": \"wide\"");
        let err = parse_config(&text).unwrap_err();
        assert!(matches!(&err, CliError::Schema { path, .. } if path == "ldp_lower.delta"), "{err}");
        let err = parse_config("{\"schema_version\": ").unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 1, .. }));
    }

    #[test]
    fn block_rules() {
        let mut cfg = ExperimentConfig::example(CommandKind::Simulate);
        cfg.skeleton = ExperimentConfig::example(CommandKind::Skeleton).skeleton;
        assert!(matches!(cfg.validate(), Err(CliError::Schema { path, .. }) if path == "skeleton"));
        let mut cfg = ExperimentConfig::example(CommandKind::Simulate);
        cfg.command = CommandKind::Verify;
        assert!(matches!(cfg.validate(), Err(CliError::Schema { path, .. }) if path == "verify"));
        let mut cfg = ExperimentConfig::example(CommandKind::LdpLower);
        cfg.ldp_lower.as_mut().unwrap().eps_list = vec![0.1, 0.2];
        assert!(matches!(cfg.validate(), Err(CliError::Range { path, .. }) if path == "ldp_lower.eps_list[1]"));
    }
}
