//! JSON experiment configurations. Relative input paths resolve against the
//! config file's directory; output paths resolve against the working
//! directory unless `--out` overrides them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cgail_core::mdp::soft_value_iteration;
use cgail_core::onestep::{Integrator, ScalarSystemParams, DEFAULT_DT};
use cgail_core::stability::{AuditSettings, ParamRanges};
use cgail_core::{fixtures, LabError, PolicyTable, TabularMdp, TrainConfig};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::CliError;

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Either a built-in fixture or an MDP file plus an expert (a policy table
/// file or a soft-value-iteration temperature).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpSource {
    pub fixture: Option<String>,
    pub mdp_path: Option<PathBuf>,
    pub expert_path: Option<PathBuf>,
    pub expert_temperature: Option<f64>,
}

impl MdpSource {
    pub fn resolve(&self, base: &Path) -> Result<(TabularMdp, PolicyTable), CliError> {
        match (&self.fixture, &self.mdp_path) {
            (Some(name), None) => {
                fixtures::builtin(name).ok_or_else(|| CliError::Config(format!("unknown fixture `{name}`")))
            }
            (None, Some(path)) => {
                let mdp = TabularMdp::from_json_file(base.join(path))?;
                let expert = match (&self.expert_path, self.expert_temperature) {
                    (Some(p), None) => {
                        let table: Vec<Vec<f64>> = load(&base.join(p))?;
                        let expert = PolicyTable::new(table)?;
                        expert.check_shape(&mdp)?;
                        expert
                    }
                    (None, Some(t)) => soft_value_iteration(&mdp, t)?,
                    _ => {
                        return Err(CliError::Config(
                            "mdp: give exactly one of `expert_path` or `expert_temperature`".into(),
                        ))
                    }
                };
                Ok((mdp, expert))
            }
            _ => Err(CliError::Config("mdp: give exactly one of `fixture` or `mdp_path`".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

fn default_true() -> bool {
    true
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub params: Vec<ScalarSystemParams>,
    pub init: Point,
    #[serde(default = "default_true")]
    pub controlled: bool,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub steps: usize,
    #[serde(default)]
    pub integrator: Integrator,
    pub output_dir: PathBuf,
}

fn default_grid() -> usize {
    20
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriaConfig {
    pub params: Vec<ScalarSystemParams>,
    #[serde(default = "default_true")]
    pub controlled: bool,
    #[serde(default = "default_grid")]
    pub grid: usize,
    pub output: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub ranges: ParamRanges,
    pub resolution: usize,
    #[serde(default)]
    pub settings: AuditSettingsInput,
    pub output: PathBuf,
}

/// Audit settings with every field optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSettingsInput {
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    pub tolerance: Option<f64>,
    pub offset: Option<f64>,
}

impl AuditSettingsInput {
    pub fn build(&self) -> AuditSettings {
        let d = AuditSettings::default();
        AuditSettings {
            dt: self.dt.unwrap_or(d.dt),
            horizon: self.horizon.unwrap_or(d.horizon),
            tolerance: self.tolerance.unwrap_or(d.tolerance),
            offset: self.offset.unwrap_or(d.offset),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub mdp: MdpSource,
    pub lambda: f64,
    pub dt: f64,
    pub steps: usize,
    pub output: PathBuf,
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_window() -> usize {
    50
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFileConfig {
    pub mdp: MdpSource,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_window")]
    pub window: usize,
    pub output_dir: PathBuf,
    /// Worker threads for concurrent runs; defaults to the rayon default.
    pub parallelism: Option<usize>,
    #[serde(default)]
    pub train: TrainConfig,
    /// Axis name to explicit value list; the runs are the cartesian product.
    #[serde(default)]
    pub sweep: BTreeMap<String, Vec<f64>>,
}

pub const SWEEP_AXES: &[&str] = &["k", "lambda", "alpha", "lr_disc", "lr_policy"];

/// Sets a numeric training parameter by name.
pub fn set_axis(config: &mut TrainConfig, axis: &str, value: f64) -> Result<(), CliError> {
    match axis {
        "k" => config.k = value,
        "lambda" => config.lambda = value,
        "alpha" => config.alpha = value,
        "lr_disc" => config.lr_disc = value,
        "lr_policy" => config.lr_policy = value,
        _ => {
            return Err(CliError::Config(format!(
                "unknown sweep axis `{axis}` (expected one of {})",
                SWEEP_AXES.join(", ")
            )))
        }
    }
    Ok(())
}

/// Parses `name=v1,v2,...`.
pub fn parse_sweep(spec: &str) -> Result<(String, Vec<f64>), CliError> {
    let (name, values) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("sweep `{spec}` is not of the form name=v1,v2")))?;
    let values = values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("sweep `{name}`: `{v}` is not a number")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((name.trim().to_string(), values))
}

impl From<LabError> for CliError {
    fn from(e: LabError) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}
