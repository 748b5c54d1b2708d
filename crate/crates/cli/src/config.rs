//! Experiment configuration.
//!
//! A config is a TOML document (or the same structure as JSON) with one flat
//! table per component:
//!
//! ```toml
//! seed = 0
//! out = "runs/coin"
//!
//! [map]
//! name = "biased_coin"
//! mu = 0.3
//! eps = 0.1
//!
//! [loss]
//! name = "squared_affine"
//!
//! [dynamic]
//! kind = "rrm"
//! theta0 = [0.0]
//! ```
//!
//! Unknown keys are rejected. Parameters a component does not use are
//! rejected too, so a typo never silently falls back to a default.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use perfpred::dynamics::{SampleSchedule, SolverConfig};
use perfpred::{LossConstants, ParameterSpace};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Replace closed forms and exact supports by Monte Carlo where the
    /// procedure allows it.
    #[serde(default)]
    pub force_monte_carlo: bool,
    pub map: MapConfig,
    pub loss: LossConfig,
    /// Feasible set; the map's default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<ParameterSpace>,
    #[serde(default)]
    pub dynamic: DynamicConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapName {
    BiasedCoin,
    PointMassLinear,
    PointMassAffine,
    StepHalf,
    GaussianFamily,
    Strategic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub name: MapName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
}

/// Where the strategic map gets its base population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic {
        #[serde(default = "default_n")]
        n: usize,
        /// Columns including the outcome.
        #[serde(default = "default_m")]
        m: usize,
        #[serde(default = "default_strategic_count")]
        strategic_count: usize,
        #[serde(default)]
        seed: u64,
    },
    Csv {
        path: PathBuf,
        outcome: String,
        strategic: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        features: Option<Vec<String>>,
        /// Positive share after subsampling the majority class.
        #[serde(default = "default_balance", skip_serializing_if = "Option::is_none")]
        balance: Option<f64>,
        #[serde(default)]
        seed: u64,
    },
}

fn default_n() -> usize {
    2000
}
fn default_m() -> usize {
    11
}
fn default_strategic_count() -> usize {
    3
}
fn default_balance() -> Option<f64> {
    Some(0.45)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    SquaredAffine,
    SquaredLocation,
    Linear,
    HingeReg,
    LogisticL2,
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub name: LossName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Hinge weight; a value large enough for the oscillation argument when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    /// Strong convexity of the regularized losses. Logistic defaults to
    /// 1000/n on the strategic data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub intercept: bool,
    /// Overrides for the declared regularity constants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<LossConstants>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularize: Option<RegularizeConfig>,
}

/// Adds (α/2)‖θ − anchor‖² to the loss.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizeConfig {
    /// Defaults to √ε·β/(1 − ε).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Defaults to θ₀.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicKind {
    /// Diagnostics only.
    None,
    Rrm,
    Rgd,
    Rerm,
    Regd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicConfig {
    pub kind: DynamicKind,
    /// Starting point; the projection of the origin when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<f64>>,
    /// Gradient step; 2/(β + γ) when both constants are declared.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Draws per step where a population quantity has to be sampled.
    pub n_per_step: usize,
    /// Sample sizes for RERM and REGD; `n_per_step` draws per step when
    /// absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<SampleSchedule>,
    /// Target distance for the theoretical iteration bound.
    pub bound_delta: f64,
    pub solver: SolverConfig,
}

impl Default for DynamicConfig {
    fn default() -> Self {
        DynamicConfig {
            kind: DynamicKind::Rrm,
            theta0: None,
            eta: None,
            n_per_step: 10_000,
            schedule: None,
            bound_delta: 1e-6,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub sensitivity: bool,
    pub sensitivity_pairs: usize,
    pub sensitivity_samples: usize,
    pub brute_force: bool,
    pub lipschitz: bool,
    pub closeness: bool,
    pub stackelberg: bool,
    pub grid_resolution: usize,
    /// Monte Carlo size for PR on maps without a finite support.
    pub mc_samples: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            sensitivity: false,
            sensitivity_pairs: 20,
            sensitivity_samples: 10_000,
            brute_force: false,
            lipschitz: false,
            closeness: false,
            stackelberg: false,
            grid_resolution: 101,
            mc_samples: 100_000,
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML, or JSON for `.json` paths. A run manifest is accepted as
    /// well and yields the config it echoes.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let value: serde_json::Value = if is_json {
            serde_json::from_str(&text)
                .with_context(|| format!("parsing JSON config {}", path.display()))?
        } else {
            toml::from_str(&text)
                .with_context(|| format!("parsing TOML config {}", path.display()))?
        };
        Self::from_value(value).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Self::from_value(toml::from_str(text).context("parsing TOML config")?)
    }

    fn from_value(mut value: serde_json::Value) -> anyhow::Result<Self> {
        if value.get("library_version").is_some() {
            if let Some(inner) = value.get_mut("config").map(serde_json::Value::take) {
                value = inner;
            }
        }
        match serde_path_to_error::deserialize(value) {
            Ok(cfg) => Ok(cfg),
            Err(e) => {
                let path = e.path().to_string();
                let inner = e.into_inner();
                if path == "." {
                    bail!("{inner}")
                }
                bail!("{path}: {inner}")
            }
        }
    }
}
