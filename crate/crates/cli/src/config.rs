//! JSON experiment configuration. Unknown keys are rejected everywhere.

use crate::error::{CliError, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSpec>,
    /// The scheme for simulate, moments and bounds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<SchemeSpec>,
    /// Schemes compared by the figure commands.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schemes: Vec<LabeledScheme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleSpec>,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_n_traj")]
    pub n_traj: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub enforce_assumptions: bool,
    /// Starting point; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w1: Option<Vec<f64>>,
    /// Draws used to estimate E[D²] and Cov(D²) when no closed form exists.
    #[serde(default = "default_moment_samples")]
    pub moment_samples: usize,
    #[serde(default)]
    pub outputs: OutputSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk: Option<RiskSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSpec>,
}

fn default_k_max() -> usize {
    100
}
fn default_n_traj() -> usize {
    1000
}
fn default_true() -> bool {
    true
}
fn default_moment_samples() -> usize {
    100_000
}
fn default_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Generator(GeneratorSpec),
    /// CSV with a header row; the last column is y.
    File { path: PathBuf },
    Inline {
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        w_star: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        noise_std: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    /// Gaussian rows, a random subset scaled up, Y = Xw* + N(0, noise_std²).
    GaussianRescaled {
        n: usize,
        d: usize,
        rescale_fraction: f64,
        rescale_factor: f64,
        #[serde(default = "default_one")]
        entry_std: f64,
        #[serde(default)]
        unit_norm: bool,
        #[serde(default)]
        noise_std: f64,
        seed: u64,
    },
    /// Same design with a per-row noise level.
    Heteroscedastic {
        n: usize,
        d: usize,
        #[serde(default)]
        rescale_fraction: f64,
        #[serde(default = "default_one")]
        rescale_factor: f64,
        #[serde(default = "default_one")]
        entry_std: f64,
        #[serde(default)]
        unit_norm: bool,
        noise_map: NoiseMap,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        w_star: Option<Vec<f64>>,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseMap {
    PerRow { std: Vec<f64> },
    /// One level for the rescaled rows and another for the rest.
    Rescaled { rescaled_std: f64, other_std: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchemeSpec {
    Identity,
    /// p_i = 1/n.
    Uniform,
    Categorical {
        p: Vec<f64>,
    },
    /// p_i ∝ exp(sign·‖X_i‖₂).
    NormSoftmax {
        #[serde(default = "default_one")]
        sign: f64,
    },
    Bernoulli {
        p: Vec<f64>,
    },
    FixedDiagonal {
        c: Vec<f64>,
    },
    ContinuousIid {
        law: LawSpec,
        /// E[W], E[W²], E[W³], E[W⁴].
        moments: [f64; 4],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tau: Option<f64>,
    },
    /// b rows drawn without replacement, each weighted by sqrt(n/b).
    Minibatch {
        batch: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawSpec {
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, std: f64 },
    Laplace { location: f64, scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledScheme {
    pub label: String,
    pub scheme: SchemeSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Constant { alpha: AlphaSpec },
    /// α_k = α/k.
    Harmonic { alpha: AlphaSpec },
    Explicit { steps: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Value(f64),
    Rule(AlphaRule),
}

/// A step size derived from the problem. With several schemes in play the
/// smallest resulting α is used for all of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaRule {
    pub rule: AlphaRuleKind,
    pub factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaRuleKind {
    /// factor/‖XᵀX‖
    InverseXxNorm,
    /// factor/‖XᵀM₂X‖
    InverseWeightedNorm,
    /// factor·σ/(σ² + ‖X‖⁴‖Σ_D‖)
    VarianceStepBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_csv_dir")]
    pub csv_dir: PathBuf,
    #[serde(default = "default_true")]
    pub plot: bool,
}

fn default_csv_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            csv_dir: default_csv_dir(),
            plot: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSpec {
    /// Target W₂ radius for the point-mass budget.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// GMC constant; 10·‖w1 − ŵ‖ when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c3: Option<f64>,
}

fn default_epsilon() -> f64 {
    0.1
}

impl Default for BoundsSpec {
    fn default() -> Self {
        Self {
            epsilon: default_epsilon(),
            c3: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskSpec {
    #[serde(default = "default_n_rep")]
    pub n_rep: usize,
    /// Horizon of the risk curves; derived from the second-moment envelope when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_burn: Option<usize>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

fn default_n_rep() -> usize {
    2000
}
fn default_grid_points() -> usize {
    40
}

impl Default for RiskSpec {
    fn default() -> Self {
        Self {
            n_rep: default_n_rep(),
            k_burn: None,
            grid_points: default_grid_points(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    #[serde(default = "default_max_outcomes")]
    pub max_outcomes: u64,
    #[serde(default = "default_oracle_tol")]
    pub tolerance: f64,
    pub instances: Vec<OracleInstance>,
}

fn default_max_outcomes() -> u64 {
    1 << 16
}
fn default_oracle_tol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleInstance {
    pub name: String,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub scheme: SchemeSpec,
    pub schedule: ScheduleSpec,
    pub k_max: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w1: Option<Vec<f64>>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Read a config; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg = Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }
}
