//! Experiment configuration: a JSON document with a fixed set of fields.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

/// The experiments the runner knows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    AsymptoticSweep,
    CoarseConvergence,
    GoeDiagnostics,
    TapOptimize,
    SubspaceResidual,
    FiniteFe,
    GroundState,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::AsymptoticSweep => "asymptotic-sweep",
            Experiment::CoarseConvergence => "coarse-convergence",
            Experiment::GoeDiagnostics => "goe-diagnostics",
            Experiment::TapOptimize => "tap-optimize",
            Experiment::SubspaceResidual => "subspace-residual",
            Experiment::FiniteFe => "finite-fe",
            Experiment::GroundState => "ground-state",
        }
    }

    /// Experiments whose rows depend on a random seed.
    pub fn is_stochastic(self) -> bool {
        !matches!(self, Experiment::AsymptoticSweep | Experiment::CoarseConvergence)
    }

    /// Experiments whose rows need a GOE sample.
    pub fn uses_samples(self) -> bool {
        self.uses_n() && self != Experiment::CoarseConvergence
    }

    fn uses_h(self) -> bool {
        !matches!(
            self,
            Experiment::CoarseConvergence | Experiment::GoeDiagnostics
        )
    }

    fn uses_n(self) -> bool {
        self != Experiment::AsymptoticSweep
    }

    fn min_n(self) -> usize {
        match self {
            Experiment::GoeDiagnostics => 3,
            Experiment::FiniteFe => 4,
            Experiment::SubspaceResidual => 16,
            _ => 2,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub beta_grid: Vec<f64>,
    #[serde(default)]
    pub h_grid: Vec<f64>,
    #[serde(rename = "N_list", default)]
    pub n_list: Vec<usize>,
    #[serde(rename = "K_list", default)]
    pub k_list: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub emit_svg: bool,
}

/// A rejected configuration.
#[derive(Debug)]
pub enum ConfigError {
    /// The document is not valid JSON or does not match the schema.
    Parse(serde_json::Error),
    /// A field holds a value the experiment cannot use.
    Invalid { field: &'static str, message: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Parse(e) => write!(f, "config parse error: {e}"),
            ConfigError::Invalid { field, message } => write!(f, "invalid config field `{field}`: {message}"),
        }
    }
}

impl std::error::Error for ConfigError {}

fn invalid<T>(field: &'static str, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid {
        field,
        message: message.into(),
    })
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    serde_json::from_str(text).map_err(ConfigError::Parse)
}

pub fn to_json(config: &ExperimentConfig) -> String {
    serde_json::to_string_pretty(config).expect("config serializes")
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let e = self.experiment;
        if self.beta_grid.is_empty() {
            return invalid("beta_grid", "must be nonempty");
        }
        if let Some(b) = self.beta_grid.iter().find(|b| !b.is_finite() || **b < 0.0) {
            return invalid("beta_grid", format!("{b} is not a finite nonnegative number"));
        }
        if e != Experiment::FiniteFe && e != Experiment::SubspaceResidual && self.beta_grid.contains(&0.0) {
            return invalid("beta_grid", format!("{e} needs beta > 0"));
        }
        if e == Experiment::CoarseConvergence {
            if let Some(b) = self.beta_grid.iter().find(|b| **b > std::f64::consts::FRAC_1_SQRT_2) {
                return invalid("beta_grid", format!("{b} exceeds 1/sqrt(2)"));
            }
        }
        if e.uses_h() {
            if self.h_grid.is_empty() {
                return invalid("h_grid", format!("must be nonempty for {e}"));
            }
            if let Some(h) = self.h_grid.iter().find(|h| !h.is_finite() || **h < 0.0) {
                return invalid("h_grid", format!("{h} is not a finite nonnegative number"));
            }
        }
        if e.uses_n() {
            if self.n_list.is_empty() {
                return invalid("N_list", format!("must be nonempty for {e}"));
            }
            if let Some(n) = self.n_list.iter().find(|n| **n < e.min_n()) {
                return invalid("N_list", format!("{n} is below the minimum {} for {e}", e.min_n()));
            }
        }
        if e == Experiment::CoarseConvergence {
            if self.k_list.is_empty() {
                return invalid("K_list", "must be nonempty for coarse-convergence");
            }
            let n_min = self.n_list.iter().copied().min().unwrap_or(0);
            if let Some(k) = self.k_list.iter().find(|k| **k < 1 || **k > n_min) {
                return invalid("K_list", format!("{k} is outside [1, min N = {n_min}]"));
            }
        }
        if e.is_stochastic() && self.seeds.is_empty() {
            return invalid("seeds", format!("must be nonempty for {e}"));
        }
        Ok(())
    }
}
