//! JSON configuration documents, one per subcommand. Unknown keys are
//! rejected everywhere.

use std::path::PathBuf;

use dephasing::bayes::ProtocolConfig;
use dephasing::frequentist::{FitConfig, InitialGuess, SearchConfig};
use dephasing::harness::ComparisonSpec;
use dephasing::{Family, NoiseModel, Schedule};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub model: NoiseModel,
    pub schedule: Schedule,
    #[serde(default)]
    pub seed: u64,
    /// Base name of the CSV and sidecar files.
    #[serde(default = "default_data_name")]
    pub name: String,
}

fn default_data_name() -> String {
    "data".into()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitCommandConfig {
    /// DataSet CSV; relative paths resolve against the config file.
    pub data: PathBuf,
    pub family: Family,
    pub fit: FitConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimalTimesConfig {
    pub family: Family,
    #[serde(default = "one")]
    pub t2: f64,
    /// `τ_c / T2` values, one output row each.
    #[serde(default)]
    pub ratios: Vec<f64>,
    /// `Δ_c · T2` for the displaced Lorentzian.
    #[serde(default)]
    pub delta_c: Option<f64>,
    /// Number of times; defaults to the parameter count.
    #[serde(default)]
    pub times: Option<usize>,
    #[serde(default)]
    pub search: SearchConfig,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BayesConfig {
    pub truth: NoiseModel,
    pub protocol: ProtocolConfig,
}

/// Second arm of a comparison.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum Against {
    Bayesian,
    Uniform { t_lo: f64, t_hi: f64, points: usize },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    /// `τ_c★` values in units of the template's `T2`.
    pub tau_c: Vec<f64>,
    /// `Δ_c★` values; omitted for OU truths.
    #[serde(default)]
    pub delta_c: Vec<f64>,
    /// Shot budgets; defaults to the template's.
    #[serde(default)]
    pub total_shots: Vec<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub spec: ComparisonSpec,
    #[serde(default = "default_against")]
    pub against: Against,
    #[serde(default)]
    pub sweep: Option<SweepGrid>,
}

fn default_against() -> Against {
    Against::Bayesian
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonMarkovConfig {
    pub kappa: Vec<f64>,
    pub delta_c: Vec<f64>,
    #[serde(default = "one")]
    pub g2n: f64,
    /// Integration horizon; automatic when absent.
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default = "default_boundary_tol")]
    pub boundary_tol: f64,
}

fn default_boundary_tol() -> f64 {
    1e-8
}

/// Applies a `--seed` override to the seed field of each config.
pub trait Seeded {
    fn seed(&self) -> u64;
    fn set_seed(&mut self, seed: u64);
}

impl Seeded for SimulateConfig {
    fn seed(&self) -> u64 {
        self.seed
    }
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
}

impl Seeded for FitCommandConfig {
    fn seed(&self) -> u64 {
        match self.fit.initial_guess {
            InitialGuess::RandomInBox { seed, .. } => seed,
            InitialGuess::Given { .. } => 0,
        }
    }
    fn set_seed(&mut self, s: u64) {
        if let InitialGuess::RandomInBox { seed, .. } = &mut self.fit.initial_guess {
            *seed = s;
        }
    }
}

impl Seeded for OptimalTimesConfig {
    fn seed(&self) -> u64 {
        0
    }
    fn set_seed(&mut self, _: u64) {}
}

impl Seeded for BayesConfig {
    fn seed(&self) -> u64 {
        self.protocol.seed
    }
    fn set_seed(&mut self, seed: u64) {
        self.protocol.seed = seed;
    }
}

impl Seeded for CompareConfig {
    fn seed(&self) -> u64 {
        self.spec.seed
    }
    fn set_seed(&mut self, seed: u64) {
        self.spec.seed = seed;
    }
}

impl Seeded for NonMarkovConfig {
    fn seed(&self) -> u64 {
        0
    }
    fn set_seed(&mut self, _: u64) {}
}
