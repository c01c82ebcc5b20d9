//! Run configuration, read from TOML. Every field has a default, so an empty
//! file (or no file) reproduces the reference pipeline.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tumorgrowth::forecast::DEFAULT_FRACTIONS;
use tumorgrowth::models::{Stage, TrainConfig, NODE_HIDDEN, UDE_HIDDEN};
use tumorgrowth::symrec::{DEFAULT_LAMBDA_RATIO, DEFAULT_SAMPLES};

use crate::CliError;

/// Carrying capacities (mm³) for subjects 1–10.
pub const DEFAULT_CAPACITIES: [f64; 10] = [
    1200.0, 2100.0, 1200.0, 1250.0, 900.0, 1350.0, 1100.0, 1350.0, 1100.0, 1300.0,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_path: PathBuf,
    pub subjects: Vec<u32>,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Interpolant samples used as training targets.
    pub n_collocation: usize,
    /// RK4 steps per unit of normalized time.
    pub solver_steps: usize,
    /// Feed normalized time to the networks as a second input.
    pub time_input: bool,
    pub capacity: CapacityConfig,
    pub gompertz: GompertzConfig,
    pub node: NetConfig,
    pub ude: NetConfig,
    pub forecast: ForecastConfig,
    pub symrec: SymrecConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapacityConfig {
    /// Used for subjects without an entry in `subjects`.
    pub default: f64,
    /// Subject id (as a string key) to capacity in mm³.
    pub subjects: BTreeMap<String, f64>,
}

/// Fixed-parameter Gompertz baseline solved in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GompertzConfig {
    /// Growth rate per day.
    pub a: f64,
    /// Carrying capacity in mm³.
    pub capacity: f64,
    /// RK4 steps over the measured span.
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub schedule: Vec<Stage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    pub fractions: Vec<f64>,
    /// Any of `"node"`, `"ude"`.
    pub variants: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SymrecConfig {
    pub n_samples: usize,
    /// Explicit penalty; overrides `lambda_ratio` when set.
    pub lambda: Option<f64>,
    pub lambda_ratio: f64,
    pub sig_figs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_path: PathBuf::from("data/tumor_volumes.csv"),
            subjects: (1..=10).collect(),
            output_dir: PathBuf::from("results"),
            seed: 123,
            n_collocation: 21,
            solver_steps: 100,
            time_input: false,
            capacity: CapacityConfig::default(),
            gompertz: GompertzConfig::default(),
            node: NetConfig::node(),
            ude: NetConfig::ude(),
            forecast: ForecastConfig::default(),
            symrec: SymrecConfig::default(),
        }
    }
}

impl Default for CapacityConfig {
    fn default() -> Self {
        Self {
            default: 1200.0,
            subjects: DEFAULT_CAPACITIES
                .iter()
                .enumerate()
                .map(|(i, &k)| ((i + 1).to_string(), k))
                .collect(),
        }
    }
}

impl Default for GompertzConfig {
    fn default() -> Self {
        Self {
            a: 0.3,
            capacity: 1200.0,
            steps: 1000,
        }
    }
}

impl NetConfig {
    pub fn node() -> Self {
        Self {
            hidden: NODE_HIDDEN.to_vec(),
            schedule: TrainConfig::neural_ode().schedule,
        }
    }

    pub fn ude() -> Self {
        Self {
            hidden: UDE_HIDDEN.to_vec(),
            schedule: TrainConfig::ude().schedule,
        }
    }
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            fractions: DEFAULT_FRACTIONS.to_vec(),
            variants: vec!["node".into(), "ude".into()],
        }
    }
}

impl Default for SymrecConfig {
    fn default() -> Self {
        Self {
            n_samples: DEFAULT_SAMPLES,
            lambda: None,
            lambda_ratio: DEFAULT_LAMBDA_RATIO,
            sig_figs: 3,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Checks that do not need the data file.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.subjects.is_empty() {
            return bad("subject list is empty".into());
        }
        if self.n_collocation < 2 || self.solver_steps == 0 {
            return bad("n_collocation must be ≥ 2 and solver_steps ≥ 1".into());
        }
        if !(self.capacity.default > 0.0) || self.capacity.subjects.values().any(|&k| !(k > 0.0)) {
            return bad("capacities must be positive".into());
        }
        for key in self.capacity.subjects.keys() {
            if key.parse::<u32>().is_err() {
                return bad(format!("capacity key `{key}` is not a subject id"));
            }
        }
        if !(self.gompertz.a > 0.0 && self.gompertz.capacity > 0.0) || self.gompertz.steps == 0 {
            return bad("Gompertz baseline needs a > 0, K > 0 and steps ≥ 1".into());
        }
        for f in &self.forecast.fractions {
            if !(*f > 0.0 && *f < 1.0) {
                return bad(format!("forecast fraction {f} outside (0, 1)"));
            }
        }
        for v in &self.forecast.variants {
            if v != "node" && v != "ude" {
                return bad(format!("unknown forecast variant `{v}`"));
            }
        }
        if self.symrec.n_samples < 10 || self.symrec.sig_figs == 0 {
            return bad("symrec needs n_samples ≥ 10 and sig_figs ≥ 1".into());
        }
        if let Some(l) = self.symrec.lambda {
            if !(l >= 0.0) {
                return bad(format!("lambda {l} must be non-negative"));
            }
        }
        self.train_config("node")?
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.train_config("ude")?
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn capacity_for(&self, subject: u32) -> f64 {
        self.capacity
            .subjects
            .get(&subject.to_string())
            .copied()
            .unwrap_or(self.capacity.default)
    }

    pub fn net_config(&self, variant: &str) -> Result<&NetConfig, CliError> {
        match variant {
            "node" => Ok(&self.node),
            "ude" => Ok(&self.ude),
            other => Err(CliError::Config(format!("unknown variant `{other}`"))),
        }
    }

    pub fn train_config(&self, variant: &str) -> Result<TrainConfig, CliError> {
        Ok(TrainConfig {
            schedule: self.net_config(variant)?.schedule.clone(),
            seed: self.seed,
            n_collocation: self.n_collocation,
            solver_steps: self.solver_steps,
            time_input: self.time_input,
        })
    }
}
