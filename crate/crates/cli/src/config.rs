//! Experiment configuration file.

use std::path::{Path, PathBuf};

use backlog_core::approximator::{Optimizer, TrainConfig};
use backlog_core::costing::CostParams;
use backlog_core::ModelConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelBlock,
    pub simulation: SimulationBlock,
    pub estimation: EstimationBlock,
    pub training: TrainingBlock,
    pub cost: CostBlock,
    pub output: OutputBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelBlock {
    /// Gamma shapes per reporting delay `0..=J`.
    pub alphas: Vec<f64>,
    pub beta: f64,
}

impl Default for ModelBlock {
    fn default() -> Self {
        Self {
            alphas: vec![1.0, 0.6, 0.3, 0.1],
            beta: 0.002,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    Zero,
    Stationary,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationBlock {
    pub eta: f64,
    pub horizon: usize,
    /// Paths behind the per-period diagnostics.
    pub replicates: usize,
    pub seed: u64,
    pub burn_in: usize,
    pub start: Start,
    /// Used with `start = "fixed"`.
    pub fixed_backlog: u64,
    /// Labeled paths written in full.
    pub labeled_paths: usize,
    pub max_lag: usize,
}

impl Default for SimulationBlock {
    fn default() -> Self {
        Self {
            eta: 1.2,
            horizon: 120,
            replicates: 10_000,
            seed: 1,
            burn_in: 1200,
            start: Start::Zero,
            fixed_backlog: 0,
            labeled_paths: 1,
            max_lag: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationBlock {
    /// Length `T` of the estimated sequences.
    pub t_len: usize,
    pub replicates: usize,
    pub eta_grid: Vec<f64>,
    pub backlogs: Vec<u64>,
    /// Delays `m` for `h` tables.
    pub delays: Vec<usize>,
    /// Report stream length for stationary sequences and cost curves.
    pub stream_periods: usize,
    pub chain_len: usize,
    pub chain_burn: usize,
    /// Report paths in the Monte Carlo `h` bank.
    pub h_paths: usize,
    pub h_len: usize,
}

impl Default for EstimationBlock {
    fn default() -> Self {
        Self {
            t_len: 32,
            replicates: 100_000,
            eta_grid: (0..10).map(|k| ((105 + 5 * k) as f64) / 100.0).collect(),
            backlogs: vec![0, 1000, 5000],
            delays: vec![0, 1, 2, 4, 8],
            stream_periods: 4_000_000,
            chain_len: 3000,
            chain_burn: 5000,
            h_paths: 20_000,
            h_len: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingBlock {
    pub hidden: usize,
    /// Output length of the `g` networks.
    pub steps: usize,
    /// Output length and largest delay of the `h` networks.
    pub h_steps: usize,
    pub dataset_size: usize,
    pub paths_per_sample: usize,
    pub eta_range: [f64; 2],
    pub burn_in: usize,
    pub b_low: f64,
    pub b_high: f64,
    pub net_seed: u64,
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub momentum: f64,
    pub decay: f64,
    pub clip: f64,
    pub validation_fraction: f64,
    pub agreement_replicates: usize,
}

impl Default for TrainingBlock {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            hidden: 32,
            steps: 32,
            h_steps: 120,
            dataset_size: 20_000,
            paths_per_sample: 128,
            eta_range: [1.05, 1.5],
            burn_in: 1200,
            b_low: 6000.0,
            b_high: 40_000.0,
            net_seed: 5,
            optimizer: t.optimizer,
            epochs: t.epochs,
            batch_size: t.batch_size,
            step_size: t.step_size,
            momentum: t.momentum,
            decay: t.decay,
            clip: t.clip,
            validation_fraction: t.validation_fraction,
            agreement_replicates: 100_000,
        }
    }
}

impl TrainingBlock {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer,
            epochs: self.epochs,
            batch_size: self.batch_size,
            step_size: self.step_size,
            momentum: self.momentum,
            decay: self.decay,
            clip: self.clip,
            validation_fraction: self.validation_fraction,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HSource {
    MonteCarlo,
    Network,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostBlock {
    pub kappa_g: f64,
    pub kappa_b: f64,
    pub kappa_c: f64,
    pub lambda_b: f64,
    /// Planning horizons `T` for the conditional optimization.
    pub horizons: Vec<usize>,
    /// Reports observed at the reference period of the zero-start history.
    pub history_reports: u64,
    /// Capacity ratio in force at the reference period.
    pub history_eta: f64,
    pub h_source: HSource,
    pub bracket: [f64; 2],
    pub tolerance: f64,
}

impl Default for CostBlock {
    fn default() -> Self {
        let p = CostParams::default();
        Self {
            kappa_g: p.kappa_g,
            kappa_b: p.kappa_b,
            kappa_c: p.kappa_c,
            lambda_b: p.lambda_b,
            horizons: vec![36, 60, 120],
            history_reports: 1310,
            history_eta: 1.2,
            h_source: HSource::MonteCarlo,
            bracket: [1.05, 1.5],
            tolerance: 1e-4,
        }
    }
}

impl CostBlock {
    pub fn params(&self) -> CostParams {
        CostParams {
            kappa_g: self.kappa_g,
            kappa_b: self.kappa_b,
            kappa_c: self.kappa_c,
            lambda_b: self.lambda_b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub dir: PathBuf,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let cfg: Self = match path {
            None => Self::default(),
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                toml::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))?
            }
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn model(&self) -> Result<ModelConfig, String> {
        ModelConfig::new(self.model.alphas.clone(), self.model.beta).map_err(|e| e.to_string())
    }

    fn check(&self) -> Result<(), String> {
        self.model()?;
        self.cost
            .params()
            .validate(true)
            .map_err(|e| e.to_string())?;
        let etas = self
            .estimation
            .eta_grid
            .iter()
            .chain([&self.simulation.eta]);
        for &eta in etas {
            if !(eta > 1.0) {
                return Err(format!("capacity ratio {eta} must exceed one"));
            }
        }
        let [lo, hi] = self.cost.bracket;
        if !(lo > 1.0 && hi > lo) {
            return Err(format!("bracket [{lo}, {hi}] must satisfy 1 < lo < hi"));
        }
        let [lo, hi] = self.training.eta_range;
        if !(lo > 1.0 && hi >= lo) {
            return Err(format!(
                "training eta range [{lo}, {hi}] must lie above one"
            ));
        }
        if self.estimation.t_len == 0
            || self.estimation.replicates < 2
            || self.simulation.replicates < 2
        {
            return Err("sequence length and replicate counts must be positive".into());
        }
        if self
            .cost
            .horizons
            .iter()
            .any(|&t| t == 0 || t > self.estimation.h_len)
        {
            return Err(format!(
                "planning horizons must lie in 1..={}",
                self.estimation.h_len
            ));
        }
        Ok(())
    }

    /// SHA-256 of the effective configuration, defaults included. The
    /// output directory does not enter the hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputBlock::default();
        let canonical = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg: ExperimentConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let m = cfg.model().unwrap();
        assert_eq!(m.mus(), vec![500.0, 300.0, 150.0, 50.0]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("[model]\nalpha = 2.0\n").is_err());
        assert!(toml::from_str::<ExperimentConfig>("[extra]\n").is_err());
    }

    #[test]
    fn partial_blocks_keep_other_defaults() {
        let cfg: ExperimentConfig = toml::from_str("[cost]\nkappa_b = 0.1\n").unwrap();
        assert_eq!(cfg.cost.kappa_b, 0.1);
        assert_eq!(cfg.cost.horizons, vec![36, 60, 120]);
        assert_ne!(cfg.hash(), ExperimentConfig::default().hash());
        let moved: ExperimentConfig = toml::from_str("[output]\ndir = \"elsewhere\"\n").unwrap();
        assert_eq!(moved.hash(), ExperimentConfig::default().hash());
    }
}
