//! Optimization, metrics and the ablation harness.

mod ablation;
mod adam;
mod metrics;
mod run;

pub use ablation::{
    run_ablation, write_report_csv, write_report_json, AblationConfig, AblationReport, Aggregate,
    CellResult,
};
pub use adam::AdamState;
pub use metrics::{evaluate, metrics_from_labels, Metrics};
pub use run::{subsample_stratified, train, EpochStats, KnowledgeMaps, TrainResult, Variant};

use thiserror::Error;

/// Optimizer and schedule settings. The learning rate decays linearly from
/// `lr_init` to `lr_final` over the epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub lr_init: f64,
    pub lr_final: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr_init: 1e-4,
            lr_final: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 30,
            batch_size: 1,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr_init <= 0.0 || self.lr_final <= 0.0 {
            return Err(TrainError::Config("learning rates must be > 0".into()));
        }
        for (name, b) in [("optim.beta1", self.beta1), ("optim.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(TrainError::Config(format!("{name} must be in [0, 1)")));
            }
        }
        if self.epsilon <= 0.0 {
            return Err(TrainError::Config("optim.epsilon must be > 0".into()));
        }
        if self.batch_size != 1 {
            return Err(TrainError::Config(
                "optim.batch_size must be 1 (gradient accumulation is not implemented)".into(),
            ));
        }
        Ok(())
    }

    /// Learning rate for an epoch: linear interpolation across the run.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = self.epochs.saturating_sub(1).max(1) as f64;
        self.lr_init + (self.lr_final - self.lr_init) * (epoch as f64 / steps)
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Synth(#[from] crate::synth::SynthError),
    #[error(transparent)]
    Knowledge(#[from] crate::knowledge::KnowledgeError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("loss became non-finite at step {step} ({component} head)")]
    NanLoss { step: usize, component: &'static str },
    #[error("evaluation needs at least one scene")]
    EmptyData,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl From<crate::tensor::TensorError> for TrainError {
    fn from(e: crate::tensor::TensorError) -> Self {
        TrainError::Model(e.into())
    }
}

pub type Result<V> = std::result::Result<V, TrainError>;
