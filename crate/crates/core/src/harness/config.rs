use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::{Activation, LayerSpec, OptimizerKind, ParamScope};
use crate::curriculum::CurriculumOrder;
use crate::error::{Error, Result};
use crate::subset::{KMeansParams, SelectionCriterion};

/// Which earlier classes supply the "old" prototypes for the curriculum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeHistory {
    #[default]
    PreviousTask,
    AllTasks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerChoice {
    #[default]
    Adam,
    Sgd,
}

impl OptimizerChoice {
    pub fn kind(self) -> OptimizerKind {
        match self {
            OptimizerChoice::Adam => OptimizerKind::adam(),
            OptimizerChoice::Sgd => OptimizerKind::Sgd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    #[default]
    Synthetic,
    Csv,
}

/// Every knob of a stream run. Serialized as a flat TOML table; unknown keys
/// are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    /// New classes per task (`k`).
    pub classes_per_task: usize,
    /// Samples generated per synthetic class, before the train/test split.
    pub samples_per_class: usize,
    /// Retained fraction of each class.
    pub epsilon: f64,
    pub temperature: f64,
    pub regularizer_weight: f64,
    pub epochs: usize,
    pub finetune_epochs: usize,
    pub learning_rate: f64,
    pub finetune_learning_rate: f64,
    pub weight_decay: f64,
    pub optimizer: OptimizerChoice,
    pub batch_size: usize,
    pub hidden_width: usize,
    pub feature_dim: usize,
    pub curriculum_enabled: bool,
    pub curriculum_order: CurriculumOrder,
    pub phase_fraction: f64,
    pub prototype_history: PrototypeHistory,
    pub iss_enabled: bool,
    pub selection_criterion: SelectionCriterion,
    pub finetune_scope: ParamScope,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    pub kmeans_restarts: usize,
    pub test_fraction: f64,
    pub seed: u64,
    pub dataset: DatasetKind,
    pub dataset_path: Option<PathBuf>,
    pub synth_classes: usize,
    pub synth_dim: usize,
    pub synth_separation: f64,
}

impl Default for StreamConfig {
    /// Desk-scale defaults: a small trunk trained from scratch.
    fn default() -> Self {
        Self {
            classes_per_task: 2,
            samples_per_class: 100,
            epsilon: 0.3,
            temperature: 2.0,
            regularizer_weight: 1.0,
            epochs: 40,
            finetune_epochs: 30,
            learning_rate: 1e-3,
            finetune_learning_rate: 1e-4,
            weight_decay: 1e-4,
            optimizer: OptimizerChoice::Adam,
            batch_size: 32,
            hidden_width: 64,
            feature_dim: 128,
            curriculum_enabled: true,
            curriculum_order: CurriculumOrder::MostSimilarFirst,
            phase_fraction: 0.5,
            prototype_history: PrototypeHistory::PreviousTask,
            iss_enabled: true,
            selection_criterion: SelectionCriterion::Entropy,
            finetune_scope: ParamScope::HeadsOnly,
            kmeans_max_iter: 100,
            kmeans_tol: 1e-6,
            kmeans_restarts: 5,
            test_fraction: 0.2,
            seed: 0,
            dataset: DatasetKind::Synthetic,
            dataset_path: None,
            synth_classes: 10,
            synth_dim: 16,
            synth_separation: 4.0,
        }
    }
}

impl StreamConfig {
    /// Optimizer settings used with a pretrained deep backbone
    /// (learning rates 1e-6 / 1e-7). They stall a small trunk trained from scratch.
    pub fn pretrained_backbone_rates() -> Self {
        Self {
            learning_rate: 1e-6,
            finetune_learning_rate: 1e-7,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::domain(format!("config: {msg}")));
        if self.classes_per_task == 0 {
            return bad("classes_per_task must be at least 1".into());
        }
        if self.samples_per_class == 0 {
            return bad("samples_per_class must be at least 1".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return bad(format!("epsilon must lie in (0, 1], got {}", self.epsilon));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.phase_fraction > 0.0 && self.phase_fraction <= 1.0) {
            return bad(format!("phase_fraction must lie in (0, 1], got {}", self.phase_fraction));
        }
        if !(self.test_fraction >= 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction must lie in [0, 1), got {}", self.test_fraction));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.finetune_learning_rate >= 0.0 && self.weight_decay >= 0.0) {
            return bad("learning rates and weight decay must be non-negative".into());
        }
        if self.dataset == DatasetKind::Csv && self.dataset_path.is_none() {
            return bad("dataset = \"csv\" requires dataset_path".into());
        }
        Ok(())
    }

    pub fn trunk(&self) -> Vec<LayerSpec> {
        let mut layers = Vec::with_capacity(2);
        if self.hidden_width > 0 {
            layers.push(LayerSpec::new(self.hidden_width, Activation::Relu));
        }
        layers.push(LayerSpec::new(self.feature_dim, Activation::Identity));
        layers
    }

    pub fn kmeans_params(&self) -> KMeansParams {
        KMeansParams {
            max_iter: self.kmeans_max_iter,
            tol: self.kmeans_tol,
            restarts: self.kmeans_restarts,
        }
    }

    pub fn from_toml_str(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Input {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut cfg = Self::from_toml_str(&text).map_err(|reason| Error::Input {
            path: path.to_path_buf(),
            reason,
        })?;
        // A relative dataset path is relative to the config file, not the caller.
        if let (Some(data), Some(dir)) = (cfg.dataset_path.as_mut(), path.parent()) {
            if data.is_relative() {
                *data = dir.join(&*data);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }
}
