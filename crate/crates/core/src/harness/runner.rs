//! The stream loop.
//!
//! Stream 1 is plain cross-entropy training. Every later stream runs
//!
//! 1. snapshot the current model as the frozen teacher and grow a new head;
//! 2. build the similarity curriculum from last stream's prototypes;
//! 3. train on new samples plus replayed exemplars under `L_C + R`;
//! 4. choose exemplars of the new classes from the trained model's features;
//! 5. fine-tune on a class-balanced set drawn from memory and the new task;
//! 6. store the chosen exemplars and evaluate on every seen task.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::backbone::{FrozenModel, IncrementalModel, OptimizerState, ParamScope};
use crate::curriculum::{
    compute_prototypes, generate_curriculum, schedule_batches, similarity_matrix, BatchPlan,
    Curriculum, PrototypeTable,
};
use crate::data::{ClassId, FeatureMatrix, TaskSet, TaskStream};
use crate::error::{Error, Result};
use crate::harness::config::{DatasetKind, PrototypeHistory, StreamConfig};
use crate::harness::dataset::{build_stream, DatasetDescriptor};
use crate::harness::metrics::{forgetting_measure, StreamMetrics};
use crate::losses::total_loss;
use crate::memory::ReplayMemory;
use crate::numkit::{argmax, derive_seed, seeded_rng, Matrix};
use crate::subset::{select_exemplars, select_random, SelectionResult};

// Seed tags; every stochastic step draws from its own derived stream.
const SEED_DATASET: u64 = 1;
const SEED_SPLIT: u64 = 2;
const SEED_INIT: u64 = 3;
const SEED_HEAD: u64 = 4;
const SEED_MIX: u64 = 5;
const SEED_EPOCH: u64 = 6;
const SEED_SELECT: u64 = 7;
const SEED_BALANCE: u64 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionAudit {
    pub method: String,
    /// Kept training-row indices per class.
    pub kept: BTreeMap<ClassId, Vec<usize>>,
    /// Entropy of every training row, in row order (empty for random selection).
    pub scores: Vec<f64>,
    pub inertia: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub curriculum_secs: f64,
    pub train_secs: f64,
    pub select_secs: f64,
    pub finetune_secs: f64,
    pub total_secs: f64,
}

/// One structured record per stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamRecord {
    pub stream: usize,
    pub classes: Vec<ClassId>,
    pub curriculum: Option<Curriculum>,
    pub selection: SelectionAudit,
    /// Accuracy on each seen task's test split.
    pub accuracies: Vec<f64>,
    pub overall_accuracy: f64,
    pub forgetting: Option<f64>,
    pub final_train_loss: f64,
    pub timings: Timings,
}

#[derive(Debug, Clone)]
pub struct StreamRun {
    pub metrics: StreamMetrics,
    pub records: Vec<StreamRecord>,
    pub model: IncrementalModel,
    pub memory: ReplayMemory,
    /// Output unit of every learned class.
    pub units: BTreeMap<ClassId, usize>,
}

/// Dataset described by the config's dataset keys.
pub fn dataset_descriptor(config: &StreamConfig) -> DatasetDescriptor {
    match config.dataset {
        DatasetKind::Synthetic => DatasetDescriptor::Synthetic {
            classes: config.synth_classes,
            samples: config.samples_per_class,
            dim: config.synth_dim,
            separation: config.synth_separation,
            seed: derive_seed(config.seed, &[SEED_DATASET]),
        },
        DatasetKind::Csv => DatasetDescriptor::Csv {
            path: config.dataset_path.clone().unwrap_or_default(),
        },
    }
}

/// Loads the configured dataset, splits it into tasks and runs the stream.
pub fn run_config(config: &StreamConfig) -> Result<StreamRun> {
    config.validate()?;
    let data = dataset_descriptor(config).load()?;
    let stream = build_stream(
        &data,
        config.classes_per_task,
        config.test_fraction,
        derive_seed(config.seed, &[SEED_SPLIT]),
    )?;
    run_stream(config, &stream)
}

struct Learner<'a> {
    config: &'a StreamConfig,
    model: IncrementalModel,
    memory: ReplayMemory,
    units: BTreeMap<ClassId, usize>,
    prototypes: Vec<PrototypeTable>,
}

impl Learner<'_> {
    fn unit_labels(&self, labels: &[ClassId]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| {
                self.units
                    .get(l)
                    .copied()
                    .ok_or_else(|| Error::State(format!("class {l} has no output unit yet")))
            })
            .collect()
    }

    fn curriculum(&self, task: &TaskSet) -> Result<Option<Curriculum>> {
        if !self.config.curriculum_enabled || self.prototypes.is_empty() {
            return Ok(None);
        }
        let old = match self.config.prototype_history {
            PrototypeHistory::PreviousTask => self.prototypes.last().expect("non-empty").clone(),
            PrototypeHistory::AllTasks => PrototypeTable::merged(&self.prototypes),
        };
        let new = compute_prototypes(&self.model, task)?;
        let s = similarity_matrix(&old, &new)?;
        generate_curriculum(
            task.index,
            &s,
            &old.class_ids(),
            &new.class_ids(),
            self.config.curriculum_order,
        )
        .map(Some)
    }

    /// Mini-batch training; returns the mean total loss of the last epoch.
    #[allow(clippy::too_many_arguments)]
    fn train(
        &mut self,
        data: &FeatureMatrix,
        teacher: Option<&FrozenModel>,
        plan: &BatchPlan,
        new_classes: &[ClassId],
        learning_rate: f64,
        scope: ParamScope,
        seed: u64,
    ) -> Result<f64> {
        let cfg = self.config;
        let units = self.unit_labels(&data.labels)?;
        let old_count = teacher.map_or(0, |t| t.model().output_dim());
        let mut opt = OptimizerState::new(cfg.optimizer.kind(), learning_rate, cfg.weight_decay)
            .with_scope(scope);
        let mut last_loss = f64::NAN;
        for epoch in 0..plan.epochs() {
            let mut rows: Vec<usize> = (0..data.len())
                .filter(|&i| {
                    let l = data.labels[i];
                    !new_classes.contains(&l) || plan.admits(epoch, l)
                })
                .collect();
            rows.shuffle(&mut seeded_rng(derive_seed(seed, &[epoch as u64])));
            let mut loss_sum = 0.0;
            let mut batches = 0usize;
            for batch in rows.chunks(cfg.batch_size) {
                let x = data.features.select_rows(batch);
                let labels: Vec<usize> = batch.iter().map(|&i| units[i]).collect();
                let teacher_logits = match teacher {
                    Some(t) => t.logits(&x)?,
                    None => Matrix::zeros(batch.len(), 0),
                };
                let cache = self.model.forward_cached(&x)?;
                let loss = total_loss(
                    &cache.logits,
                    &labels,
                    &teacher_logits,
                    old_count,
                    cfg.temperature,
                    cfg.regularizer_weight,
                )?;
                let grads = self.model.backward_cached(&cache, &loss.grad_wrt_logits)?;
                opt.step(&mut self.model, &grads)?;
                loss_sum += loss.total;
                batches += 1;
            }
            if !self.model.is_finite() {
                return Err(Error::State(format!(
                    "parameters became non-finite in epoch {}",
                    epoch + 1
                )));
            }
            if batches > 0 {
                last_loss = loss_sum / batches as f64;
            }
        }
        Ok(last_loss)
    }

    fn select(&self, task: &TaskSet, seed: u64) -> Result<(SelectionResult, String)> {
        let cfg = self.config;
        if cfg.iss_enabled {
            let features = self.model.features(&task.train.features)?;
            let sel = select_exemplars(
                &features,
                &task.train.labels,
                cfg.epsilon,
                seed,
                cfg.selection_criterion,
                &cfg.kmeans_params(),
            )?;
            let method = serde_json::to_value(cfg.selection_criterion)?
                .as_str()
                .unwrap_or("entropy")
                .to_string();
            Ok((sel, method))
        } else {
            Ok((select_random(&task.train.labels, cfg.epsilon, seed)?, "random".into()))
        }
    }

    /// Per-task accuracy on the test splits of `tasks`, plus pooled accuracy.
    fn evaluate(&self, tasks: &[TaskSet]) -> Result<(Vec<f64>, f64)> {
        let mut per_task = Vec::with_capacity(tasks.len());
        let (mut correct_total, mut rows_total) = (0usize, 0usize);
        for task in tasks {
            let truth = self.unit_labels(&task.test.labels)?;
            let logits = self.model.forward_cached(&task.test.features)?.logits;
            let correct = logits
                .iter_rows()
                .zip(&truth)
                .filter(|(row, &t)| argmax(row) == Some(t))
                .count();
            let n = truth.len();
            per_task.push(if n == 0 { 0.0 } else { correct as f64 / n as f64 });
            correct_total += correct;
            rows_total += n;
        }
        let overall = if rows_total == 0 {
            0.0
        } else {
            correct_total as f64 / rows_total as f64
        };
        Ok((per_task, overall))
    }

    fn run_one(
        &mut self,
        stream: &TaskStream,
        t: usize,
        metrics: &mut StreamMetrics,
    ) -> Result<StreamRecord> {
        let cfg = self.config;
        let task = &stream.tasks[t];
        let index = task.index;
        let started = Instant::now();
        let mut timings = Timings::default();
        task.samples_per_class()?;

        let teacher = (t > 0).then(|| self.model.clone_frozen());

        let clock = Instant::now();
        let curriculum = if t > 0 { self.curriculum(task)? } else { None };
        timings.curriculum_secs = clock.elapsed().as_secs_f64();

        self.model
            .expand_head(task.class_ids.len(), derive_seed(cfg.seed, &[SEED_HEAD, index as u64]))?;
        for (unit, &c) in (self.units.len()..).zip(&task.class_ids) {
            if self.units.insert(c, unit).is_some() {
                return Err(Error::Data(format!("class {c} appears in two tasks")));
            }
        }

        let plan = match &curriculum {
            Some(c) => schedule_batches(c, cfg.epochs, cfg.phase_fraction)?,
            None => BatchPlan::unrestricted(&task.class_ids, cfg.epochs),
        };
        let mix = self
            .memory
            .serve_training_mix(task, derive_seed(cfg.seed, &[SEED_MIX, index as u64]))?;
        let clock = Instant::now();
        let final_train_loss = self.train(
            &mix,
            teacher.as_ref(),
            &plan,
            &task.class_ids,
            cfg.learning_rate,
            ParamScope::All,
            derive_seed(cfg.seed, &[SEED_EPOCH, index as u64, 0]),
        )?;
        timings.train_secs = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let (selection, method) = self.select(task, derive_seed(cfg.seed, &[SEED_SELECT, index as u64]))?;
        timings.select_secs = clock.elapsed().as_secs_f64();

        if t > 0 && cfg.finetune_epochs > 0 {
            let clock = Instant::now();
            let balanced = self
                .memory
                .serve_balanced(task, derive_seed(cfg.seed, &[SEED_BALANCE, index as u64]))?;
            let all: Vec<ClassId> = balanced.classes();
            self.train(
                &balanced,
                teacher.as_ref(),
                &BatchPlan::unrestricted(&all, cfg.finetune_epochs),
                &task.class_ids,
                cfg.finetune_learning_rate,
                cfg.finetune_scope,
                derive_seed(cfg.seed, &[SEED_EPOCH, index as u64, 1]),
            )?;
            timings.finetune_secs = clock.elapsed().as_secs_f64();
        }

        self.memory.absorb(&selection, task)?;
        // Only the prototypes survive; the features themselves are discarded.
        self.prototypes.push(compute_prototypes(&self.model, task)?);

        let (accuracies, overall) = self.evaluate(&stream.tasks[..=t])?;
        timings.total_secs = started.elapsed().as_secs_f64();
        metrics.push(accuracies.clone(), overall, timings.total_secs);
        metrics.test_sizes.push(task.test.len());
        let forgetting = if t > 0 {
            Some(forgetting_measure(metrics, index)?)
        } else {
            None
        };
        log::info!(
            "stream {index}: overall accuracy {overall:.4}, forgetting {forgetting:?}, {:.2}s",
            timings.total_secs
        );

        Ok(StreamRecord {
            stream: index,
            classes: task.class_ids.clone(),
            curriculum,
            selection: SelectionAudit {
                method,
                kept: selection.kept,
                scores: selection.scores,
                inertia: selection.inertia,
            },
            accuracies,
            overall_accuracy: overall,
            forgetting,
            final_train_loss,
            timings,
        })
    }
}

/// Runs every task of `stream` in order.
pub fn run_stream(config: &StreamConfig, stream: &TaskStream) -> Result<StreamRun> {
    config.validate()?;
    if stream.is_empty() {
        return Err(Error::Data("task stream is empty".into()));
    }
    let model = IncrementalModel::new(
        stream.input_dim(),
        &config.trunk(),
        config.classes_per_task,
        derive_seed(config.seed, &[SEED_INIT]),
    )?;
    let mut learner = Learner {
        config,
        model,
        memory: ReplayMemory::new(config.epsilon)?,
        units: BTreeMap::new(),
        prototypes: Vec::new(),
    };
    let mut metrics = StreamMetrics::default();
    let mut records = Vec::with_capacity(stream.len());
    for t in 0..stream.len() {
        let record = learner
            .run_one(stream, t, &mut metrics)
            .map_err(|e| e.in_stream(t + 1))?;
        records.push(record);
    }
    Ok(StreamRun {
        metrics,
        records,
        model: learner.model,
        memory: learner.memory,
        units: learner.units,
    })
}
