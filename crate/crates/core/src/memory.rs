//! Replay store of exemplars from previously learned classes.
//!
//! Raw input samples are stored, never features: the model keeps changing and
//! features are re-extracted whenever the exemplars are replayed.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{ClassId, FeatureMatrix, TaskSet};
use crate::error::{Error, Result};
use crate::numkit::{seeded_rng, Matrix};
use crate::subset::{budget, SelectionResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredClass {
    pub samples: Matrix,
    /// Stream in which the class was learned.
    pub stream: usize,
    pub budget: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayMemory {
    epsilon: f64,
    per_class: BTreeMap<ClassId, StoredClass>,
}

impl ReplayMemory {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::domain(format!("epsilon must lie in (0, 1], got {epsilon}")));
        }
        Ok(Self {
            epsilon,
            per_class: BTreeMap::new(),
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Exemplar allowance for a class with `n` training samples.
    pub fn budget_per_class(&self, n: usize) -> usize {
        budget(self.epsilon, n)
    }

    pub fn is_empty(&self) -> bool {
        self.per_class.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.per_class.len()
    }

    pub fn sample_count(&self) -> usize {
        self.per_class.values().map(|c| c.samples.rows()).sum()
    }

    pub fn classes(&self) -> impl Iterator<Item = (&ClassId, &StoredClass)> {
        self.per_class.iter()
    }

    pub fn get(&self, class: ClassId) -> Option<&StoredClass> {
        self.per_class.get(&class)
    }

    /// Stores the selected training rows of `task`. Append-only: a class can be
    /// absorbed once.
    pub fn absorb(&mut self, selection: &SelectionResult, task: &TaskSet) -> Result<()> {
        let mut selected: Vec<ClassId> = selection.kept.keys().copied().collect();
        let mut expected = task.class_ids.clone();
        selected.sort_unstable();
        expected.sort_unstable();
        if selected != expected {
            return Err(Error::State(format!(
                "selection covers classes {selected:?} but task {} has {expected:?}",
                task.index
            )));
        }
        if let Some(c) = selected.iter().find(|c| self.per_class.contains_key(c)) {
            return Err(Error::State(format!("class {c} is already stored in memory")));
        }
        let by_class = task.train.rows_by_class();
        let mut staged = Vec::with_capacity(selected.len());
        for (&class, rows) in &selection.kept {
            let available = by_class.get(&class).map_or(0, Vec::len);
            let allowance = self.budget_per_class(available);
            if rows.len() > allowance {
                return Err(Error::State(format!(
                    "class {class}: {} exemplars exceed the budget of {allowance}",
                    rows.len()
                )));
            }
            if let Some(&bad) = rows.iter().find(|&&r| task.train.labels.get(r) != Some(&class)) {
                return Err(Error::State(format!(
                    "class {class}: row {bad} is not a sample of that class"
                )));
            }
            staged.push((
                class,
                StoredClass {
                    samples: task.train.features.select_rows(rows),
                    stream: task.index,
                    budget: allowance,
                },
            ));
        }
        self.per_class.extend(staged);
        Ok(())
    }

    fn check_servable(&self, task: &TaskSet) -> Result<()> {
        if let Some((c, s)) = self.per_class.iter().find(|(_, s)| s.stream >= task.index) {
            return Err(Error::State(format!(
                "class {c} was stored in stream {} and cannot be replayed during stream {}",
                s.stream, task.index
            )));
        }
        Ok(())
    }

    fn exemplars(&self) -> FeatureMatrix {
        let dim = self.per_class.values().next().map_or(0, |c| c.samples.cols());
        let mut out = FeatureMatrix::empty(dim);
        for (&class, stored) in &self.per_class {
            let part = FeatureMatrix {
                features: stored.samples.clone(),
                labels: vec![class; stored.samples.rows()],
            };
            out = out.concat(&part).expect("stored samples share one width");
        }
        out
    }

    /// New-task samples plus every stored exemplar, shuffled by `seed`.
    pub fn serve_training_mix(&self, task: &TaskSet, seed: u64) -> Result<FeatureMatrix> {
        self.check_servable(task)?;
        let all = task.train.concat(&self.exemplars())?;
        let mut order: Vec<usize> = (0..all.len()).collect();
        order.shuffle(&mut seeded_rng(seed));
        Ok(all.select(&order))
    }

    /// Class-balanced set for bias-correcting fine-tuning.
    ///
    /// Every class contributes the same number of rows: the smallest of the
    /// stored exemplar counts and the new classes' sample counts. Classes with
    /// more rows than that are subsampled uniformly.
    pub fn serve_balanced(&self, task: &TaskSet, seed: u64) -> Result<FeatureMatrix> {
        if self.is_empty() {
            return Err(Error::State(
                "balanced fine-tuning needs a non-empty replay memory".into(),
            ));
        }
        self.check_servable(task)?;
        let mut rng = seeded_rng(seed);
        let new_rows = task.train.rows_by_class();
        let target = self
            .per_class
            .values()
            .map(|s| s.samples.rows())
            .chain(new_rows.values().map(Vec::len))
            .min()
            .unwrap_or(0);

        let mut out = FeatureMatrix::empty(task.train.dim());
        for (&class, stored) in &self.per_class {
            let mut idx: Vec<usize> = (0..stored.samples.rows()).collect();
            if idx.len() > target {
                idx.shuffle(&mut rng);
                idx.truncate(target);
                idx.sort_unstable();
            }
            let part = FeatureMatrix {
                features: stored.samples.select_rows(&idx),
                labels: vec![class; idx.len()],
            };
            out = out.concat(&part)?;
        }
        for rows in new_rows.values() {
            let mut rows = rows.clone();
            rows.shuffle(&mut rng);
            rows.truncate(target);
            rows.sort_unstable();
            out = out.concat(&task.train.select(&rows))?;
        }
        let mut order: Vec<usize> = (0..out.len()).collect();
        order.shuffle(&mut rng);
        Ok(out.select(&order))
    }
}
