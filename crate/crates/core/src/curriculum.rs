//! Similarity curriculum over the classes of an incoming task.
//!
//! Each new class is scored by the highest cosine similarity between its
//! feature prototype and any prototype of the previously learned classes.
//! Classes most similar to existing knowledge are admitted into training first.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backbone::IncrementalModel;
use crate::data::{ClassId, TaskSet};
use crate::error::{Error, Result};
use crate::numkit::{cosine_similarity, Matrix, Vector};

/// Mean penultimate feature per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeTable {
    pub task_index: usize,
    pub prototypes: BTreeMap<ClassId, Vector>,
    pub samples_per_class: usize,
}

impl PrototypeTable {
    pub fn class_ids(&self) -> Vec<ClassId> {
        self.prototypes.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.prototypes.values().next().map(|v| v.dim())
    }

    /// Union of several tables; later tables win on duplicate ids.
    pub fn merged<'a>(tables: impl IntoIterator<Item = &'a PrototypeTable>) -> PrototypeTable {
        let mut out = PrototypeTable {
            task_index: 0,
            prototypes: BTreeMap::new(),
            samples_per_class: 0,
        };
        for t in tables {
            out.task_index = out.task_index.max(t.task_index);
            out.samples_per_class = t.samples_per_class;
            out.prototypes
                .extend(t.prototypes.iter().map(|(k, v)| (*k, v.clone())));
        }
        out
    }
}

/// Builds prototypes from already-extracted features.
pub fn prototypes_from_features(
    task_index: usize,
    class_ids: &[ClassId],
    features: &Matrix,
    labels: &[ClassId],
) -> Result<PrototypeTable> {
    let dim = features.cols();
    let mut sums: BTreeMap<ClassId, (Vec<f64>, usize)> = class_ids
        .iter()
        .map(|&c| (c, (vec![0.0; dim], 0)))
        .collect();
    for (row, label) in features.iter_rows().zip(labels) {
        if let Some((acc, n)) = sums.get_mut(label) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
            *n += 1;
        }
    }
    let mut samples_per_class = None;
    let mut prototypes = BTreeMap::new();
    for (c, (acc, n)) in sums {
        if n == 0 {
            return Err(Error::Data(format!("class {c} has no samples for its prototype")));
        }
        match samples_per_class {
            None => samples_per_class = Some(n),
            Some(m) if m != n => {
                return Err(Error::Data(format!(
                    "class {c} has {n} samples, expected {m} like the other classes"
                )))
            }
            _ => {}
        }
        let inv = 1.0 / n as f64;
        prototypes.insert(c, Vector::new(acc.into_iter().map(|v| v * inv).collect()));
    }
    Ok(PrototypeTable {
        task_index,
        prototypes,
        samples_per_class: samples_per_class.unwrap_or(0),
    })
}

/// Prototype of each class in `task` under `model`'s feature extractor.
pub fn compute_prototypes(model: &IncrementalModel, task: &TaskSet) -> Result<PrototypeTable> {
    let features = model.features(&task.train.features)?;
    prototypes_from_features(task.index, &task.class_ids, &features, &task.train.labels)
}

/// Cosine similarity of every old prototype (rows) with every new one (columns),
/// both in ascending class-id order.
pub fn similarity_matrix(old: &PrototypeTable, new: &PrototypeTable) -> Result<Matrix> {
    if old.is_empty() || new.is_empty() {
        return Err(Error::domain("similarity_matrix: prototype table is empty"));
    }
    if old.dim() != new.dim() {
        return Err(Error::domain(format!(
            "similarity_matrix: old prototypes have dimension {:?}, new {:?}",
            old.dim(),
            new.dim()
        )));
    }
    let mut s = Matrix::zeros(old.len(), new.len());
    for (r, mu_r) in old.prototypes.values().enumerate() {
        for (c, mu_c) in new.prototypes.values().enumerate() {
            s[(r, c)] = cosine_similarity(mu_r, mu_c)?;
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurriculumOrder {
    #[default]
    MostSimilarFirst,
    LeastSimilarFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curriculum {
    pub task_index: usize,
    pub ordered_classes: Vec<ClassId>,
    /// Best similarity of each new class to any old class.
    pub scores: BTreeMap<ClassId, f64>,
    /// New class → most similar old class.
    pub anchor_map: BTreeMap<ClassId, ClassId>,
}

/// Orders new classes by their best similarity to old ones.
///
/// `s` has one row per entry of `old_class_ids` and one column per entry of
/// `new_class_ids`. Ties go to the smaller class id.
pub fn generate_curriculum(
    task_index: usize,
    s: &Matrix,
    old_class_ids: &[ClassId],
    new_class_ids: &[ClassId],
    order: CurriculumOrder,
) -> Result<Curriculum> {
    if s.rows() == 0 || s.cols() == 0 {
        return Err(Error::domain("generate_curriculum: empty similarity matrix"));
    }
    if s.cols() != new_class_ids.len() || s.rows() != old_class_ids.len() {
        return Err(Error::domain(format!(
            "generate_curriculum: similarity matrix is {:?} for {} old and {} new classes",
            s.shape(),
            old_class_ids.len(),
            new_class_ids.len()
        )));
    }
    let mut scores = BTreeMap::new();
    let mut anchor_map = BTreeMap::new();
    let mut ranked = Vec::with_capacity(new_class_ids.len());
    for (c, &class) in new_class_ids.iter().enumerate() {
        let mut best = (0usize, f64::NEG_INFINITY);
        for r in 0..s.rows() {
            if s[(r, c)] > best.1 {
                best = (r, s[(r, c)]);
            }
        }
        scores.insert(class, best.1);
        anchor_map.insert(class, old_class_ids[best.0]);
        ranked.push((class, best.1));
    }
    ranked.sort_by(|a, b| {
        let by_score = match order {
            CurriculumOrder::MostSimilarFirst => b.1.total_cmp(&a.1),
            CurriculumOrder::LeastSimilarFirst => a.1.total_cmp(&b.1),
        };
        by_score.then(a.0.cmp(&b.0))
    });
    Ok(Curriculum {
        task_index,
        ordered_classes: ranked.into_iter().map(|(c, _)| c).collect(),
        scores,
        anchor_map,
    })
}

/// Which new classes are admitted into training at each epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    /// `admitted[e]` lists the new classes usable in epoch `e` (0-based).
    pub admitted: Vec<Vec<ClassId>>,
    /// Number of leading epochs with staged admission.
    pub staged_epochs: usize,
}

impl BatchPlan {
    /// Every class in every epoch.
    pub fn unrestricted(classes: &[ClassId], epochs: usize) -> Self {
        let mut all = classes.to_vec();
        all.sort_unstable();
        Self {
            admitted: vec![all; epochs],
            staged_epochs: 0,
        }
    }

    pub fn epochs(&self) -> usize {
        self.admitted.len()
    }

    pub fn admits(&self, epoch: usize, class: ClassId) -> bool {
        self.admitted
            .get(epoch)
            .is_some_and(|a| a.contains(&class))
    }
}

/// Staged admission: during the first `S = ceil(phase_fraction · epochs)` epochs,
/// epoch `e` admits the top `floor(e · k / S) + 1` ranks, so the first-ranked
/// class always trains alone first. Later epochs use every class.
/// Replayed old classes are not part of the plan; callers keep them in every epoch.
pub fn schedule_batches(
    curriculum: &Curriculum,
    epochs: usize,
    phase_fraction: f64,
) -> Result<BatchPlan> {
    if !(phase_fraction > 0.0 && phase_fraction <= 1.0) {
        return Err(Error::domain(format!(
            "schedule_batches: phase fraction must lie in (0, 1], got {phase_fraction}"
        )));
    }
    let k = curriculum.ordered_classes.len();
    let staged = ((phase_fraction * epochs as f64) - 1e-9).ceil().max(0.0) as usize;
    let staged = staged.min(epochs);
    let mut all = curriculum.ordered_classes.clone();
    all.sort_unstable();
    let mut admitted = Vec::with_capacity(epochs);
    for e in 0..epochs {
        if e < staged {
            let count = (e * k / staged + 1).min(k);
            admitted.push(curriculum.ordered_classes[..count].to_vec());
        } else {
            admitted.push(all.clone());
        }
    }
    Ok(BatchPlan {
        admitted,
        staged_epochs: staged,
    })
}
