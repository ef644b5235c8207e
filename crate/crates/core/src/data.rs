//! Labelled feature batches and the task stream built from them.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Matrix;

/// A dataset label. Distinct from the output unit a class occupies in the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Row-major samples with one label per row.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub features: Matrix,
    pub labels: Vec<ClassId>,
}

impl FeatureMatrix {
    pub fn new(features: Matrix, labels: Vec<ClassId>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Data(format!(
                "{} rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            features: Matrix::zeros(0, dim),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn concat(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        let features = self.features.vstack(&other.features)?;
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(FeatureMatrix { features, labels })
    }

    /// Distinct labels in ascending order.
    pub fn classes(&self) -> Vec<ClassId> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Row indices of every class, each list in ascending row order.
    pub fn rows_by_class(&self) -> BTreeMap<ClassId, Vec<usize>> {
        let mut out: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
        for (i, &l) in self.labels.iter().enumerate() {
            out.entry(l).or_default().push(i);
        }
        out
    }

    pub fn histogram(&self) -> BTreeMap<ClassId, usize> {
        let mut out = BTreeMap::new();
        for &l in &self.labels {
            *out.entry(l).or_insert(0) += 1;
        }
        out
    }
}

/// One arrival of `k` novel classes: `D_train^t` plus a held-out split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSet {
    /// 1-based stream index.
    pub index: usize,
    pub class_ids: Vec<ClassId>,
    pub train: FeatureMatrix,
    pub test: FeatureMatrix,
}

impl TaskSet {
    /// Training samples per class, or a data error when classes are unbalanced
    /// or one of the declared classes has no rows.
    pub fn samples_per_class(&self) -> Result<usize> {
        let hist = self.train.histogram();
        let mut n = None;
        for c in &self.class_ids {
            let count = hist.get(c).copied().unwrap_or(0);
            if count == 0 {
                return Err(Error::Data(format!("class {c} has no training samples")));
            }
            match n {
                None => n = Some(count),
                Some(m) if m != count => {
                    return Err(Error::Data(format!(
                        "class {c} has {count} samples, expected {m}"
                    )))
                }
                _ => {}
            }
        }
        n.ok_or_else(|| Error::Data(format!("task {} has no classes", self.index)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStream {
    pub tasks: Vec<TaskSet>,
    /// Classes left over when the class count is not a multiple of `k`.
    pub dropped_classes: Vec<ClassId>,
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.tasks.first().map_or(0, |t| t.train.dim())
    }
}
