//! Dataset sources and the split into a task stream.
//!
//! Feature files are delimited text, one sample per line:
//! `label,f1,f2,...,fd`. A header line is allowed when its first field is not
//! an integer.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ClassId, FeatureMatrix, TaskSet, TaskStream};
use crate::error::{Error, Result};
use crate::numkit::{derive_seed, norm, seeded_rng, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetDescriptor {
    Synthetic {
        classes: usize,
        samples: usize,
        dim: usize,
        separation: f64,
        seed: u64,
    },
    Csv {
        path: PathBuf,
    },
}

impl DatasetDescriptor {
    pub fn load(&self) -> Result<FeatureMatrix> {
        match self {
            DatasetDescriptor::Synthetic {
                classes,
                samples,
                dim,
                separation,
                seed,
            } => generate_synthetic(*classes, *samples, *dim, *separation, *seed),
            DatasetDescriptor::Csv { path } => read_feature_csv(path),
        }
    }
}

/// Unit-variance isotropic Gaussian blobs whose means are pairwise
/// `separation` apart.
///
/// Means sit at `separation / √2` along the axes of a seeded random
/// orthonormal frame. With more classes than dimensions an orthonormal frame
/// does not exist and random unit directions are used instead, so distances
/// are only approximately equal.
pub fn generate_synthetic(
    classes: usize,
    samples: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<FeatureMatrix> {
    if classes < 2 {
        return Err(Error::domain("synthetic data needs at least 2 classes"));
    }
    if dim < 2 {
        return Err(Error::domain("synthetic data needs at least 2 dimensions"));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::domain(format!("separation must be non-negative, got {separation}")));
    }
    let mut rng = seeded_rng(seed);
    let mut directions: Vec<Vec<f64>> = Vec::with_capacity(classes);
    while directions.len() < classes {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        if directions.len() < dim {
            for d in &directions {
                let proj: f64 = v.iter().zip(d).map(|(a, b)| a * b).sum();
                for (x, y) in v.iter_mut().zip(d) {
                    *x -= proj * y;
                }
            }
        }
        let n = norm(&v);
        if n < 1e-8 {
            continue;
        }
        directions.push(v.into_iter().map(|x| x / n).collect());
    }
    let radius = separation / std::f64::consts::SQRT_2;
    let mut data = Vec::with_capacity(classes * samples * dim);
    let mut labels = Vec::with_capacity(classes * samples);
    for (c, dir) in directions.iter().enumerate() {
        for _ in 0..samples {
            for &d in dir {
                let noise: f64 = StandardNormal.sample(&mut rng);
                data.push(radius * d + noise);
            }
            labels.push(ClassId(c as u32));
        }
    }
    FeatureMatrix::new(Matrix::from_vec(classes * samples, dim, data)?, labels)
}

fn input_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Input {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn parse_feature_csv(text: &str, path: &Path) -> Result<FeatureMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let first = fields.next().unwrap_or_default();
        let label: u32 = match first.parse() {
            Ok(l) => l,
            Err(_) if rows.is_empty() && labels.is_empty() && lineno == 0 => continue,
            Err(_) => {
                return Err(input_err(
                    path,
                    format!("line {}: label {first:?} is not a non-negative integer", lineno + 1),
                ))
            }
        };
        let values = fields
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| input_err(path, format!("line {}: bad value {f:?}", lineno + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(input_err(path, format!("line {}: no feature values", lineno + 1)));
        }
        if let Some(first_row) = rows.first() {
            if first_row.len() != values.len() {
                return Err(input_err(
                    path,
                    format!(
                        "line {}: {} features, earlier rows have {}",
                        lineno + 1,
                        values.len(),
                        first_row.len()
                    ),
                ));
            }
        }
        rows.push(values);
        labels.push(ClassId(label));
    }
    if rows.is_empty() {
        return Err(input_err(path, "no samples"));
    }
    FeatureMatrix::new(Matrix::from_rows(&rows)?, labels)
}

pub fn read_feature_csv(path: &Path) -> Result<FeatureMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| input_err(path, e.to_string()))?;
    parse_feature_csv(&text, path)
}

/// Renders samples as `label,f1,...,fd` lines with a header. Values use the
/// shortest representation that parses back to the same bits.
pub fn format_feature_csv(data: &FeatureMatrix) -> String {
    let mut out = String::new();
    out.push_str("label");
    for j in 0..data.dim() {
        let _ = write!(out, ",f{}", j + 1);
    }
    out.push('\n');
    for (row, label) in data.features.iter_rows().zip(&data.labels) {
        let _ = write!(out, "{label}");
        for v in row {
            let _ = write!(out, ",{v:?}");
        }
        out.push('\n');
    }
    out
}

pub fn write_feature_csv(path: &Path, data: &FeatureMatrix) -> Result<()> {
    std::fs::write(path, format_feature_csv(data))?;
    Ok(())
}

/// Partitions classes into consecutive tasks of `k` in a seeded random order
/// and splits every class into train and test rows.
///
/// Leftover classes that do not fill a task are dropped with a warning.
/// Training rows are truncated to the smallest class so that every class
/// contributes the same `N`.
pub fn build_stream(dataset: &FeatureMatrix, k: usize, test_fraction: f64, seed: u64) -> Result<TaskStream> {
    if k == 0 {
        return Err(Error::domain("build_stream: k must be at least 1"));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::domain(format!("test fraction must lie in [0, 1), got {test_fraction}")));
    }
    let by_class: BTreeMap<ClassId, Vec<usize>> = dataset.rows_by_class();
    let mut order: Vec<ClassId> = by_class.keys().copied().collect();
    order.shuffle(&mut seeded_rng(derive_seed(seed, &[0])));
    let usable = order.len() / k * k;
    let dropped_classes = order.split_off(usable);
    if !dropped_classes.is_empty() {
        log::warn!(
            "{} classes do not divide into tasks of {k}; dropping {:?}",
            usable + dropped_classes.len(),
            dropped_classes
        );
    }
    if order.is_empty() {
        return Err(Error::Data(format!("fewer than {k} classes in the dataset")));
    }

    let mut splits = BTreeMap::new();
    for &class in &order {
        let mut rows = by_class[&class].clone();
        rows.shuffle(&mut seeded_rng(derive_seed(seed, &[1, class.0 as u64])));
        let n_test = (rows.len() as f64 * test_fraction).round() as usize;
        let n_test = n_test.min(rows.len().saturating_sub(1));
        let train = rows.split_off(n_test);
        splits.insert(class, (train, rows));
    }
    let n_train = splits.values().map(|(tr, _)| tr.len()).min().unwrap_or(0);

    let tasks = order
        .chunks(k)
        .enumerate()
        .map(|(t, classes)| {
            let mut train_rows = Vec::new();
            let mut test_rows = Vec::new();
            for c in classes {
                let (tr, te) = &splits[c];
                train_rows.extend_from_slice(&tr[..n_train]);
                test_rows.extend_from_slice(te);
            }
            TaskSet {
                index: t + 1,
                class_ids: classes.to_vec(),
                train: dataset.select(&train_rows),
                test: dataset.select(&test_rows),
            }
        })
        .collect();
    Ok(TaskStream {
        tasks,
        dropped_classes,
    })
}
