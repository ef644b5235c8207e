use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Accuracy bookkeeping across a stream.
///
/// `accuracy[t][j]` is the accuracy on task `j`'s test split after training
/// stream `t` (both 0-based here), defined for `j ≤ t`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StreamMetrics {
    pub accuracy: Vec<Vec<f64>>,
    /// Accuracy over the union of every seen task's test split.
    pub overall_accuracy: Vec<f64>,
    /// Test rows per task, used to weight the overall accuracy.
    pub test_sizes: Vec<usize>,
    /// Wall time per stream in seconds. Excluded from equality-sensitive outputs.
    pub wall_time_secs: Vec<f64>,
}

impl StreamMetrics {
    pub fn streams(&self) -> usize {
        self.accuracy.len()
    }

    /// Records the per-task accuracies after one more stream.
    pub fn push(&mut self, accuracies: Vec<f64>, overall: f64, wall_time_secs: f64) {
        self.accuracy.push(accuracies);
        self.overall_accuracy.push(overall);
        self.wall_time_secs.push(wall_time_secs);
    }

    /// Forgetting at every 1-based stream `t ≥ 2`.
    pub fn forgetting_curve(&self) -> Vec<f64> {
        (2..=self.streams())
            .map(|t| forgetting_measure(self, t).expect("t within range"))
            .collect()
    }
}

/// Mean overall accuracy over the incremental streams `t ≥ 2`.
pub fn average_incremental_accuracy(metrics: &StreamMetrics) -> Result<f64> {
    average_of_incremental(&metrics.overall_accuracy)
}

/// Same aggregation applied to a bare per-stream accuracy series whose first
/// entry is the initial stream.
pub fn average_of_incremental(per_stream: &[f64]) -> Result<f64> {
    if per_stream.len() < 2 {
        return Err(Error::domain(
            "average incremental accuracy needs at least two streams",
        ));
    }
    let tail = &per_stream[1..];
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

/// `mean_{j<t} [ max_{l<t} a[l][j] - a[t][j] ]` with 1-based stream `t ≥ 2`.
pub fn forgetting_measure(metrics: &StreamMetrics, t: usize) -> Result<f64> {
    if t < 2 || t > metrics.streams() {
        return Err(Error::domain(format!(
            "forgetting is defined for streams 2..={}, got {t}",
            metrics.streams()
        )));
    }
    let a = &metrics.accuracy;
    let current = t - 1;
    let total: f64 = (0..current)
        .map(|j| {
            let best = (j..current)
                .map(|l| a[l][j])
                .fold(f64::NEG_INFINITY, f64::max);
            best - a[current][j]
        })
        .sum();
    Ok(total / current as f64)
}

/// Mean of the forgetting curve, or `None` for a single-stream run.
pub fn mean_forgetting(metrics: &StreamMetrics) -> Option<f64> {
    let curve = metrics.forgetting_curve();
    (!curve.is_empty()).then(|| curve.iter().sum::<f64>() / curve.len() as f64)
}
