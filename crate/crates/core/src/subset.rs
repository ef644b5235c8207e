//! Informative subset selection.
//!
//! The current task's features are clustered jointly with k-means (one cluster
//! per class). Each sample gets a soft membership distribution over the
//! centroids, `p_l ∝ exp(-‖f - Γ_l‖²)`, and is scored by the entropy of that
//! distribution. Within every class the lowest-entropy samples, the ones most
//! confidently inside a single cluster, are kept as exemplars.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ClassId;
use crate::error::{Error, Result};
use crate::numkit::{derive_seed, entropy, seeded_rng, squared_distance, Matrix, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub centroids: Vec<Vector>,
    /// Cluster index of every sample, in row order.
    pub assignments: Vec<usize>,
    /// Total squared distance of samples to their assigned centroid.
    pub inertia: f64,
    /// Inertia after each assignment step, in iteration order.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub max_iter: usize,
    pub tol: f64,
    /// Independent seeded restarts; the lowest-inertia run wins.
    pub restarts: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-6,
            restarts: 5,
        }
    }
}

fn nearest(row: &[f64], centroids: &[Vector]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (l, c) in centroids.iter().enumerate() {
        let d: f64 = row.iter().zip(c.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.1 {
            best = (l, d);
        }
    }
    best
}

/// k-means++ seeding: first centre uniform, the rest proportional to the
/// squared distance from the nearest chosen centre.
fn plus_plus_init(features: &Matrix, k: usize, rng: &mut impl Rng) -> Vec<Vector> {
    let n = features.rows();
    let mut centroids = vec![Vector::new(features.row(rng.random_range(0..n)).to_vec())];
    let mut d2: Vec<f64> = features
        .iter_rows()
        .map(|r| nearest(r, &centroids).1)
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = Vector::new(features.row(pick).to_vec());
        for (i, r) in features.iter_rows().enumerate() {
            let d: f64 = r.iter().zip(c.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            d2[i] = d2[i].min(d);
        }
        centroids.push(c);
    }
    centroids
}

/// One seeded run of Lloyd's algorithm with k-means++ seeding, followed by
/// single-sample refinement.
///
/// Lloyd stops when no centroid moves by `tol` or more, or after `max_iter`
/// iterations. A cluster left empty is re-seeded with the sample farthest from
/// its current centroid.
pub fn kmeans(features: &Matrix, k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<ClusterModel> {
    let n = features.rows();
    if k == 0 {
        return Err(Error::domain("kmeans: k must be at least 1"));
    }
    if n < k {
        return Err(Error::domain(format!("kmeans: {n} samples cannot form {k} clusters")));
    }
    let dim = features.cols();
    let mut rng = seeded_rng(seed);
    let mut centroids = plus_plus_init(features, k, &mut rng);
    let mut assignments = vec![0usize; n];
    let mut dists = vec![0.0; n];
    let mut history = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iter.max(1) {
        iterations += 1;
        for (i, r) in features.iter_rows().enumerate() {
            let (l, d) = nearest(r, &centroids);
            assignments[i] = l;
            dists[i] = d;
        }
        history.push(dists.iter().sum());

        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        for l in 0..k {
            if counts[l] > 0 {
                continue;
            }
            // Steal the worst-fitting sample from a cluster that can spare it.
            let far = (0..n)
                .filter(|&i| counts[assignments[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
            if let Some(i) = far {
                counts[assignments[i]] -= 1;
                counts[l] += 1;
                assignments[i] = l;
                dists[i] = 0.0;
                centroids[l] = Vector::new(features.row(i).to_vec());
            }
        }

        let mut sums = vec![vec![0.0; dim]; k];
        for (i, r) in features.iter_rows().enumerate() {
            for (s, v) in sums[assignments[i]].iter_mut().zip(r) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for l in 0..k {
            let inv = 1.0 / counts[l] as f64;
            let new: Vec<f64> = sums[l].iter().map(|s| s * inv).collect();
            shift = shift.max(squared_distance(&new, &centroids[l])?.sqrt());
            centroids[l] = Vector::new(new);
        }
        if shift < tol {
            break;
        }
    }

    for (i, r) in features.iter_rows().enumerate() {
        assignments[i] = nearest(r, &centroids).0;
    }
    iterations += hartigan_refine(features, &mut assignments, &mut centroids, max_iter, &mut history);

    let mut inertia = 0.0;
    for (i, r) in features.iter_rows().enumerate() {
        let (l, d) = nearest(r, &centroids);
        assignments[i] = l;
        inertia += d;
    }
    Ok(ClusterModel {
        centroids,
        assignments,
        inertia,
        inertia_history: history,
        iterations,
    })
}

/// Single-sample moves that strictly lower the within-cluster sum of squares.
///
/// Lloyd stops at partitions where every sample is nearest its own centroid;
/// moving `x` from `a` to `b` can still pay off because the centroids shift with
/// it. The change is `n_b/(n_b+1)·‖x−c_b‖² − n_a/(n_a−1)·‖x−c_a‖²`. A partition
/// with no improving move is also a nearest-centroid partition. Returns the
/// number of passes that moved something; each appends its inertia to `history`.
fn hartigan_refine(
    features: &Matrix,
    assignments: &mut [usize],
    centroids: &mut [Vector],
    max_passes: usize,
    history: &mut Vec<f64>,
) -> usize {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    if counts.contains(&0) {
        return 0;
    }
    let mut means: Vec<Vec<f64>> = vec![vec![0.0; features.cols()]; k];
    for (i, r) in features.iter_rows().enumerate() {
        for (m, v) in means[assignments[i]].iter_mut().zip(r) {
            *m += v / counts[assignments[i]] as f64;
        }
    }
    let sq = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum() };

    let mut passes = 0;
    for _ in 0..max_passes {
        let mut moved = false;
        for (i, x) in features.iter_rows().enumerate() {
            let a = assignments[i];
            if counts[a] < 2 {
                continue;
            }
            let na = counts[a] as f64;
            let removal = na / (na - 1.0) * sq(x, &means[a]);
            let mut best: Option<(usize, f64)> = None;
            for b in (0..k).filter(|&b| b != a) {
                let nb = counts[b] as f64;
                let delta = nb / (nb + 1.0) * sq(x, &means[b]) - removal;
                if delta < -1e-12 * removal.max(1e-300) && best.is_none_or(|(_, d)| delta < d) {
                    best = Some((b, delta));
                }
            }
            if let Some((b, _)) = best {
                let (na, nb) = (counts[a] as f64, counts[b] as f64);
                for (d, v) in x.iter().enumerate() {
                    means[a][d] = (means[a][d] * na - v) / (na - 1.0);
                    means[b][d] = (means[b][d] * nb + v) / (nb + 1.0);
                }
                counts[a] -= 1;
                counts[b] += 1;
                assignments[i] = b;
                moved = true;
            }
        }
        if !moved {
            break;
        }
        passes += 1;
        // Recompute exactly rather than trusting the running updates.
        for m in means.iter_mut() {
            m.iter_mut().for_each(|v| *v = 0.0);
        }
        for (i, r) in features.iter_rows().enumerate() {
            for (m, v) in means[assignments[i]].iter_mut().zip(r) {
                *m += v;
            }
        }
        for (m, &c) in means.iter_mut().zip(&counts) {
            m.iter_mut().for_each(|v| *v /= c as f64);
        }
        history.push(features.iter_rows().zip(assignments.iter()).map(|(r, &a)| sq(r, &means[a])).sum());
    }
    for (c, m) in centroids.iter_mut().zip(means) {
        *c = Vector::new(m);
    }
    passes
}

/// Lowest-inertia model over `params.restarts` seeded runs.
pub fn kmeans_best_of(features: &Matrix, k: usize, seed: u64, params: &KMeansParams) -> Result<ClusterModel> {
    let mut best: Option<ClusterModel> = None;
    for r in 0..params.restarts.max(1) {
        let m = kmeans(features, k, derive_seed(seed, &[r as u64]), params.max_iter, params.tol)?;
        if best.as_ref().is_none_or(|b| m.inertia < b.inertia) {
            best = Some(m);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Soft assignment `p_l = exp(-‖f - Γ_l‖²) / Σ_v exp(-‖f - Γ_v‖²)`.
pub fn membership_probabilities(feature: &[f64], centroids: &[Vector]) -> Result<Vector> {
    if centroids.is_empty() {
        return Err(Error::domain("membership_probabilities: no centroids"));
    }
    let neg: Vec<f64> = centroids
        .iter()
        .map(|c| squared_distance(feature, c).map(|d| -d))
        .collect::<Result<_>>()?;
    let max = neg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = neg.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(Vector::new(exps.into_iter().map(|e| e / sum).collect()))
}

/// Entropy of each row's membership distribution.
pub fn entropy_scores(features: &Matrix, centroids: &[Vector]) -> Result<Vector> {
    if features.rows() == 0 {
        return Err(Error::domain("entropy_scores: no samples"));
    }
    features
        .iter_rows()
        .map(|r| entropy(&membership_probabilities(r, centroids)?))
        .collect::<Result<Vec<f64>>>()
        .map(Vector::new)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionCriterion {
    /// Lowest membership entropy first, distance to centroid as tie-break.
    #[default]
    Entropy,
    /// Smallest distance to the assigned centroid first.
    Distance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Kept row indices per class, ascending.
    pub kept: BTreeMap<ClassId, Vec<usize>>,
    /// Entropy score of every row (empty for random selection).
    pub scores: Vec<f64>,
    /// Inertia of the clustering used for scoring, if any.
    pub inertia: Option<f64>,
}

impl SelectionResult {
    pub fn total_kept(&self) -> usize {
        self.kept.values().map(Vec::len).sum()
    }
}

/// Per-class exemplar budget `floor(ε · n)`.
pub fn budget(epsilon: f64, n: usize) -> usize {
    // The slack absorbs representation error such as 0.15 * 100 = 15.000000000000002
    // or 0.29 * 100 = 28.999999999999996.
    ((epsilon * n as f64) + 1e-9).floor() as usize
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::domain(format!("epsilon must lie in (0, 1], got {epsilon}")));
    }
    Ok(())
}

fn group_rows(labels: &[ClassId]) -> BTreeMap<ClassId, Vec<usize>> {
    let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    by_class
}

/// Keeps `floor(ε · N_c)` exemplars of every class.
pub fn select_exemplars(
    features: &Matrix,
    labels: &[ClassId],
    epsilon: f64,
    seed: u64,
    criterion: SelectionCriterion,
    params: &KMeansParams,
) -> Result<SelectionResult> {
    check_epsilon(epsilon)?;
    if features.rows() != labels.len() {
        return Err(Error::shape(
            "select_exemplars",
            format!("{} rows but {} labels", features.rows(), labels.len()),
        ));
    }
    let by_class = group_rows(labels);
    if by_class.is_empty() {
        return Err(Error::Data("select_exemplars: no samples".into()));
    }
    let clusters = kmeans_best_of(features, by_class.len(), seed, params)?;
    let scores = entropy_scores(features, &clusters.centroids)?.into_inner();
    let own_distance: Vec<f64> = features
        .iter_rows()
        .zip(&clusters.assignments)
        .map(|(r, &l)| squared_distance(r, &clusters.centroids[l]))
        .collect::<Result<_>>()?;

    let mut kept = BTreeMap::new();
    for (class, mut rows) in by_class {
        let keep = budget(epsilon, rows.len());
        match criterion {
            SelectionCriterion::Entropy => rows.sort_by(|&a, &b| {
                scores[a]
                    .total_cmp(&scores[b])
                    .then(own_distance[a].total_cmp(&own_distance[b]))
                    .then(a.cmp(&b))
            }),
            SelectionCriterion::Distance => rows.sort_by(|&a, &b| {
                own_distance[a]
                    .total_cmp(&own_distance[b])
                    .then(scores[a].total_cmp(&scores[b]))
                    .then(a.cmp(&b))
            }),
        }
        rows.truncate(keep);
        rows.sort_unstable();
        kept.insert(class, rows);
    }
    Ok(SelectionResult {
        kept,
        scores,
        inertia: Some(clusters.inertia),
    })
}

/// Seeded uniform choice of the same per-class budget, the control arm for
/// entropy-based selection.
pub fn select_random(labels: &[ClassId], epsilon: f64, seed: u64) -> Result<SelectionResult> {
    check_epsilon(epsilon)?;
    let mut rng = seeded_rng(seed);
    let mut kept = BTreeMap::new();
    for (class, mut rows) in group_rows(labels) {
        let keep = budget(epsilon, rows.len());
        rows.shuffle(&mut rng);
        rows.truncate(keep);
        rows.sort_unstable();
        kept.insert(class, rows);
    }
    Ok(SelectionResult {
        kept,
        scores: Vec::new(),
        inertia: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn ids(v: &[u32]) -> Vec<ClassId> {
        v.iter().map(|&i| ClassId(i)).collect()
    }

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec())
    }

    #[test]
    fn separated_pairs() {
        let x = m(&[&[0.0, 0.0], &[0.1, 0.0], &[10.0, 0.0], &[10.1, 0.0]]);
        let c = kmeans_best_of(&x, 2, 1, &KMeansParams::default()).unwrap();
        let mut xs: Vec<f64> = c.centroids.iter().map(|c| c[0]).collect();
        xs.sort_by(f64::total_cmp);
        assert!((xs[0] - 0.05).abs() < 1e-12 && (xs[1] - 10.05).abs() < 1e-12);
        assert!(c.centroids.iter().all(|c| c[1] == 0.0));
    }

    #[test]
    fn single_cluster_is_global_mean() {
        let x = m(&[&[1.0, 2.0], &[3.0, -2.0], &[5.0, 3.0]]);
        let c = kmeans(&x, 1, 0, 100, 1e-9).unwrap();
        assert!((c.centroids[0][0] - 3.0).abs() < 1e-12);
        assert!((c.centroids[0][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_rows() {
        assert!(matches!(kmeans(&m(&[&[1.0]]), 2, 0, 10, 1e-6), Err(Error::Domain(_))));
        assert!(kmeans(&m(&[&[1.0]]), 0, 0, 10, 1e-6).is_err());
    }

    #[test]
    fn duplicate_points_do_not_leave_empty_clusters() {
        let x = m(&[&[1.0], &[1.0], &[1.0], &[1.0]]);
        let c = kmeans(&x, 3, 2, 20, 1e-9).unwrap();
        assert_eq!(c.centroids.len(), 3);
        assert!(c.centroids.iter().all(|c| c[0] == 1.0));
        assert_eq!(c.inertia, 0.0);
    }

    #[test]
    fn membership_examples() {
        let p = membership_probabilities(&[1.0, 0.0], &[v(&[0.0, 0.0]), v(&[2.0, 0.0])]).unwrap();
        assert_eq!(&p[..], &[0.5, 0.5]);
        let p = membership_probabilities(&[3.0, 3.0], &[v(&[0.0, 0.0])]).unwrap();
        assert_eq!(&p[..], &[1.0]);
        let p = membership_probabilities(&[0.0, 0.0], &[v(&[0.0, 0.0]), v(&[2.0, 0.0])]).unwrap();
        let expected = 1.0 / (1.0 + (-4f64).exp());
        assert!((p[0] - expected).abs() < 1e-12);
        assert!((p[0] - 0.9820).abs() < 1e-4 && (p[1] - 0.0180).abs() < 1e-4);
    }

    #[test]
    fn membership_errors() {
        assert!(membership_probabilities(&[0.0], &[]).is_err());
        assert!(membership_probabilities(&[0.0], &[v(&[0.0, 1.0])]).is_err());
    }

    #[test]
    fn entropy_score_examples() {
        let cents = [v(&[0.0, 0.0]), v(&[10.0, 0.0]), v(&[0.0, 10.0]), v(&[10.0, 10.0])];
        let s = entropy_scores(&m(&[&[0.0, 0.0], &[5.0, 5.0]]), &cents).unwrap();
        assert!(s[0] < 1e-10);
        assert!((s[1] - 4f64.ln()).abs() < 1e-9);
        assert!(entropy_scores(&Matrix::zeros(0, 2), &cents).is_err());
    }

    #[test]
    fn entropy_scores_are_composition() {
        let mut rng = seeded_rng(6);
        let data: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x = Matrix::from_vec(5, 2, data).unwrap();
        let cents = [v(&[0.5, -0.5]), v(&[-1.0, 1.0])];
        let s = entropy_scores(&x, &cents).unwrap();
        for (i, r) in x.iter_rows().enumerate() {
            let d: Vec<f64> = cents.iter().map(|c| (r[0] - c[0]).powi(2) + (r[1] - c[1]).powi(2)).collect();
            let z: f64 = d.iter().map(|d| (-d).exp()).sum();
            let h: f64 = d.iter().map(|d| (-d).exp() / z).map(|p| -p * p.ln()).sum();
            assert!((s[i] - h).abs() < 1e-12);
        }
    }

    #[test]
    fn epsilon_one_keeps_everything() {
        let x = m(&[&[0.0], &[0.1], &[5.0], &[5.2], &[5.1]]);
        let labels = ids(&[0, 0, 1, 1, 1]);
        let sel = select_exemplars(&x, &labels, 1.0, 3, SelectionCriterion::Entropy, &KMeansParams::default()).unwrap();
        assert_eq!(sel.kept[&ClassId(0)], vec![0, 1]);
        assert_eq!(sel.kept[&ClassId(1)], vec![2, 3, 4]);
    }

    #[test]
    fn epsilon_out_of_range() {
        let x = m(&[&[0.0]]);
        for eps in [0.0, -0.1, 1.01] {
            assert!(select_exemplars(&x, &ids(&[0]), eps, 0, SelectionCriterion::Entropy, &KMeansParams::default()).is_err());
            assert!(select_random(&ids(&[0]), eps, 0).is_err());
        }
    }

    #[test]
    fn paper_budget_twenty_per_class() {
        let mut rng = seeded_rng(10);
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|i| vec![(i / 20) as f64 * 8.0 + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let labels: Vec<ClassId> = (0..100).map(|i| ClassId(i / 20)).collect();
        let sel = select_exemplars(&Matrix::from_rows(&rows).unwrap(), &labels, 0.3, 1, SelectionCriterion::Entropy, &KMeansParams::default()).unwrap();
        assert!(sel.kept.values().all(|k| k.len() == 6));
        assert_eq!(sel.total_kept(), 30);
    }

    #[test]
    fn outlier_between_classes_is_pruned() {
        // Class 0 at {0, 0.1, 0.2} plus an outlier at 5.0; class 1 around 10.
        let x = m(&[&[0.0], &[0.1], &[0.2], &[5.0], &[10.0], &[10.1], &[10.2], &[10.3]]);
        let labels = ids(&[0, 0, 0, 0, 1, 1, 1, 1]);
        let sel = select_exemplars(&x, &labels, 0.5, 0, SelectionCriterion::Entropy, &KMeansParams::default()).unwrap();
        let kept = &sel.kept[&ClassId(0)];
        assert_eq!(kept.len(), 2);
        assert!(!kept.contains(&3));
        // The outlier has the largest entropy of its class.
        assert!((0..3).all(|i| sel.scores[i] < sel.scores[3]));
    }

    #[test]
    fn distance_criterion_prefers_cluster_core() {
        let x = m(&[&[0.0], &[0.1], &[0.2], &[1.5], &[10.0], &[10.1], &[10.2], &[10.3]]);
        let labels = ids(&[0, 0, 0, 0, 1, 1, 1, 1]);
        let sel = select_exemplars(&x, &labels, 0.5, 0, SelectionCriterion::Distance, &KMeansParams::default()).unwrap();
        // Class 0 centroid is 0.45; nearest samples are 0.2 and 0.1.
        assert_eq!(sel.kept[&ClassId(0)], vec![1, 2]);
    }

    #[test]
    fn random_selection_respects_budget() {
        let labels: Vec<ClassId> = (0..60).map(|i| ClassId(i % 3)).collect();
        let sel = select_random(&labels, 0.3, 4).unwrap();
        assert!(sel.kept.values().all(|k| k.len() == 6));
        assert_eq!(sel, select_random(&labels, 0.3, 4).unwrap());
    }

    #[test]
    fn budget_floors() {
        assert_eq!(budget(0.3, 20), 6);
        assert_eq!(budget(0.15, 100), 15);
        assert_eq!(budget(0.05, 7), 0);
        assert_eq!(budget(1.0, 7), 7);
        assert_eq!(budget(0.3, 7), 2);
    }

    fn points(seed: u64, n: usize, dim: usize) -> Matrix {
        let mut rng = seeded_rng(seed);
        let data = (0..n * dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        Matrix::from_vec(n, dim, data).unwrap()
    }

    proptest! {
        #[test]
        fn inertia_never_increases(seed in 0u64..300, n in 3usize..30, k in 1usize..4) {
            let x = points(seed, n, 2);
            let c = kmeans(&x, k, seed, 50, 1e-9).unwrap();
            for w in c.inertia_history.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
            }
            prop_assert!(c.inertia <= c.inertia_history.last().unwrap() * (1.0 + 1e-12) + 1e-12);
            for (i, r) in x.iter_rows().enumerate() {
                let own = squared_distance(r, &c.centroids[c.assignments[i]]).unwrap();
                for cent in &c.centroids {
                    prop_assert!(own <= squared_distance(r, cent).unwrap() + 1e-12);
                }
            }
        }

        #[test]
        fn membership_is_normalized(seed in 0u64..300, k in 1usize..6) {
            let x = points(seed, 4, 3);
            let cents: Vec<Vector> = points(seed + 1, k, 3).iter_rows().map(v).collect();
            for r in x.iter_rows() {
                let p = membership_probabilities(r, &cents).unwrap();
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            let s = entropy_scores(&x, &cents).unwrap();
            prop_assert!(s.iter().all(|&h| h >= 0.0 && h <= (k as f64).ln() + 1e-12));
        }

        #[test]
        fn entropy_is_translation_invariant(seed in 0u64..300, shift in -50.0..50.0f64) {
            let x = points(seed, 5, 2);
            let cents: Vec<Vector> = points(seed + 7, 3, 2).iter_rows().map(v).collect();
            let moved = |m: &[f64]| m.iter().map(|a| a + shift).collect::<Vec<f64>>();
            let xs: Vec<Vec<f64>> = x.iter_rows().map(moved).collect();
            let cs: Vec<Vector> = cents.iter().map(|c| Vector::new(moved(c))).collect();
            let a = entropy_scores(&x, &cents).unwrap();
            let b = entropy_scores(&Matrix::from_rows(&xs).unwrap(), &cs).unwrap();
            for (p, q) in a.iter().zip(b.iter()) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }

        #[test]
        fn selection_budget_and_ordering(seed in 0u64..200, eps in 0.05..1.0f64, n in 1usize..25) {
            let x = points(seed, 2 * n, 2);
            let labels: Vec<ClassId> = (0..2 * n).map(|i| ClassId((i % 2) as u32)).collect();
            let params = KMeansParams::default();
            let sel = select_exemplars(&x, &labels, eps, seed, SelectionCriterion::Entropy, &params).unwrap();
            let again = select_exemplars(&x, &labels, eps, seed, SelectionCriterion::Entropy, &params).unwrap();
            prop_assert_eq!(&sel, &again);
            for (class, kept) in &sel.kept {
                prop_assert_eq!(kept.len(), budget(eps, n));
                let rows: Vec<usize> = (0..2 * n).filter(|&i| labels[i] == *class).collect();
                prop_assert!(kept.iter().all(|i| rows.contains(i)));
                let max_kept = kept.iter().map(|&i| sel.scores[i]).fold(f64::NEG_INFINITY, f64::max);
                for i in rows.iter().filter(|i| !kept.contains(i)) {
                    prop_assert!(sel.scores[*i] >= max_kept);
                }
            }
        }
    }
}
