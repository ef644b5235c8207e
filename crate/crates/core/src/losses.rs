//! Training objective: cross-entropy over every head plus a contrastive
//! distillation regularizer on the old-class slice of the logits.
//!
//! For one sample with teacher distilled probabilities `p` and student
//! distilled probabilities `q` over the `P` old classes, the regularizer is
//!
//! ```text
//! r = -Σ_j log softmax(u)_j,   u_j = p_j · q_j
//!   = -Σ_j u_j + P · logsumexp(u)
//! ```
//!
//! i.e. a softmax over the per-class products of teacher and student
//! probabilities. With a single old class the inner softmax is identically 1
//! and the term vanishes.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numkit::{softmax_into, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub cross_entropy: f64,
    pub regularizer: f64,
    pub total: f64,
    #[serde(skip)]
    pub grad_wrt_logits: Matrix,
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean multi-class cross-entropy against one-hot targets and its gradient
/// `(softmax(z) - onehot) / N`. Labels are output-unit indices.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (n, c) = logits.shape();
    if labels.len() != n {
        return Err(Error::shape(
            "cross_entropy",
            format!("{n} logit rows but {} labels", labels.len()),
        ));
    }
    if let Some((row, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= c) {
        return Err(Error::domain(format!(
            "cross_entropy: label {l} in row {row} exceeds {c} output units"
        )));
    }
    let mut grad = Matrix::zeros(n, c);
    if n == 0 {
        return Ok((0.0, grad));
    }
    let inv_n = 1.0 / n as f64;
    let mut value = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let z = logits.row(i);
        let lse = log_sum_exp(z);
        value += lse - z[label];
        let g = grad.row_mut(i);
        for (gj, &zj) in g.iter_mut().zip(z) {
            *gj = (zj - lse).exp() * inv_n;
        }
        g[label] -= inv_n;
    }
    Ok((value * inv_n, grad))
}

/// Row-wise temperature softmax.
pub fn distill_probs(logits: &Matrix, temperature: f64) -> Result<Matrix> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::domain(format!(
            "distill_probs: temperature must be positive, got {temperature}"
        )));
    }
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        softmax_into(logits.row(i), temperature, out.row_mut(i))?;
    }
    Ok(out)
}

fn check_rows_normalized(m: &Matrix, which: &str) -> Result<()> {
    for (i, r) in m.iter_rows().enumerate() {
        let s: f64 = r.iter().sum();
        if (s - 1.0).abs() > 1e-6 || r.iter().any(|v| *v < 0.0) {
            return Err(Error::domain(format!(
                "contrastive_distillation: {which} row {i} is not a distribution (sum = {s})"
            )));
        }
    }
    Ok(())
}

/// Regularizer value and its gradient with respect to the student probabilities.
/// Teacher probabilities are constants.
pub fn contrastive_distillation(teacher: &Matrix, student: &Matrix) -> Result<(f64, Matrix)> {
    if teacher.shape() != student.shape() {
        return Err(Error::domain(format!(
            "contrastive_distillation: teacher {:?} vs student {:?}",
            teacher.shape(),
            student.shape()
        )));
    }
    check_rows_normalized(teacher, "teacher")?;
    check_rows_normalized(student, "student")?;
    let (n, p) = teacher.shape();
    let mut grad = Matrix::zeros(n, p);
    if n == 0 || p == 0 {
        return Ok((0.0, grad));
    }
    let inv_n = 1.0 / n as f64;
    let pf = p as f64;
    let mut value = 0.0;
    let mut u = vec![0.0; p];
    let mut s = vec![0.0; p];
    for i in 0..n {
        let (tp, sq) = (teacher.row(i), student.row(i));
        for j in 0..p {
            u[j] = tp[j] * sq[j];
        }
        let lse = log_sum_exp(&u);
        value += pf * lse - u.iter().sum::<f64>();
        softmax_into(&u, 1.0, &mut s).expect("unit temperature");
        for (j, g) in grad.row_mut(i).iter_mut().enumerate() {
            *g = tp[j] * (pf * s[j] - 1.0) * inv_n;
        }
    }
    Ok((value * inv_n, grad))
}

/// Pulls a gradient w.r.t. `q = softmax(z / T)` back to `z`, row by row.
fn softmax_backward(probs: &Matrix, grad_probs: &Matrix, temperature: f64) -> Matrix {
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    for i in 0..probs.rows() {
        let q = probs.row(i);
        let g = grad_probs.row(i);
        let inner: f64 = q.iter().zip(g).map(|(a, b)| a * b).sum();
        for (j, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = q[j] * (g[j] - inner) / temperature;
        }
    }
    out
}

/// `L_T = L_C + weight · R`.
///
/// `teacher_old_logits` holds the frozen teacher's logits (`N × P`); the
/// regularizer compares them with the first `P` student columns, both softened
/// at `temperature`. With `P = 0` the regularizer and its gradient are zero.
pub fn total_loss(
    student_logits: &Matrix,
    labels: &[usize],
    teacher_old_logits: &Matrix,
    old_class_count: usize,
    temperature: f64,
    regularizer_weight: f64,
) -> Result<LossBreakdown> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::domain(format!(
            "total_loss: temperature must be positive, got {temperature}"
        )));
    }
    if old_class_count > student_logits.cols() {
        return Err(Error::domain(format!(
            "total_loss: {old_class_count} old classes but the student has {} outputs",
            student_logits.cols()
        )));
    }
    let (ce, mut grad) = cross_entropy(student_logits, labels)?;
    if old_class_count == 0 {
        return Ok(LossBreakdown {
            cross_entropy: ce,
            regularizer: 0.0,
            total: ce,
            grad_wrt_logits: grad,
        });
    }
    if teacher_old_logits.shape() != (student_logits.rows(), old_class_count) {
        return Err(Error::shape(
            "total_loss",
            format!(
                "teacher logits {:?}, expected ({}, {old_class_count})",
                teacher_old_logits.shape(),
                student_logits.rows()
            ),
        ));
    }
    let teacher = distill_probs(teacher_old_logits, temperature)?;
    let student_slice = student_logits.column_slice(0, old_class_count);
    let student = distill_probs(&student_slice, temperature)?;
    let (reg, grad_q) = contrastive_distillation(&teacher, &student)?;
    let reg = reg * regularizer_weight;
    let grad_z = softmax_backward(&student, &grad_q, temperature);
    for i in 0..grad.rows() {
        let row = grad.row_mut(i);
        for (g, &d) in row[..old_class_count].iter_mut().zip(grad_z.row(i)) {
            *g += regularizer_weight * d;
        }
    }
    Ok(LossBreakdown {
        cross_entropy: ce,
        regularizer: reg,
        total: ce + reg,
        grad_wrt_logits: grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{seeded_rng, softmax};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_matrix(rng: &mut impl Rng, n: usize, c: usize, scale: f64) -> Matrix {
        let data = (0..n * c).map(|_| rng.random_range(-scale..scale)).collect();
        Matrix::from_vec(n, c, data).unwrap()
    }

    fn random_probs(rng: &mut impl Rng, n: usize, c: usize) -> Matrix {
        let z = random_matrix(rng, n, c, 2.0);
        distill_probs(&z, 1.0).unwrap()
    }

    /// Central differences of `f` at `x`, h = 1e-5.
    fn numeric_grad(x: &Matrix, f: impl Fn(&Matrix) -> f64) -> Matrix {
        let h = 1e-5;
        let mut g = Matrix::zeros(x.rows(), x.cols());
        for idx in 0..x.as_slice().len() {
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus.as_mut_slice()[idx] += h;
            minus.as_mut_slice()[idx] -= h;
            g.as_mut_slice()[idx] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        g
    }

    fn assert_close(analytic: &Matrix, numeric: &Matrix) {
        for (a, b) in analytic.as_slice().iter().zip(numeric.as_slice()) {
            let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
            assert!(rel < 1e-4 || (a - b).abs() < 1e-9, "analytic {a} vs numeric {b}");
        }
    }

    #[test]
    fn cross_entropy_uniform_row() {
        let (v, _) = cross_entropy(&Matrix::from_rows(&[[0.0, 0.0]]).unwrap(), &[0]).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_saturates() {
        let (v, _) = cross_entropy(&Matrix::from_rows(&[[50.0, -50.0]]).unwrap(), &[0]).unwrap();
        assert!(v < 1e-9);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let err = cross_entropy(&Matrix::zeros(3, 2), &[0, 1, 2]).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn cross_entropy_matches_finite_differences() {
        let mut rng = seeded_rng(11);
        let z = random_matrix(&mut rng, 4, 3, 3.0);
        let labels = [0, 2, 1, 2];
        let (_, g) = cross_entropy(&z, &labels).unwrap();
        let num = numeric_grad(&z, |m| cross_entropy(m, &labels).unwrap().0);
        assert_close(&g, &num);
    }

    #[test]
    fn distill_examples() {
        let p = distill_probs(&Matrix::from_rows(&[[0.0, 0.0], [2.0, 0.0]]).unwrap(), 2.0).unwrap();
        assert_eq!(p.row(0), &[0.5, 0.5]);
        assert!((p[(1, 0)] - 0.7311).abs() < 1e-4 && (p[(1, 1)] - 0.2689).abs() < 1e-4);
        assert!(distill_probs(&Matrix::zeros(1, 2), 0.0).is_err());
        assert!(distill_probs(&Matrix::zeros(0, 2), -1.0).is_err());
    }

    #[test]
    fn distill_at_unit_temperature_is_plain_softmax() {
        let mut rng = seeded_rng(3);
        let z = random_matrix(&mut rng, 5, 4, 10.0);
        let p = distill_probs(&z, 1.0).unwrap();
        for i in 0..5 {
            let s = softmax(z.row(i), 1.0).unwrap();
            assert_eq!(p.row(i), &s[..]);
        }
    }

    #[test]
    fn single_old_class_regularizer_vanishes() {
        let t = Matrix::from_rows(&[[1.0], [1.0]]).unwrap();
        let (v, g) = contrastive_distillation(&t, &t).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.as_slice().iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn uniform_rows_give_p_ln_p() {
        for p in [2usize, 3, 5] {
            let row = vec![1.0 / p as f64; p];
            let m = Matrix::from_rows(&[row.clone(), row.clone(), row]).unwrap();
            let (v, _) = contrastive_distillation(&m, &m).unwrap();
            let expected = p as f64 * (p as f64).ln();
            assert!((v - expected).abs() < 1e-12, "P={p}: {v} vs {expected}");
        }
    }

    #[test]
    fn contrastive_matches_finite_differences() {
        let mut rng = seeded_rng(5);
        let t = random_probs(&mut rng, 3, 4);
        let s = random_probs(&mut rng, 3, 4);
        let (_, g) = contrastive_distillation(&t, &s).unwrap();
        // The value is defined for any student matrix; differentiate the raw formula.
        let raw = |q: &Matrix| -> f64 {
            let mut total = 0.0;
            for i in 0..q.rows() {
                let u: Vec<f64> = (0..q.cols()).map(|j| t[(i, j)] * q[(i, j)]).collect();
                let lse = log_sum_exp(&u);
                total += u.iter().map(|x| lse - x).sum::<f64>();
            }
            total / q.rows() as f64
        };
        assert_close(&g, &numeric_grad(&s, raw));
    }

    #[test]
    fn contrastive_rejects_bad_inputs() {
        let a = Matrix::from_rows(&[[0.5, 0.5]]).unwrap();
        let b = Matrix::from_rows(&[[0.5, 0.6]]).unwrap();
        assert!(contrastive_distillation(&a, &b).is_err());
        assert!(contrastive_distillation(&a, &Matrix::from_rows(&[[1.0]]).unwrap()).is_err());
    }

    #[test]
    fn first_stream_total_is_cross_entropy() {
        let mut rng = seeded_rng(8);
        let z = random_matrix(&mut rng, 4, 3, 2.0);
        let labels = [0, 1, 2, 0];
        let lb = total_loss(&z, &labels, &Matrix::zeros(4, 0), 0, 2.0, 1.0).unwrap();
        let (ce, g) = cross_entropy(&z, &labels).unwrap();
        assert_eq!(lb.total, ce);
        assert_eq!(lb.regularizer, 0.0);
        assert_eq!(lb.grad_wrt_logits, g);
    }

    #[test]
    fn single_old_class_total_is_cross_entropy() {
        let mut rng = seeded_rng(9);
        let z = random_matrix(&mut rng, 3, 3, 2.0);
        let teacher = z.column_slice(0, 1);
        let lb = total_loss(&z, &[0, 1, 2], &teacher, 1, 2.0, 1.0).unwrap();
        assert_eq!(lb.regularizer, 0.0);
        assert_eq!(lb.total, lb.cross_entropy);
    }

    #[test]
    fn total_loss_checks_widths() {
        let z = Matrix::zeros(2, 3);
        assert!(matches!(
            total_loss(&z, &[0, 1], &Matrix::zeros(2, 4), 4, 2.0, 1.0),
            Err(Error::Domain(_))
        ));
        assert!(total_loss(&z, &[0, 1], &Matrix::zeros(2, 2), 1, 2.0, 1.0).is_err());
    }

    #[test]
    fn total_gradient_matches_finite_differences() {
        let mut rng = seeded_rng(21);
        let (n, p, k_new) = (4, 3, 2);
        let z = random_matrix(&mut rng, n, p + k_new, 2.0);
        let teacher = random_matrix(&mut rng, n, p, 2.0);
        let labels = [0, 4, 2, 3];
        let lb = total_loss(&z, &labels, &teacher, p, 2.0, 1.0).unwrap();
        let num = numeric_grad(&z, |m| total_loss(m, &labels, &teacher, p, 2.0, 1.0).unwrap().total);
        assert_close(&lb.grad_wrt_logits, &num);
    }

    proptest! {
        #[test]
        fn cross_entropy_rows_sum_to_zero(seed in 0u64..1000, n in 1usize..8, c in 1usize..10) {
            let mut rng = seeded_rng(seed);
            let z = random_matrix(&mut rng, n, c, 5.0);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
            let (v, g) = cross_entropy(&z, &labels).unwrap();
            prop_assert!(v >= 0.0);
            for r in g.iter_rows() {
                prop_assert!(r.iter().sum::<f64>().abs() < 1e-10);
            }
        }

        #[test]
        fn contrastive_is_column_permutation_invariant(seed in 0u64..1000, n in 1usize..5, p in 1usize..6) {
            let mut rng = seeded_rng(seed);
            let t = random_probs(&mut rng, n, p);
            let s = random_probs(&mut rng, n, p);
            let perm: Vec<usize> = (0..p).rev().collect();
            let permute = |m: &Matrix| {
                let rows: Vec<Vec<f64>> = m.iter_rows().map(|r| perm.iter().map(|&j| r[j]).collect()).collect();
                Matrix::from_rows(&rows).unwrap()
            };
            let (a, _) = contrastive_distillation(&t, &s).unwrap();
            let (b, _) = contrastive_distillation(&permute(&t), &permute(&s)).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn additivity(seed in 0u64..1000) {
            let mut rng = seeded_rng(seed);
            let z = random_matrix(&mut rng, 5, 6, 3.0);
            let teacher = random_matrix(&mut rng, 5, 4, 3.0);
            let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..6)).collect();
            let lb = total_loss(&z, &labels, &teacher, 4, 2.0, 1.0).unwrap();
            prop_assert_eq!(lb.total, lb.cross_entropy + lb.regularizer);
            prop_assert_eq!(lb.grad_wrt_logits.shape(), z.shape());
        }
    }
}
