//! Linear regression from raw embeddings to normalized partition CI.
//!
//! The bias is left unpenalized by centering: the weights solve
//! `(Xc^T Xc + lambda I) w = Xc^T tc` with Jacobi-preconditioned conjugate
//! gradient, and `b = mean(t) - mean(x) . w`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, symmetric_eigen, Matrix};
use crate::types::{CiRegressor, EmbeddingSet, PartitionModel};

pub const CG_TOLERANCE: f64 = 1e-8;
/// Auto ridge penalty as a fraction of the mean Gram diagonal.
pub const AUTO_RIDGE_SCALE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedTargets {
    pub targets: BTreeMap<usize, f64>,
    pub min: f64,
    pub max: f64,
}

/// Min-max normalizes CI scores to `[0, 1]`.
pub fn normalize_targets(ci_scores: &BTreeMap<usize, f64>) -> Result<NormalizedTargets> {
    let min = ci_scores.values().copied().fold(f64::INFINITY, f64::min);
    let max = ci_scores.values().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(min < max) {
        return Err(Error::DegenerateTargets);
    }
    let span = max - min;
    Ok(NormalizedTargets {
        targets: ci_scores.iter().map(|(&p, &ci)| (p, (ci - min) / span)).collect(),
        min,
        max,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum RidgePenalty {
    /// `1e-4 * trace(Xc^T Xc) / d`
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub ridge_lambda: f64,
    pub iterations: usize,
    pub relative_residual: f64,
}

impl LinearFit {
    pub fn into_regressor(self, target_min: f64, target_max: f64) -> Result<CiRegressor> {
        let reg = CiRegressor {
            weights: self.weights,
            bias: self.bias,
            ridge_lambda: self.ridge_lambda,
            target_min,
            target_max,
        };
        reg.validate()?;
        Ok(reg)
    }
}

/// `A A^T` over the rows of `a`, parallel per output row.
fn gram_rows(a: &Matrix) -> Matrix {
    let k = a.rows();
    let upper: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|i| (i..k).map(|j| dot(a.row(i), a.row(j))).collect())
        .collect();
    let mut g = Matrix::zeros(k, k);
    for (i, row) in upper.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            g[(i, i + off)] = v;
            g[(i + off, i)] = v;
        }
    }
    g
}

/// Minimizes `sum (w.x_i + b - t_i)^2 + lambda |w|^2`.
pub fn fit(x: &Matrix, targets: &[f64], penalty: RidgePenalty) -> Result<LinearFit> {
    let (n, d) = (x.rows(), x.cols());
    if targets.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: targets.len(),
        });
    }
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    if !x.is_finite() || !targets.iter().all(|t| t.is_finite()) {
        return Err(Error::NonFinite("regression input".into()));
    }

    let x_mean: Vec<f64> = (0..d)
        .map(|j| x.iter_rows().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let t_mean = targets.iter().sum::<f64>() / n as f64;
    let mut xc_t = Matrix::zeros(d, n);
    for (i, row) in x.iter_rows().enumerate() {
        for j in 0..d {
            xc_t[(j, i)] = row[j] - x_mean[j];
        }
    }
    let tc: Vec<f64> = targets.iter().map(|t| t - t_mean).collect();
    let gram = gram_rows(&xc_t);
    let rhs: Vec<f64> = xc_t.iter_rows().map(|col| dot(col, &tc)).collect();

    let trace: f64 = (0..d).map(|j| gram[(j, j)]).sum();
    let lambda = match penalty {
        RidgePenalty::Auto => AUTO_RIDGE_SCALE * trace / d as f64,
        RidgePenalty::Fixed(l) if l.is_finite() && l >= 0.0 => l,
        RidgePenalty::Fixed(l) => return Err(Error::Invariant(format!("ridge lambda must be >= 0, got {l}"))),
    };
    if lambda == 0.0 {
        if n - 1 < d || (0..d).any(|j| gram[(j, j)] == 0.0) {
            return Err(Error::Singular);
        }
        // collinear columns leave a consistent system CG would happily solve
        let (eig, _) = symmetric_eigen(&gram, 1e-12)?;
        let (top, bottom) = (eig[0], eig[d - 1]);
        if bottom <= 1e-10 * top {
            return Err(Error::Singular);
        }
    }

    let (weights, iterations, relative_residual) = conjugate_gradient(&gram, lambda, &rhs)?;
    let bias = t_mean - dot(&x_mean, &weights);
    Ok(LinearFit {
        weights,
        bias,
        ridge_lambda: lambda,
        iterations,
        relative_residual,
    })
}

/// Solves `(A + lambda I) w = b` for symmetric positive (semi)definite `A`.
fn conjugate_gradient(a: &Matrix, lambda: f64, b: &[f64]) -> Result<(Vec<f64>, usize, f64)> {
    let d = b.len();
    let b_norm = norm(b);
    let mut w = vec![0.0; d];
    if b_norm == 0.0 {
        return Ok((w, 0, 0.0));
    }
    let apply = |v: &[f64]| -> Vec<f64> {
        a.mul_vec(v)
            .into_iter()
            .zip(v)
            .map(|(av, vi)| av + lambda * vi)
            .collect()
    };
    let precond: Vec<f64> = (0..d)
        .map(|j| {
            let diag = a[(j, j)] + lambda;
            if diag > 0.0 {
                1.0 / diag
            } else {
                1.0
            }
        })
        .collect();

    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&precond).map(|(ri, mi)| ri * mi).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let scale = a.max_abs() + lambda;
    let max_iters = 10 * d + 100;
    for iter in 1..=max_iters {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > f64::EPSILON * scale * dot(&p, &p)) {
            return Err(Error::Singular);
        }
        let alpha = rz / pap;
        for j in 0..d {
            w[j] += alpha * p[j];
            r[j] -= alpha * ap[j];
        }
        // recompute the true residual now and then to avoid drift
        if iter % 50 == 0 {
            let aw = apply(&w);
            for j in 0..d {
                r[j] = b[j] - aw[j];
            }
        }
        let rel = norm(&r) / b_norm;
        if rel < CG_TOLERANCE {
            let aw = apply(&w);
            let true_rel = norm(&b.iter().zip(&aw).map(|(bi, ai)| bi - ai).collect::<Vec<_>>()) / b_norm;
            if true_rel < CG_TOLERANCE {
                return Ok((w, iter, true_rel));
            }
            r = b.iter().zip(&aw).map(|(bi, ai)| bi - ai).collect();
        }
        z = r.iter().zip(&precond).map(|(ri, mi)| ri * mi).collect();
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for j in 0..d {
            p[j] = z[j] + beta * p[j];
        }
    }
    let aw = apply(&w);
    let residual = norm(&b.iter().zip(&aw).map(|(bi, ai)| bi - ai).collect::<Vec<_>>()) / b_norm;
    if lambda == 0.0 {
        return Err(Error::Singular);
    }
    Err(Error::NotConverged {
        iterations: max_iters,
        residual,
    })
}

/// `w . x + b` per row, optionally clamped to `[0, 1]`.
pub fn predict(model: &CiRegressor, x: &Matrix, clamp: bool) -> Result<Vec<f64>> {
    if x.cols() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            actual: x.cols(),
        });
    }
    Ok((0..x.rows())
        .into_par_iter()
        .map(|i| {
            let s = dot(&model.weights, x.row(i)) + model.bias;
            if clamp {
                s.clamp(0.0, 1.0)
            } else {
                s
            }
        })
        .collect())
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r_squared(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: targets.len(),
            actual: predictions.len(),
        });
    }
    if targets.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: targets.len(),
        });
    }
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let ss_tot: f64 = targets.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::DegenerateTargets);
    }
    let ss_res: f64 = predictions.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Seeded shuffle of the sorted ids, then `fraction` of them for training.
/// The test side gets `floor(n * (1 - fraction))` ids, at least one.
pub fn split_train_test(ids: &[String], fraction: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Fraction(fraction));
    }
    let n = ids.len();
    let n_test = ((n as f64 * (1.0 - fraction) + 1e-9).floor() as usize).max(1).min(n);
    let n_train = n - n_test;
    if n_train == 0 {
        return Err(Error::EmptySplit {
            train: n_train,
            test: n_test,
        });
    }
    let mut shuffled = ids.to_vec();
    shuffled.sort();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = shuffled.split_off(n_train);
    Ok((shuffled, test))
}

/// `sum (w.x_i + b - t_i)^2 + lambda |w|^2`
pub fn objective(x: &Matrix, targets: &[f64], lambda: f64, weights: &[f64], bias: f64) -> f64 {
    let fit: f64 = x
        .iter_rows()
        .zip(targets)
        .map(|(row, t)| (dot(row, weights) + bias - t).powi(2))
        .sum();
    fit + lambda * dot(weights, weights)
}

/// Gradient of [`objective`] from the uncentered normal equations:
/// `2 (X^T X w + X^T 1 b - X^T t + lambda w)` and `2 (1^T X w + n b - 1^T t)`.
pub fn objective_gradient(x: &Matrix, targets: &[f64], lambda: f64, weights: &[f64], bias: f64) -> (Vec<f64>, f64) {
    let xt = x.transpose();
    let gram = gram_rows(&xt);
    let col_sums: Vec<f64> = xt.iter_rows().map(|c| c.iter().sum()).collect();
    let xty: Vec<f64> = xt.iter_rows().map(|c| dot(c, targets)).collect();
    let gw = gram.mul_vec(weights);
    let grad_w = (0..weights.len())
        .map(|j| 2.0 * (gw[j] + col_sums[j] * bias - xty[j] + lambda * weights[j]))
        .collect();
    let n = x.rows() as f64;
    let grad_b = 2.0 * (dot(&col_sums, weights) + n * bias - targets.iter().sum::<f64>());
    (grad_w, grad_b)
}

/// Per-image regression data drawn from a fitted partition model: every
/// embedding the model assigned gets its final partition's normalized CI.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub ids: Vec<String>,
    pub x: Matrix,
    pub targets: Vec<f64>,
    pub normalization: NormalizedTargets,
}

pub fn training_set(model: &PartitionModel, embeddings: &EmbeddingSet) -> Result<TrainingSet> {
    let normalization = normalize_targets(&model.ci_scores)?;
    let covered = embeddings.filter(|id| model.assignment.contains_key(id));
    let targets = covered
        .ids()
        .map(|id| {
            let p = model.final_partition_of(id).expect("filtered to covered ids");
            normalization.targets[&p]
        })
        .collect();
    Ok(TrainingSet {
        ids: covered.ids().map(str::to_owned).collect(),
        x: covered.to_matrix(),
        targets,
        normalization,
    })
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub regressor: CiRegressor,
    pub n_train: usize,
    pub n_test: usize,
    pub train_r2: f64,
    pub test_r2: f64,
}

fn select_rows(set: &TrainingSet, ids: &[String]) -> (Matrix, Vec<f64>) {
    let pos: BTreeMap<&str, usize> = set.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let rows: Vec<usize> = ids.iter().map(|id| pos[id.as_str()]).collect();
    let mut x = Matrix::zeros(rows.len(), set.x.cols());
    for (dst, &src) in rows.iter().enumerate() {
        x.row_mut(dst).copy_from_slice(set.x.row(src));
    }
    (x, rows.iter().map(|&r| set.targets[r]).collect())
}

/// Fits a regressor on a seeded split of the model's images and reports
/// train and held-out R^2 (raw, unclamped predictions).
pub fn train(
    model: &PartitionModel,
    embeddings: &EmbeddingSet,
    penalty: RidgePenalty,
    train_fraction: f64,
    seed: u64,
) -> Result<TrainReport> {
    let set = training_set(model, embeddings)?;
    let (train_ids, test_ids) = split_train_test(&set.ids, train_fraction, seed)?;
    let (x_train, t_train) = select_rows(&set, &train_ids);
    let (x_test, t_test) = select_rows(&set, &test_ids);
    let regressor = fit(&x_train, &t_train, penalty)?.into_regressor(set.normalization.min, set.normalization.max)?;
    let train_r2 = r_squared(&predict(&regressor, &x_train, false)?, &t_train)?;
    let test_r2 = r_squared(&predict(&regressor, &x_test, false)?, &t_test)?;
    Ok(TrainReport {
        regressor,
        n_train: train_ids.len(),
        n_test: test_ids.len(),
        train_r2,
        test_r2,
    })
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal, StandardNormal};

    fn random_matrix(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
        Matrix::from_vec(n, d, data).unwrap()
    }

    #[test]
    fn normalization_examples() {
        let m = |v: &[f64]| v.iter().copied().enumerate().collect::<BTreeMap<_, _>>();
        let n = normalize_targets(&m(&[0.2, 0.6])).unwrap();
        assert_eq!(n.targets.values().copied().collect::<Vec<_>>(), vec![0.0, 1.0]);
        let n = normalize_targets(&m(&[0.1, 0.3, 0.5])).unwrap();
        let t: Vec<f64> = n.targets.values().copied().collect();
        assert_eq!(t[0], 0.0);
        assert!((t[1] - 0.5).abs() < 1e-15);
        assert_eq!(t[2], 1.0);
        assert!(matches!(
            normalize_targets(&m(&[0.4, 0.4])),
            Err(Error::DegenerateTargets)
        ));
    }

    #[test]
    fn exact_linear_targets_are_interpolated() {
        let x = random_matrix(30, 4, 1);
        let t: Vec<f64> = x.iter_rows().map(|r| 2.0 * r[0] + 1.0).collect();
        let f = fit(&x, &t, RidgePenalty::Fixed(0.0)).unwrap();
        assert!((f.weights[0] - 2.0).abs() < 1e-6);
        assert!(f.weights[1..].iter().all(|w| w.abs() < 1e-6));
        assert!((f.bias - 1.0).abs() < 1e-6);
        let reg = f.into_regressor(0.0, 1.0).unwrap();
        let pred = predict(&reg, &x, false).unwrap();
        assert!(pred.iter().zip(&t).all(|(p, t)| (p - t).abs() < 1e-6));
        assert!((r_squared(&pred, &t).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_targets_give_zero_weights() {
        let x = random_matrix(20, 3, 2);
        let f = fit(&x, &[0.7; 20], RidgePenalty::Fixed(0.5)).unwrap();
        assert!(f.weights.iter().all(|w| w.abs() < 1e-12));
        assert!((f.bias - 0.7).abs() < 1e-12);
    }

    /// Closed-form oracle: Gaussian elimination on the augmented normal
    /// equations with an unpenalized bias column.
    fn normal_equation_oracle(x: &Matrix, t: &[f64], lambda: f64) -> (Vec<f64>, f64) {
        let d = x.cols();
        let k = d + 1;
        let mut a = vec![vec![0.0; k + 1]; k];
        for (row, &ti) in x.iter_rows().zip(t) {
            let mut aug = row.to_vec();
            aug.push(1.0);
            for i in 0..k {
                for j in 0..k {
                    a[i][j] += aug[i] * aug[j];
                }
                a[i][k] += aug[i] * ti;
            }
        }
        for i in 0..d {
            a[i][i] += lambda;
        }
        for col in 0..k {
            let piv = (col..k)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            a.swap(col, piv);
            for r in 0..k {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for c in col..=k {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
        let sol: Vec<f64> = (0..k).map(|i| a[i][k] / a[i][i]).collect();
        (sol[..d].to_vec(), sol[d])
    }

    #[test]
    fn noisy_recovery_matches_oracle() {
        let x = random_matrix(200, 3, 42);
        let w_true = [0.8, -1.3, 0.25];
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let t: Vec<f64> = x
            .iter_rows()
            .map(|r| dot(r, &w_true) + 0.3 + noise.sample(&mut rng))
            .collect();
        let f = fit(&x, &t, RidgePenalty::Fixed(1e-6)).unwrap();
        let (w_oracle, b_oracle) = normal_equation_oracle(&x, &t, 1e-6);
        for j in 0..3 {
            assert!((f.weights[j] - w_true[j]).abs() < 0.05);
            assert!((f.weights[j] - w_oracle[j]).abs() < 1e-7);
        }
        assert!((f.bias - b_oracle).abs() < 1e-7);
    }

    #[test]
    fn singular_without_penalty() {
        // second column duplicates the first
        let mut x = random_matrix(10, 2, 3);
        for i in 0..10 {
            x[(i, 1)] = x[(i, 0)];
        }
        let t: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!(matches!(fit(&x, &t, RidgePenalty::Fixed(0.0)), Err(Error::Singular)));
        assert!(fit(&x, &t, RidgePenalty::Fixed(1e-3)).is_ok());
        // fewer points than dimensions
        let wide = random_matrix(3, 5, 4);
        assert!(matches!(
            fit(&wide, &[0.0, 1.0, 2.0], RidgePenalty::Fixed(0.0)),
            Err(Error::Singular)
        ));
        assert!(fit(&wide, &[0.0, 1.0, 2.0], RidgePenalty::Auto).is_ok());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = random_matrix(15, 3, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t: Vec<f64> = (0..15).map(|_| rng.random::<f64>()).collect();
        let lambda = 0.3;
        let w = [0.4, -0.2, 1.1];
        let b = 0.05;
        let (gw, gb) = objective_gradient(&x, &t, lambda, &w, b);
        let h = 1e-5;
        for j in 0..3 {
            let (mut up, mut dn) = (w, w);
            up[j] += h;
            dn[j] -= h;
            let fd = (objective(&x, &t, lambda, &up, b) - objective(&x, &t, lambda, &dn, b)) / (2.0 * h);
            assert!((fd - gw[j]).abs() <= 1e-4 * gw[j].abs().max(1.0), "{fd} vs {}", gw[j]);
        }
        let fd = (objective(&x, &t, lambda, &w, b + h) - objective(&x, &t, lambda, &w, b - h)) / (2.0 * h);
        assert!((fd - gb).abs() <= 1e-4 * gb.abs().max(1.0));
    }

    #[test]
    fn predict_examples() {
        let reg = CiRegressor {
            weights: vec![0.0, 0.0],
            bias: 0.4,
            ridge_lambda: 0.0,
            target_min: 0.0,
            target_max: 1.0,
        };
        let x = random_matrix(4, 2, 5);
        assert!(predict(&reg, &x, false).unwrap().iter().all(|&s| s == 0.4));
        let hot = CiRegressor {
            bias: 1.3,
            ..reg.clone()
        };
        assert_eq!(predict(&hot, &x, true).unwrap(), vec![1.0; 4]);
        assert_eq!(predict(&hot, &x, false).unwrap(), vec![1.3; 4]);
        assert!(matches!(
            predict(&reg, &random_matrix(1, 3, 0), false),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn r_squared_examples() {
        let t = [0.1, 0.5, 0.9];
        assert_eq!(r_squared(&t, &t).unwrap(), 1.0);
        assert_eq!(r_squared(&[0.5; 3], &t).unwrap(), 0.0);
        assert_eq!(r_squared(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), -3.0);
        assert!(matches!(
            r_squared(&[0.0, 1.0], &[2.0, 2.0]),
            Err(Error::DegenerateTargets)
        ));
    }

    #[test]
    fn split_examples() {
        let ids: Vec<String> = (0..10).map(|i| format!("img{i}")).collect();
        let (train, test) = split_train_test(&ids, 0.8, 1).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        assert!(train.iter().all(|t| !test.contains(t)));
        assert_eq!(split_train_test(&ids, 0.8, 1).unwrap(), (train, test));
        let (train, test) = split_train_test(&ids, 0.99, 1).unwrap();
        assert_eq!((train.len(), test.len()), (9, 1));
        assert!(matches!(
            split_train_test(&ids[..1], 0.5, 0),
            Err(Error::EmptySplit { .. })
        ));
        assert!(matches!(split_train_test(&ids, 1.0, 0), Err(Error::Fraction(_))));
    }

    #[test]
    fn ridge_shrinks_weights() {
        let x = random_matrix(40, 5, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
        let norms: Vec<f64> = [0.0, 0.1, 1.0, 10.0, 100.0]
            .iter()
            .map(|&l| norm(&fit(&x, &t, RidgePenalty::Fixed(l)).unwrap().weights))
            .collect();
        assert!(norms.windows(2).all(|w| w[0] >= w[1]), "{norms:?}");
    }
}
