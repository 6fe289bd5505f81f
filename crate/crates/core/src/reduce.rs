//! Linear dimensionality reduction applied before partitioning.
//!
//! Two reducers exist: `identity`, for vectors that were already reduced
//! upstream, and `pca`, which projects onto the top principal directions.
//! PCA is solved with the Jacobi eigensolver on the covariance matrix, or on
//! the Gram matrix when there are fewer points than dimensions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, symmetric_eigen, Matrix};

const JACOBI_TOL: f64 = 1e-10;
/// Eigenvalues below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReducerKind {
    Identity,
    Pca,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reducer {
    pub kind: ReducerKind,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Column mean of the fitted data (empty for identity).
    pub mean: Vec<f64>,
    /// `output_dim x input_dim`, orthonormal rows (empty for identity).
    pub components: Matrix,
    /// Variance captured by each component (empty for identity).
    pub explained_variance: Vec<f64>,
    /// Total variance of the fitted data (0 for identity).
    pub total_variance: f64,
}

impl Reducer {
    pub fn identity(dim: usize) -> Self {
        Reducer {
            kind: ReducerKind::Identity,
            input_dim: dim,
            output_dim: dim,
            mean: Vec::new(),
            components: Matrix::zeros(0, 0),
            explained_variance: Vec::new(),
            total_variance: 0.0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Fraction of total variance captured by the kept components.
    pub fn explained_variance_ratio(&self) -> f64 {
        if self.total_variance > 0.0 {
            self.explained_variance.iter().sum::<f64>() / self.total_variance
        } else {
            1.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ReducerKind::Identity => {
                if self.input_dim != self.output_dim {
                    return Err(Error::Invariant(format!(
                        "identity reducer maps {} to {}",
                        self.input_dim, self.output_dim
                    )));
                }
            }
            ReducerKind::Pca => {
                let c = &self.components;
                if c.rows() != self.output_dim
                    || c.cols() != self.input_dim
                    || self.mean.len() != self.input_dim
                    || self.output_dim == 0
                    || self.output_dim > self.input_dim
                {
                    return Err(Error::Invariant("pca reducer has inconsistent shapes".into()));
                }
                if !c.is_finite() || !self.mean.iter().all(|v| v.is_finite()) {
                    return Err(Error::Invariant("pca reducer has non-finite parameters".into()));
                }
                let err = orthonormality_error(c);
                if err >= 1e-5 {
                    return Err(Error::Invariant(format!(
                        "pca components are not orthonormal (max error {err:e})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Projects every row of `vectors` into the reduced space.
    pub fn transform(&self, vectors: &Matrix) -> Result<Matrix> {
        if vectors.cols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: vectors.cols(),
            });
        }
        match self.kind {
            ReducerKind::Identity => Ok(vectors.clone()),
            ReducerKind::Pca => {
                let r = self.output_dim;
                let data: Vec<f64> = (0..vectors.rows())
                    .into_par_iter()
                    .flat_map_iter(|i| self.project(vectors.row(i)))
                    .collect();
                Matrix::from_vec(vectors.rows(), r, data)
            }
        }
    }

    fn project(&self, x: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        self.components.iter_rows().map(|c| dot(c, &centered)).collect()
    }
}

/// `max |C C^T - I|`
pub fn orthonormality_error(c: &Matrix) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..c.rows() {
        for j in 0..c.rows() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot(c.row(i), c.row(j)) - target).abs());
        }
    }
    worst
}

/// Fits a PCA reducer keeping `r` components.
pub fn fit_pca(vectors: &Matrix, r: usize) -> Result<Reducer> {
    let (n, d) = (vectors.rows(), vectors.cols());
    if r == 0 {
        return Err(Error::ReducedDim(r));
    }
    if r > d {
        return Err(Error::DimensionMismatch { expected: d, actual: r });
    }
    if n <= r {
        return Err(Error::TooFewPoints { needed: r + 1, got: n });
    }
    if !vectors.is_finite() {
        return Err(Error::NonFinite("pca input".into()));
    }

    let mut mean = vec![0.0; d];
    for row in vectors.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    // columns of the centered data, one row per input dimension
    let mut centered_t = Matrix::zeros(d, n);
    for (i, row) in vectors.iter_rows().enumerate() {
        for (j, (v, m)) in row.iter().zip(&mean).enumerate() {
            centered_t[(j, i)] = v - m;
        }
    }
    let denom = (n - 1) as f64;
    let total_variance: f64 = centered_t.iter_rows().map(|col| dot(col, col) / denom).sum();

    let components = if n >= d {
        let cov = gram(&centered_t, denom);
        let (values, vectors) = symmetric_eigen(&cov, JACOBI_TOL)?;
        check_rank(&values, r)?;
        let mut comps = Matrix::zeros(r, d);
        for k in 0..r {
            comps.row_mut(k).copy_from_slice(vectors.row(k));
        }
        (comps, values[..r].to_vec())
    } else {
        // n < d: eigenvectors of X X^T map to principal directions through X^T
        let centered = centered_t.transpose();
        let g = gram(&centered, denom);
        let (values, vectors) = symmetric_eigen(&g, JACOBI_TOL)?;
        check_rank(&values, r)?;
        let mut comps = Matrix::zeros(r, d);
        for k in 0..r {
            let u = vectors.row(k);
            let dir = comps.row_mut(k);
            for (i, &ui) in u.iter().enumerate() {
                for (dj, xij) in dir.iter_mut().zip(centered.row(i)) {
                    *dj += ui * xij;
                }
            }
            let len = dot(dir, dir).sqrt();
            dir.iter_mut().for_each(|v| *v /= len);
        }
        (comps, values[..r].to_vec())
    };
    let (mut components, explained_variance) = components;
    for k in 0..r {
        fix_sign(components.row_mut(k));
    }

    Ok(Reducer {
        kind: ReducerKind::Pca,
        input_dim: d,
        output_dim: r,
        mean,
        components,
        explained_variance,
        total_variance,
    })
}

/// `A A^T / denom` for the rows of `a`, rows computed in parallel.
fn gram(a: &Matrix, denom: f64) -> Matrix {
    let k = a.rows();
    let upper: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|i| (i..k).map(|j| dot(a.row(i), a.row(j)) / denom).collect())
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

fn check_rank(values: &[f64], r: usize) -> Result<()> {
    let largest = values.first().copied().unwrap_or(0.0);
    let achievable = if largest > 0.0 {
        values.iter().filter(|&&v| v > RANK_TOL * largest).count()
    } else {
        0
    };
    if achievable < r {
        return Err(Error::RankDeficient {
            requested: r,
            achievable,
        });
    }
    Ok(())
}

/// Flips `v` so that its largest-magnitude entry is positive.
fn fix_sign(v: &mut [f64]) {
    let mut pivot = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[pivot].abs() {
            pivot = i;
        }
    }
    if v[pivot] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}
