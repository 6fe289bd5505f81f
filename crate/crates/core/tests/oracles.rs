use std::collections::BTreeMap;

use common_interest::analysis::assign_external;
use common_interest::linalg::Matrix;
use common_interest::reduce::{fit_pca, orthonormality_error, Reducer};
use common_interest::types::{EmbeddingRecord, EmbeddingSet, Group, GroupAssignment, PartitionModel, PipelineConfig};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

fn gaussian(n: usize, d: usize, scales: &[f64], seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * d)
        .map(|k| scales[k % d] * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect();
    Matrix::from_vec(n, d, data).unwrap()
}

/// Covariance eigenvalues from nalgebra, descending.
fn nalgebra_spectrum(x: &Matrix) -> (Vec<f64>, DMatrix<f64>) {
    let (n, d) = (x.rows(), x.cols());
    let m = DMatrix::from_row_slice(n, d, x.as_slice());
    let mean = m.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| m[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(d, d, |r, c| eig.eigenvectors[(r, idx[c])]);
    (values, vectors)
}

#[test]
fn pca_spectrum_matches_nalgebra() {
    let x = gaussian(300, 6, &[5.0, 3.0, 2.0, 1.0, 0.5, 0.25], 1);
    let pca = fit_pca(&x, 4).unwrap();
    let (values, vectors) = nalgebra_spectrum(&x);
    for k in 0..4 {
        assert!((pca.explained_variance[k] - values[k]).abs() < 1e-8 * values[0]);
        // same direction up to sign
        let cos: f64 = (0..6).map(|j| pca.components[(k, j)] * vectors[(j, k)]).sum();
        assert!((cos.abs() - 1.0).abs() < 1e-8, "component {k}: |cos| = {}", cos.abs());
    }
    let total: f64 = values.iter().sum();
    assert!((pca.total_variance - total).abs() < 1e-8 * total);
    assert!(orthonormality_error(&pca.components) < 1e-10);
}

#[test]
fn gram_route_matches_nalgebra() {
    // fewer points than dimensions
    let x = gaussian(6, 10, &[1.0; 10], 2);
    let pca = fit_pca(&x, 3).unwrap();
    let (values, _) = nalgebra_spectrum(&x);
    for k in 0..3 {
        assert!((pca.explained_variance[k] - values[k]).abs() < 1e-8 * values[0]);
    }
}

#[test]
fn isotropic_explained_variance_near_two_fifths() {
    let x = gaussian(100, 5, &[1.0; 5], 3);
    let ratio = fit_pca(&x, 2).unwrap().explained_variance_ratio();
    let (values, _) = nalgebra_spectrum(&x);
    let oracle = (values[0] + values[1]) / values.iter().sum::<f64>();
    assert!((ratio - oracle).abs() < 1e-10);
    assert!((ratio - 0.4).abs() < 0.15, "ratio {ratio}");
}

/// Three leaves at fixed spots, each its own final partition and group.
fn three_group_model() -> (PartitionModel, GroupAssignment) {
    let centroids = Matrix::from_rows(&[[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]]).unwrap();
    let assignment: BTreeMap<String, usize> = (0..3).map(|l| (format!("img{l}"), l)).collect();
    let model = PartitionModel {
        config: PipelineConfig {
            n_partitions: 3,
            reduced_dim: 2,
            ..PipelineConfig::default()
        },
        reducer: Reducer::identity(2),
        centroids,
        assignment,
        merge_log: Vec::new(),
        leaf_to_final: vec![0, 1, 2],
        ci_scores: [(0, 0.9), (1, 0.5), (2, 0.1)].into(),
        total_users: 10,
    };
    model.validate().unwrap();
    let groups = GroupAssignment {
        group_of: [(0, Group::Comm), (1, Group::Inter), (2, Group::Subj)].into(),
        boundaries: [1, 2],
    };
    (model, groups)
}

#[test]
fn external_shares_from_centroid_draws() {
    let (model, groups) = three_group_model();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let jitter = Normal::new(0.0, 0.3).unwrap();
    let draw = |leaf: usize, k: usize, rng: &mut ChaCha8Rng| {
        let v = model
            .centroids
            .row(leaf)
            .iter()
            .map(|c| (c + jitter.sample(rng)) as f32)
            .collect();
        EmbeddingRecord::new(format!("x{leaf}_{k}"), v).unwrap()
    };

    let comm_only: Vec<_> = (0..25).map(|k| draw(0, k, &mut rng)).collect();
    let out = assign_external(&model, &groups, &EmbeddingSet::new(2, comm_only).unwrap()).unwrap();
    assert_eq!(out.shares, [1.0, 0.0, 0.0]);

    let one_each: Vec<_> = (0..3).map(|leaf| draw(leaf, 0, &mut rng)).collect();
    let out = assign_external(&model, &groups, &EmbeddingSet::new(2, one_each).unwrap()).unwrap();
    assert_eq!(out.counts, [1, 1, 1]);
    assert_eq!(out.shares, [1.0 / 3.0; 3]);
    let labels: Vec<Group> = out.labels.iter().map(|(_, g)| *g).collect();
    assert_eq!(labels, Group::ALL);

    let wrong_dim = EmbeddingSet::new(3, vec![EmbeddingRecord::new("z", vec![0.0; 3]).unwrap()]).unwrap();
    assert!(assign_external(&model, &groups, &wrong_dim).is_err());
}
