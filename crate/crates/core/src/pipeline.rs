//! End-to-end partition fitting: reduce, cluster, merge, score.

use std::collections::BTreeMap;

use log::info;
use serde::{Deserialize, Serialize};

use crate::ci::{merge_with_index, LikerIndex};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::partition::kmeans_fit;
use crate::reduce::{fit_pca, Reducer, ReducerKind};
use crate::types::{EmbeddingSet, LikesIndex, Partition, PartitionModel, PipelineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReducerChoice {
    /// Use the vectors as given; `reduced_dim` is set to the input dimension.
    Identity,
    #[default]
    Pca,
}

impl From<ReducerChoice> for ReducerKind {
    fn from(c: ReducerChoice) -> Self {
        match c {
            ReducerChoice::Identity => ReducerKind::Identity,
            ReducerChoice::Pca => ReducerKind::Pca,
        }
    }
}

/// Leaf partitions (ids `0..N`) built from k-means labels, with centroids
/// recomputed as the exact member means.
pub fn leaf_partitions(ids: &[&str], reduced: &Matrix, labels: &[usize], n_leaves: usize) -> Vec<Partition> {
    let dim = reduced.cols();
    let mut members: Vec<Vec<String>> = vec![Vec::new(); n_leaves];
    let mut sums = vec![vec![0.0; dim]; n_leaves];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(ids[i].to_owned());
        for (s, x) in sums[l].iter_mut().zip(reduced.row(i)) {
            *s += x;
        }
    }
    members
        .into_iter()
        .zip(sums)
        .enumerate()
        .map(|(id, (mut members, sum))| {
            let n = members.len().max(1) as f64;
            members.sort();
            Partition {
                id,
                members,
                centroid: sum.into_iter().map(|s| s / n).collect(),
            }
        })
        .collect()
}

/// Fits a [`PartitionModel`] on `embeddings` and `likes`.
pub fn fit(
    embeddings: &EmbeddingSet,
    likes: &LikesIndex,
    config: &PipelineConfig,
    reducer: ReducerChoice,
) -> Result<PartitionModel> {
    let mut config = config.clone();
    let d = embeddings.dim();
    if reducer == ReducerChoice::Identity {
        config.reduced_dim = d;
    }
    config.validate()?;
    if config.reduced_dim > d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: config.reduced_dim,
        });
    }
    if likes.total_users() == 0 {
        return Err(Error::NoRows);
    }

    let x = embeddings.to_matrix();
    let reducer = match reducer {
        ReducerChoice::Identity => Reducer::identity(d),
        ReducerChoice::Pca => fit_pca(&x, config.reduced_dim)?,
    };
    info!(
        "reduced {} x {d} to {} dims ({:?})",
        x.rows(),
        reducer.output_dim(),
        reducer.kind
    );
    let z = reducer.transform(&x)?;

    let km = kmeans_fit(
        &z,
        config.n_partitions,
        config.seed,
        config.kmeans_max_iters,
        config.kmeans_tol,
    )?;
    let empty = km.cluster_sizes().iter().filter(|&&s| s == 0).count();
    if empty > 0 {
        return Err(Error::EmptyLeaves(empty));
    }
    info!(
        "k-means: {} leaves, inertia {:.6}, {} assignment steps",
        config.n_partitions,
        km.inertia,
        km.inertia_history.len()
    );

    let ids: Vec<&str> = embeddings.ids().collect();
    let leaves = leaf_partitions(&ids, &z, &km.labels, config.n_partitions);
    let index = LikerIndex::new(likes);
    let merged = merge_with_index(&leaves, &index, &config)?;
    info!(
        "{} merges, {} final partitions",
        merged.merge_log.len(),
        merged.ci_scores.len()
    );

    let assignment: BTreeMap<String, usize> = ids
        .iter()
        .zip(&km.labels)
        .map(|(id, &l)| ((*id).to_owned(), l))
        .collect();
    let model = PartitionModel {
        config,
        reducer,
        centroids: km.centroids,
        assignment,
        merge_log: merged.merge_log,
        leaf_to_final: merged.leaf_to_final,
        ci_scores: merged.ci_scores,
        total_users: likes.total_users(),
    };
    model.validate()?;
    Ok(model)
}

/// Leaf then final partition of new embeddings.
pub fn route(model: &PartitionModel, embeddings: &EmbeddingSet) -> Result<Vec<usize>> {
    if embeddings.dim() != model.reducer.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.reducer.input_dim(),
            actual: embeddings.dim(),
        });
    }
    let z = model.reducer.transform(&embeddings.to_matrix())?;
    let leaves = crate::partition::assign(&model.centroids, &z)?;
    Ok(leaves.into_iter().map(|l| model.leaf_to_final[l]).collect())
}

/// Members of every final partition, sorted by id.
pub fn final_members(model: &PartitionModel) -> BTreeMap<usize, Vec<String>> {
    let mut out: BTreeMap<usize, Vec<String>> = model.ci_scores.keys().map(|&k| (k, Vec::new())).collect();
    for (id, &leaf) in &model.assignment {
        out.entry(model.leaf_to_final[leaf]).or_default().push(id.clone());
    }
    out
}

/// CI of every final partition recomputed with a different `min_likes`.
pub fn ci_with_min_likes(model: &PartitionModel, likes: &LikesIndex, min_likes: usize) -> BTreeMap<usize, f64> {
    let index = LikerIndex::new(likes);
    final_members(model)
        .into_iter()
        .map(|(p, members)| {
            let users = index.unique_users(members.iter().map(String::as_str), min_likes);
            (p, index.ci(&users))
        })
        .collect()
}
