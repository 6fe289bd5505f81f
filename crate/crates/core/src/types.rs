//! Domain types shared by every stage of the pipeline.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::reduce::Reducer;

/// One image and its embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub image_id: String,
    pub vector: Vec<f32>,
}

impl EmbeddingRecord {
    pub fn new(image_id: impl Into<String>, vector: Vec<f32>) -> Result<Self> {
        let image_id = image_id.into();
        if image_id.is_empty() {
            return Err(Error::EmptyId);
        }
        if !vector.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding of `{image_id}`")));
        }
        Ok(EmbeddingRecord { image_id, vector })
    }
}

/// A validated collection of embeddings sharing one dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingSet {
    dim: usize,
    records: Vec<EmbeddingRecord>,
}

impl EmbeddingSet {
    pub fn new(dim: usize, records: Vec<EmbeddingRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for rec in &records {
            if rec.image_id.is_empty() {
                return Err(Error::EmptyId);
            }
            if rec.vector.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: rec.vector.len(),
                });
            }
            if !rec.vector.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("embedding of `{}`", rec.image_id)));
            }
            if !seen.insert(rec.image_id.as_str()) {
                return Err(Error::DuplicateId(rec.image_id.clone()));
            }
        }
        Ok(EmbeddingSet { dim, records })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<EmbeddingRecord> {
        self.records
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.image_id.as_str())
    }

    /// Embeddings widened to `f64`, one row per record in order.
    pub fn to_matrix(&self) -> Matrix {
        let data = self
            .records
            .iter()
            .flat_map(|r| r.vector.iter().map(|&v| f64::from(v)))
            .collect();
        Matrix::from_vec(self.records.len(), self.dim, data).expect("validated dimensions")
    }

    /// Keeps only the records whose id passes `keep`, preserving order.
    pub fn filter(&self, mut keep: impl FnMut(&str) -> bool) -> EmbeddingSet {
        EmbeddingSet {
            dim: self.dim,
            records: self.records.iter().filter(|r| keep(&r.image_id)).cloned().collect(),
        }
    }
}

/// Which images each user liked.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LikesIndex {
    likes: BTreeMap<String, BTreeSet<String>>,
}

impl LikesIndex {
    /// Builds the index from `(user, image)` pairs. Repeated pairs collapse.
    pub fn from_pairs<U, I>(pairs: impl IntoIterator<Item = (U, I)>) -> Result<Self>
    where
        U: Into<String>,
        I: Into<String>,
    {
        let mut likes: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (user, image) in pairs {
            let (user, image) = (user.into(), image.into());
            if user.is_empty() || image.is_empty() {
                return Err(Error::EmptyId);
            }
            likes.entry(user).or_default().insert(image);
        }
        Ok(LikesIndex { likes })
    }

    /// Number of distinct users, `M`.
    pub fn total_users(&self) -> usize {
        self.likes.len()
    }

    pub fn liked_by(&self, user: &str) -> Option<&BTreeSet<String>> {
        self.likes.get(user)
    }

    /// Users in ascending id order with their liked images.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeSet<String>)> {
        self.likes.iter().map(|(u, s)| (u.as_str(), s))
    }

    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.likes.keys().map(String::as_str)
    }

    /// Total number of distinct `(user, image)` pairs.
    pub fn pair_count(&self) -> usize {
        self.likes.values().map(BTreeSet::len).sum()
    }
}

pub const DEFAULT_N_PARTITIONS: usize = 200;
pub const DEFAULT_THETA_IMAGE: f64 = 3.0;
pub const DEFAULT_THETA_CI: f64 = 0.25;
pub const DEFAULT_REDUCED_DIM: usize = 7;
pub const DEFAULT_MIN_LIKES: usize = 1;
pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_KMEANS_MAX_ITERS: usize = 100;
pub const DEFAULT_KMEANS_TOL: f64 = 1e-6;

/// Pipeline parameters. Missing fields in a JSON config take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub n_partitions: usize,
    pub theta_image: f64,
    pub theta_ci: f64,
    pub reduced_dim: usize,
    pub min_likes: usize,
    pub seed: u64,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            n_partitions: DEFAULT_N_PARTITIONS,
            theta_image: DEFAULT_THETA_IMAGE,
            theta_ci: DEFAULT_THETA_CI,
            reduced_dim: DEFAULT_REDUCED_DIM,
            min_likes: DEFAULT_MIN_LIKES,
            seed: DEFAULT_SEED,
            kmeans_max_iters: DEFAULT_KMEANS_MAX_ITERS,
            kmeans_tol: DEFAULT_KMEANS_TOL,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_partitions < 2 {
            return Err(Error::NPartitions(self.n_partitions));
        }
        if !(self.theta_image.is_finite() && self.theta_image > 0.0) {
            return Err(Error::ThetaImage(self.theta_image));
        }
        if !(self.theta_ci > 0.0 && self.theta_ci < 1.0) {
            return Err(Error::ThetaCi(self.theta_ci));
        }
        if self.reduced_dim < 1 {
            return Err(Error::ReducedDim(self.reduced_dim));
        }
        if self.min_likes < 1 {
            return Err(Error::MinLikes(self.min_likes));
        }
        if self.kmeans_max_iters < 1 {
            return Err(Error::MaxIters(self.kmeans_max_iters));
        }
        if !(self.kmeans_tol.is_finite() && self.kmeans_tol >= 0.0) {
            return Err(Error::KMeansTol(self.kmeans_tol));
        }
        Ok(())
    }
}

/// A cluster of images in the reduced space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub id: usize,
    /// Member image ids, sorted.
    pub members: Vec<String>,
    /// Mean of the members' reduced vectors.
    pub centroid: Vec<f64>,
}

impl Partition {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// One accepted merge of two partitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeEvent {
    pub left_id: usize,
    pub right_id: usize,
    pub new_id: usize,
    pub ward_distance: f64,
    pub user_iou: f64,
}

/// Everything produced by `fit`: reducer, leaf centroids, merges and CI scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionModel {
    pub config: PipelineConfig,
    pub reducer: Reducer,
    /// Leaf (pre-merge) centroids in the reduced space, one row per leaf id.
    pub centroids: Matrix,
    /// Leaf partition of every fitted image.
    pub assignment: BTreeMap<String, usize>,
    pub merge_log: Vec<MergeEvent>,
    /// Indexed by leaf id.
    pub leaf_to_final: Vec<usize>,
    pub ci_scores: BTreeMap<usize, f64>,
    pub total_users: usize,
}

impl PartitionModel {
    pub fn n_leaves(&self) -> usize {
        self.centroids.rows()
    }

    pub fn final_partition_of(&self, image_id: &str) -> Option<usize> {
        self.assignment.get(image_id).map(|&leaf| self.leaf_to_final[leaf])
    }

    /// Image counts per final partition.
    pub fn final_sizes(&self) -> BTreeMap<usize, usize> {
        let mut sizes: BTreeMap<usize, usize> = self.ci_scores.keys().map(|&k| (k, 0)).collect();
        for &leaf in self.assignment.values() {
            *sizes.entry(self.leaf_to_final[leaf]).or_default() += 1;
        }
        sizes
    }

    /// Image id to final partition id.
    pub fn final_assignment(&self) -> BTreeMap<String, usize> {
        self.assignment
            .iter()
            .map(|(id, &leaf)| (id.clone(), self.leaf_to_final[leaf]))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.reducer.validate()?;
        let n = self.n_leaves();
        if self.centroids.cols() != self.reducer.output_dim() {
            return Err(Error::Invariant(format!(
                "centroid width {} != reduced dimension {}",
                self.centroids.cols(),
                self.reducer.output_dim()
            )));
        }
        if !self.centroids.is_finite() {
            return Err(Error::Invariant("non-finite centroid".into()));
        }
        if self.leaf_to_final.len() != n {
            return Err(Error::Invariant(format!(
                "leaf_to_final covers {} of {n} leaves",
                self.leaf_to_final.len()
            )));
        }
        if let Some((id, &leaf)) = self.assignment.iter().find(|(_, &l)| l >= n) {
            return Err(Error::Invariant(format!(
                "image `{id}` assigned to unknown leaf {leaf}"
            )));
        }
        for ev in &self.merge_log {
            if !(ev.ward_distance >= 0.0 && ev.ward_distance < self.config.theta_image) {
                return Err(Error::Invariant(format!(
                    "merge {} has ward distance {} outside [0, theta_image)",
                    ev.new_id, ev.ward_distance
                )));
            }
            if !(ev.user_iou > self.config.theta_ci && ev.user_iou <= 1.0) {
                return Err(Error::Invariant(format!(
                    "merge {} has user IoU {} outside (theta_ci, 1]",
                    ev.new_id, ev.user_iou
                )));
            }
        }
        let replayed = crate::ci::replay_merge_log(n, &self.merge_log)?;
        if replayed != self.leaf_to_final {
            return Err(Error::Invariant("merge_log replay disagrees with leaf_to_final".into()));
        }
        let finals: BTreeSet<usize> = self.leaf_to_final.iter().copied().collect();
        let scored: BTreeSet<usize> = self.ci_scores.keys().copied().collect();
        if finals != scored {
            return Err(Error::Invariant(
                "ci_scores keys differ from the final partitions".into(),
            ));
        }
        if let Some((id, ci)) = self.ci_scores.iter().find(|(_, ci)| !(0.0..=1.0).contains(*ci)) {
            return Err(Error::Invariant(format!(
                "CI of partition {id} is {ci}, outside [0, 1]"
            )));
        }
        Ok(())
    }
}

/// Linear common-interest regressor over raw embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiRegressor {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub ridge_lambda: f64,
    pub target_min: f64,
    pub target_max: f64,
}

impl CiRegressor {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::Invariant("regressor has no weights".into()));
        }
        if !(self.weights.iter().all(|w| w.is_finite()) && self.bias.is_finite()) {
            return Err(Error::Invariant("non-finite regressor parameters".into()));
        }
        if !(self.ridge_lambda.is_finite() && self.ridge_lambda >= 0.0) {
            return Err(Error::Invariant(format!(
                "ridge_lambda {} must be finite and >= 0",
                self.ridge_lambda
            )));
        }
        if !(self.target_min < self.target_max) {
            return Err(Error::Invariant(format!(
                "target_min {} must be below target_max {}",
                self.target_min, self.target_max
            )));
        }
        Ok(())
    }
}

/// Tertile group of a partition, from most to least commonly interesting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    Comm,
    Inter,
    Subj,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Comm, Group::Inter, Group::Subj];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::Comm => "Comm",
            Group::Inter => "Inter",
            Group::Subj => "Subj",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub group_of: BTreeMap<usize, Group>,
    /// Cumulative image counts at the end of Comm and at the end of Inter.
    pub boundaries: [usize; 2],
}

impl GroupAssignment {
    pub fn group(&self, partition: usize) -> Option<Group> {
        self.group_of.get(&partition).copied()
    }

    pub fn partitions_in(&self, group: Group) -> impl Iterator<Item = usize> + '_ {
        self.group_of.iter().filter(move |(_, &g)| g == group).map(|(&p, _)| p)
    }
}

/// Share of each group's labeled images that carry a categorical label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeRow {
    pub attribute: String,
    pub percent_comm: f64,
    pub percent_inter: f64,
    pub percent_subj: f64,
    /// `percent_comm - percent_subj`
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
}

/// Per-group quartiles of a numeric attribute. `None` when a group has no values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericRow {
    pub attribute: String,
    pub comm: Option<Quartiles>,
    pub inter: Option<Quartiles>,
    pub subj: Option<Quartiles>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AttributeTable {
    /// Sorted by `delta` descending, then attribute name.
    pub rows: Vec<AttributeRow>,
    /// Sorted by attribute name.
    pub numeric_rows: Vec<NumericRow>,
}

#[cfg(test)]
#[allow(clippy::type_complexity)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_are_the_reference_values() {
        let c = PipelineConfig::default();
        assert_eq!(c.n_partitions, 200);
        assert_eq!(c.theta_image, 3.0);
        assert_eq!(c.theta_ci, 0.25);
        assert_eq!(c.reduced_dim, 7);
        assert_eq!(c.min_likes, 1);
        c.validate().unwrap();
    }

    #[test]
    fn config_rejects_each_field_distinctly() {
        let base = PipelineConfig::default();
        let cases: Vec<(PipelineConfig, fn(&Error) -> bool)> = vec![
            (
                PipelineConfig {
                    n_partitions: 1,
                    ..base.clone()
                },
                |e| matches!(e, Error::NPartitions(1)),
            ),
            (
                PipelineConfig {
                    theta_image: 0.0,
                    ..base.clone()
                },
                |e| matches!(e, Error::ThetaImage(_)),
            ),
            (
                PipelineConfig {
                    theta_image: f64::NAN,
                    ..base.clone()
                },
                |e| matches!(e, Error::ThetaImage(_)),
            ),
            (
                PipelineConfig {
                    theta_ci: 1.0,
                    ..base.clone()
                },
                |e| matches!(e, Error::ThetaCi(_)),
            ),
            (
                PipelineConfig {
                    theta_ci: 0.0,
                    ..base.clone()
                },
                |e| matches!(e, Error::ThetaCi(_)),
            ),
            (
                PipelineConfig {
                    reduced_dim: 0,
                    ..base.clone()
                },
                |e| matches!(e, Error::ReducedDim(0)),
            ),
            (
                PipelineConfig {
                    min_likes: 0,
                    ..base.clone()
                },
                |e| matches!(e, Error::MinLikes(0)),
            ),
            (
                PipelineConfig {
                    kmeans_max_iters: 0,
                    ..base.clone()
                },
                |e| matches!(e, Error::MaxIters(0)),
            ),
            (
                PipelineConfig {
                    kmeans_tol: -1.0,
                    ..base.clone()
                },
                |e| matches!(e, Error::KMeansTol(_)),
            ),
        ];
        for (cfg, check) in cases {
            let err = cfg.validate().unwrap_err();
            assert!(check(&err), "unexpected error {err:?}");
        }
    }

    #[test]
    fn partial_json_config_takes_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{"n_partitions": 20}"#).unwrap();
        assert_eq!(c.n_partitions, 20);
        assert_eq!(c.theta_ci, 0.25);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn embedding_set_rejects_bad_input() {
        let a = EmbeddingRecord::new("a", vec![0.0, 1.0]).unwrap();
        let b = EmbeddingRecord::new("a", vec![2.0, 3.0]).unwrap();
        assert!(matches!(
            EmbeddingSet::new(2, vec![a.clone(), b]),
            Err(Error::DuplicateId(_))
        ));
        assert!(matches!(
            EmbeddingSet::new(3, vec![a]),
            Err(Error::DimensionMismatch { expected: 3, actual: 2 })
        ));
        assert!(EmbeddingRecord::new("", vec![]).is_err());
        assert!(EmbeddingRecord::new("x", vec![f32::NAN]).is_err());
    }

    #[test]
    fn likes_index_counts_distinct_users() {
        let likes = LikesIndex::from_pairs([("u1", "a"), ("u1", "b"), ("u2", "a"), ("u1", "a")]).unwrap();
        assert_eq!(likes.total_users(), 2);
        assert_eq!(likes.liked_by("u1").unwrap().len(), 2);
        assert_eq!(likes.pair_count(), 3);
    }
}
