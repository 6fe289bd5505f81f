//! Synthetic embeddings and likes with planted common and niche topics.
//!
//! Topic centers are drawn uniformly from `[-10, 10]^d` and kept at least
//! `8 * cluster_std` apart. The first `common_topic_count` topics are liked
//! by each user independently with probability `common_like_prob`; every
//! other topic is liked only by its own disjoint block of users.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{EmbeddingRecord, EmbeddingSet, LikesIndex};

const CENTER_ATTEMPTS: usize = 100_000;
const REDRAW_LIMIT: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_topics: usize,
    pub topic_dim: usize,
    pub n_users: usize,
    pub common_topic_count: usize,
    pub common_like_prob: f64,
    pub niche_users_per_topic: usize,
    pub images_per_topic: usize,
    pub cluster_std: f64,
    /// A user who likes a topic likes between 1 and this many of its images.
    pub max_likes_per_topic: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_topics: 20,
            topic_dim: 32,
            n_users: 100,
            common_topic_count: 5,
            common_like_prob: 0.95,
            niche_users_per_topic: 5,
            images_per_topic: 200,
            cluster_std: 0.5,
            max_likes_per_topic: 5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn niche_topic_count(&self) -> usize {
        self.n_topics - self.common_topic_count
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Infeasible(msg));
        if self.n_topics < 2 {
            return bad(format!("n_topics must be >= 2, got {}", self.n_topics));
        }
        if self.common_topic_count >= self.n_topics {
            return bad(format!(
                "common_topic_count {} must be below n_topics {}",
                self.common_topic_count, self.n_topics
            ));
        }
        if self.topic_dim == 0 || self.n_users == 0 || self.images_per_topic == 0 {
            return bad("dimension, user count and images per topic must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.common_like_prob) {
            return bad(format!("common_like_prob {} outside [0, 1]", self.common_like_prob));
        }
        if !(self.cluster_std.is_finite() && self.cluster_std > 0.0) {
            return bad(format!("cluster_std must be > 0, got {}", self.cluster_std));
        }
        if self.niche_users_per_topic == 0 || self.niche_users_per_topic > self.n_users {
            return bad(format!(
                "niche_users_per_topic {} must lie in 1..={}",
                self.niche_users_per_topic, self.n_users
            ));
        }
        let blocked = self.niche_topic_count() * self.niche_users_per_topic;
        if blocked > self.n_users {
            return bad(format!(
                "{} niche topics x {} users = {blocked} exceeds {} users",
                self.niche_topic_count(),
                self.niche_users_per_topic,
                self.n_users
            ));
        }
        if blocked < self.n_users && (self.common_topic_count == 0 || self.common_like_prob == 0.0) {
            return bad("users outside every niche block could never like an image".into());
        }
        if self.max_likes_per_topic == 0 {
            return bad("max_likes_per_topic must be >= 1".into());
        }
        Ok(())
    }

    /// Expected fraction of users who like each topic, accounting for the
    /// redraw of users who would otherwise like nothing.
    pub fn planted_popularity(&self) -> Vec<f64> {
        let m = self.n_users as f64;
        let blocked = (self.niche_topic_count() * self.niche_users_per_topic) as f64;
        let p = self.common_like_prob;
        let p_free = if p > 0.0 {
            p / (1.0 - (1.0 - p).powi(self.common_topic_count as i32))
        } else {
            0.0
        };
        let common = (blocked * p + (m - blocked) * p_free) / m;
        let niche = self.niche_users_per_topic as f64 / m;
        (0..self.n_topics)
            .map(|t| if t < self.common_topic_count { common } else { niche })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub topic_of: BTreeMap<String, usize>,
    pub common_topic_count: usize,
    pub planted_popularity: Vec<f64>,
    /// Fraction of users who actually like each topic in this draw.
    pub observed_popularity: Vec<f64>,
    pub centers: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub embeddings: EmbeddingSet,
    pub likes: LikesIndex,
    pub truth: GroundTruth,
}

pub fn image_id(topic: usize, index: usize) -> String {
    format!("t{topic:04}_{index:05}")
}

pub fn user_id(user: usize) -> String {
    format!("u{user:06}")
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let d = spec.topic_dim;
    let min_sep2 = (8.0 * spec.cluster_std).powi(2);

    let mut rng = stream(spec.seed, 0);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(spec.n_topics);
    while centers.len() < spec.n_topics {
        let mut placed = false;
        for _ in 0..CENTER_ATTEMPTS {
            let c: Vec<f64> = (0..d).map(|_| rng.random_range(-10.0..10.0)).collect();
            if centers
                .iter()
                .all(|o| crate::linalg::squared_distance(o, &c) >= min_sep2)
            {
                centers.push(c);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Infeasible(format!(
                "cannot place {} centers {}-separated in [-10, 10]^{d}",
                spec.n_topics,
                8.0 * spec.cluster_std
            )));
        }
    }

    let mut rng = stream(spec.seed, 1);
    let mut records = Vec::with_capacity(spec.n_topics * spec.images_per_topic);
    let mut topic_of = BTreeMap::new();
    for (t, center) in centers.iter().enumerate() {
        for i in 0..spec.images_per_topic {
            let v: Vec<f32> = center
                .iter()
                .map(|c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (c + spec.cluster_std * z) as f32
                })
                .collect();
            let id = image_id(t, i);
            topic_of.insert(id.clone(), t);
            records.push(EmbeddingRecord {
                image_id: id,
                vector: v,
            });
        }
    }

    let mut rng = stream(spec.seed, 2);
    let block = spec.niche_users_per_topic;
    let mut pairs = Vec::new();
    let mut likers = vec![0usize; spec.n_topics];
    let like_topic = |rng: &mut ChaCha8Rng, user: usize, topic: usize, pairs: &mut Vec<(String, String)>| {
        let count = rng.random_range(1..=spec.max_likes_per_topic.min(spec.images_per_topic));
        for i in sample(rng, spec.images_per_topic, count).into_iter() {
            pairs.push((user_id(user), image_id(topic, i)));
        }
    };
    for user in 0..spec.n_users {
        let niche = (user / block < spec.niche_topic_count()).then(|| spec.common_topic_count + user / block);
        let mut chosen = Vec::new();
        for attempt in 0.. {
            chosen = (0..spec.common_topic_count)
                .filter(|_| rng.random::<f64>() < spec.common_like_prob)
                .collect();
            if !chosen.is_empty() || niche.is_some() {
                break;
            }
            if attempt >= REDRAW_LIMIT {
                return Err(Error::Infeasible(format!("user {user} never liked a topic")));
            }
        }
        chosen.extend(niche);
        for t in chosen {
            likers[t] += 1;
            like_topic(&mut rng, user, t, &mut pairs);
        }
    }

    let likes = LikesIndex::from_pairs(pairs)?;
    let embeddings = EmbeddingSet::new(d, records)?;
    Ok(SyntheticData {
        embeddings,
        likes,
        truth: GroundTruth {
            topic_of,
            common_topic_count: spec.common_topic_count,
            planted_popularity: spec.planted_popularity(),
            observed_popularity: likers.iter().map(|&c| c as f64 / spec.n_users as f64).collect(),
            centers,
        },
    })
}
