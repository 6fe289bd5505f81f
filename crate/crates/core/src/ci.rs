//! Unique users, common-interest scores, user IoU, Ward linkage and the
//! dual-criterion merge loop.
//!
//! A partition's unique users are the users with at least `min_likes` liked
//! images among its members; its CI is that count divided by the total user
//! count `M`. Two partitions merge when their Ward distance is below
//! `theta_image` and the IoU of their unique-user sets exceeds `theta_ci`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use fixedbitset::FixedBitSet;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::squared_distance;
use crate::types::{LikesIndex, MergeEvent, Partition, PipelineConfig};

/// Users with at least `min_likes` liked images among `members`.
pub fn unique_users<'a>(
    members: impl IntoIterator<Item = &'a str>,
    likes: &LikesIndex,
    min_likes: usize,
) -> BTreeSet<String> {
    LikerIndex::new(likes)
        .unique_users(members, min_likes)
        .ones()
        .map(|u| likes.users().nth(u).expect("user index in range").to_owned())
        .collect()
}

/// `|unique_users| / M`.
pub fn ci_score<'a>(members: impl IntoIterator<Item = &'a str>, likes: &LikesIndex, min_likes: usize) -> f64 {
    let index = LikerIndex::new(likes);
    index.ci(&index.unique_users(members, min_likes))
}

/// Jaccard overlap of two user sets; 0 when both are empty.
pub fn user_iou<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn bitset_iou(a: &FixedBitSet, b: &FixedBitSet) -> f64 {
    let inter = a.intersection_count(b);
    let union = a.union_count(b);
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Squared Ward distance from sizes and centroids.
pub fn ward_distance_sq(size_a: usize, mean_a: &[f64], size_b: usize, mean_b: &[f64]) -> f64 {
    let (a, b) = (size_a as f64, size_b as f64);
    2.0 * a * b / (a + b) * squared_distance(mean_a, mean_b)
}

/// `sqrt(2|A||B| / (|A|+|B|)) * |mu_A - mu_B|`
pub fn ward_distance(a: &Partition, b: &Partition) -> Result<f64> {
    if a.centroid.len() != b.centroid.len() {
        return Err(Error::DimensionMismatch {
            expected: a.centroid.len(),
            actual: b.centroid.len(),
        });
    }
    Ok(ward_distance_sq(a.size(), &a.centroid, b.size(), &b.centroid).sqrt())
}

/// Lance-Williams update of the squared Ward distance from the union of
/// `a` and `b` to a third cluster `c`.
pub fn lance_williams_ward(d2_ac: f64, d2_bc: f64, d2_ab: f64, size_a: usize, size_b: usize, size_c: usize) -> f64 {
    let (a, b, c) = (size_a as f64, size_b as f64, size_c as f64);
    let d2 = ((a + c) * d2_ac + (b + c) * d2_bc - c * d2_ab) / (a + b + c);
    d2.max(0.0)
}

/// Image id to the dense indices of the users who liked it.
#[derive(Debug, Clone)]
pub struct LikerIndex {
    likers: HashMap<String, Vec<u32>>,
    total_users: usize,
}

impl LikerIndex {
    pub fn new(likes: &LikesIndex) -> Self {
        let mut likers: HashMap<String, Vec<u32>> = HashMap::new();
        for (u, (_, images)) in likes.iter().enumerate() {
            for image in images {
                likers.entry(image.clone()).or_default().push(u as u32);
            }
        }
        LikerIndex {
            likers,
            total_users: likes.total_users(),
        }
    }

    pub fn total_users(&self) -> usize {
        self.total_users
    }

    /// Sorted `(user, liked-image count)` pairs for a set of images.
    pub fn like_counts<'a>(&self, members: impl IntoIterator<Item = &'a str>) -> Vec<(u32, u32)> {
        let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
        for image in members {
            if let Some(users) = self.likers.get(image) {
                for &u in users {
                    *counts.entry(u).or_default() += 1;
                }
            }
        }
        counts.into_iter().collect()
    }

    pub fn unique_users<'a>(&self, members: impl IntoIterator<Item = &'a str>, min_likes: usize) -> FixedBitSet {
        self.users_from_counts(&self.like_counts(members), min_likes)
    }

    fn users_from_counts(&self, counts: &[(u32, u32)], min_likes: usize) -> FixedBitSet {
        let mut set = FixedBitSet::with_capacity(self.total_users);
        for &(u, c) in counts {
            if c as usize >= min_likes {
                set.insert(u as usize);
            }
        }
        set
    }

    pub fn ci(&self, users: &FixedBitSet) -> f64 {
        if self.total_users == 0 {
            0.0
        } else {
            users.count_ones(..) as f64 / self.total_users as f64
        }
    }
}

fn merge_counts(a: &[(u32, u32)], b: &[(u32, u32)]) -> Vec<(u32, u32)> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push((a[i].0, a[i].1 + b[j].1));
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutcome {
    pub merge_log: Vec<MergeEvent>,
    /// Indexed by leaf id.
    pub leaf_to_final: Vec<usize>,
    pub ci_scores: BTreeMap<usize, f64>,
    /// Unique-user count of every final partition.
    pub unique_users: BTreeMap<usize, usize>,
    /// Reduced-space centroid of every final partition.
    pub centroids: BTreeMap<usize, Vec<f64>>,
}

struct Node {
    size: usize,
    centroid: Vec<f64>,
    counts: Vec<(u32, u32)>,
    users: FixedBitSet,
}

/// Greedy dual-criterion agglomeration of the leaf partitions.
///
/// Leaves must carry ids `0..n` in order; merged partitions get ids from
/// `n` upwards. Each round merges the qualifying pair with the smallest Ward
/// distance (ties: lowest id pair) until no pair qualifies.
pub fn merge_partitions(leaves: &[Partition], likes: &LikesIndex, config: &PipelineConfig) -> Result<MergeOutcome> {
    config.validate()?;
    merge_with_index(leaves, &LikerIndex::new(likes), config)
}

pub fn merge_with_index(leaves: &[Partition], index: &LikerIndex, config: &PipelineConfig) -> Result<MergeOutcome> {
    let n = leaves.len();
    if n == 0 {
        return Err(Error::TooFewPartitions { needed: 1, got: 0 });
    }
    let dim = leaves[0].centroid.len();
    for (i, leaf) in leaves.iter().enumerate() {
        if leaf.id != i {
            return Err(Error::Invariant(format!(
                "leaf at position {i} has id {}; leaf ids must be dense and ordered",
                leaf.id
            )));
        }
        if leaf.members.is_empty() {
            return Err(Error::Invariant(format!("leaf {i} is empty")));
        }
        if leaf.centroid.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: leaf.centroid.len(),
            });
        }
    }

    let k = config.min_likes;
    let slots = 2 * n - 1;
    let mut nodes: Vec<Option<Node>> = Vec::with_capacity(slots);
    for leaf in leaves {
        let counts = index.like_counts(leaf.members.iter().map(String::as_str));
        let users = index.users_from_counts(&counts, k);
        nodes.push(Some(Node {
            size: leaf.size(),
            centroid: leaf.centroid.clone(),
            counts,
            users,
        }));
    }

    // dense symmetric tables over all slots, filled lazily as nodes appear
    let mut d2 = vec![0.0f64; slots * slots];
    let mut iou = vec![0.0f64; slots * slots];
    let rows: Vec<Vec<(f64, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = nodes[i].as_ref().expect("leaf present");
            (0..i)
                .map(|j| {
                    let b = nodes[j].as_ref().expect("leaf present");
                    (
                        ward_distance_sq(a.size, &a.centroid, b.size, &b.centroid),
                        bitset_iou(&a.users, &b.users),
                    )
                })
                .collect()
        })
        .collect();
    for (i, row) in rows.into_iter().enumerate() {
        for (j, (dd, ii)) in row.into_iter().enumerate() {
            d2[i * slots + j] = dd;
            d2[j * slots + i] = dd;
            iou[i * slots + j] = ii;
            iou[j * slots + i] = ii;
        }
    }

    let mut active: Vec<usize> = (0..n).collect();
    let mut merge_log = Vec::new();
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for (x, &i) in active.iter().enumerate() {
            for &j in &active[x + 1..] {
                let d = d2[i * slots + j].sqrt();
                let overlap = iou[i * slots + j];
                if d < config.theta_image && overlap > config.theta_ci && best.is_none_or(|(_, _, bd)| d < bd) {
                    best = Some((i, j, d));
                }
            }
        }
        let Some((a, b, dist)) = best else { break };

        let new_id = nodes.len();
        let node_a = nodes[a].take().expect("active node");
        let node_b = nodes[b].take().expect("active node");
        let size = node_a.size + node_b.size;
        let (wa, wb) = (node_a.size as f64, node_b.size as f64);
        let centroid: Vec<f64> = node_a
            .centroid
            .iter()
            .zip(&node_b.centroid)
            .map(|(x, y)| (wa * x + wb * y) / (wa + wb))
            .collect();
        let counts = merge_counts(&node_a.counts, &node_b.counts);
        let users = index.users_from_counts(&counts, k);
        merge_log.push(MergeEvent {
            left_id: a,
            right_id: b,
            new_id,
            ward_distance: dist,
            user_iou: iou[a * slots + b],
        });

        active.retain(|&c| c != a && c != b);
        let d2_ab = d2[a * slots + b];
        for &c in &active {
            let node_c = nodes[c].as_ref().expect("active node");
            let dd = lance_williams_ward(
                d2[a * slots + c],
                d2[b * slots + c],
                d2_ab,
                node_a.size,
                node_b.size,
                node_c.size,
            );
            let ii = bitset_iou(&users, &node_c.users);
            d2[new_id * slots + c] = dd;
            d2[c * slots + new_id] = dd;
            iou[new_id * slots + c] = ii;
            iou[c * slots + new_id] = ii;
        }
        nodes.push(Some(Node {
            size,
            centroid,
            counts,
            users,
        }));
        active.push(new_id);
    }

    let leaf_to_final = replay_merge_log(n, &merge_log)?;
    let mut ci_scores = BTreeMap::new();
    let mut unique = BTreeMap::new();
    let mut centroids = BTreeMap::new();
    for &id in &active {
        let node = nodes[id].as_ref().expect("active node");
        ci_scores.insert(id, index.ci(&node.users));
        unique.insert(id, node.users.count_ones(..));
        centroids.insert(id, node.centroid.clone());
    }
    Ok(MergeOutcome {
        merge_log,
        leaf_to_final,
        ci_scores,
        unique_users: unique,
        centroids,
    })
}

/// Replays a merge log over `n_leaves` leaves and returns the final
/// partition of every leaf.
pub fn replay_merge_log(n_leaves: usize, log: &[MergeEvent]) -> Result<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n_leaves + log.len()).collect();
    let mut alive = vec![true; n_leaves];
    for (step, ev) in log.iter().enumerate() {
        let expected = n_leaves + step;
        if ev.new_id != expected {
            return Err(Error::Invariant(format!(
                "merge {step} creates id {}, expected {expected}",
                ev.new_id
            )));
        }
        for id in [ev.left_id, ev.right_id] {
            if !alive.get(id).copied().unwrap_or(false) {
                return Err(Error::Invariant(format!(
                    "merge {step} consumes partition {id}, which is not live"
                )));
            }
        }
        if ev.left_id == ev.right_id {
            return Err(Error::Invariant(format!(
                "merge {step} merges {} with itself",
                ev.left_id
            )));
        }
        alive[ev.left_id] = false;
        alive[ev.right_id] = false;
        alive.push(true);
        parent[ev.left_id] = ev.new_id;
        parent[ev.right_id] = ev.new_id;
    }
    Ok((0..n_leaves)
        .map(|mut p| {
            while parent[p] != p {
                p = parent[p];
            }
            p
        })
        .collect())
}
