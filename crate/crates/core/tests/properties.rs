use std::collections::{BTreeMap, BTreeSet};

use common_interest::analysis::{group_partitions, rank_images};
use common_interest::ci::{
    ci_score, lance_williams_ward, merge_partitions, replay_merge_log, unique_users, ward_distance_sq,
};
use common_interest::linalg::{squared_distance, Matrix};
use common_interest::partition::kmeans_fit;
use common_interest::reduce::fit_pca;
use common_interest::regress::{fit, RidgePenalty};
use common_interest::types::{
    CiRegressor, EmbeddingRecord, EmbeddingSet, Group, LikesIndex, Partition, PipelineConfig,
};
use proptest::prelude::*;

/// Random likes over `n_users` x `n_images`, plus a random partition label per image.
fn likes_and_parts() -> impl Strategy<Value = (LikesIndex, Vec<usize>)> {
    (1usize..12, 2usize..40, 2usize..6).prop_flat_map(|(users, images, parts)| {
        (
            prop::collection::vec((0..users, 0..images), 1..120),
            prop::collection::vec(0..parts, images),
        )
            .prop_map(|(pairs, labels)| {
                let likes =
                    LikesIndex::from_pairs(pairs.into_iter().map(|(u, i)| (format!("u{u}"), format!("i{i:02}"))))
                        .unwrap();
                (likes, labels)
            })
    })
}

fn members(labels: &[usize], part: usize) -> Vec<String> {
    (0..labels.len())
        .filter(|&i| labels[i] == part)
        .map(|i| format!("i{i:02}"))
        .collect()
}

fn strs(v: &[String]) -> impl Iterator<Item = &str> {
    v.iter().map(String::as_str)
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-10.0f64..10.0, rows * cols).prop_map(move |d| Matrix::from_vec(rows, cols, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unique_users_of_union_is_union((likes, labels) in likes_and_parts()) {
        let (a, b) = (members(&labels, 0), members(&labels, 1));
        let both: Vec<String> = a.iter().chain(&b).cloned().collect();
        let ua = unique_users(strs(&a), &likes, 1);
        let ub = unique_users(strs(&b), &likes, 1);
        let union: BTreeSet<String> = ua.union(&ub).cloned().collect();
        prop_assert_eq!(unique_users(strs(&both), &likes, 1), union);
        let ci_union = ci_score(strs(&both), &likes, 1);
        prop_assert!(ci_union >= ci_score(strs(&a), &likes, 1));
        prop_assert!(ci_union >= ci_score(strs(&b), &likes, 1));
    }

    #[test]
    fn ci_non_increasing_in_min_likes((likes, labels) in likes_and_parts()) {
        let m = members(&labels, 0);
        let scores: Vec<f64> = (1..=5).map(|k| ci_score(strs(&m), &likes, k)).collect();
        prop_assert!(scores.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));
    }

    #[test]
    fn merge_log_respects_thresholds_and_replays(
        (likes, labels) in likes_and_parts(),
        coords in prop::collection::vec(-3.0f64..3.0, 12),
        theta_ci in 0.05f64..0.9,
    ) {
        let n_parts = labels.iter().max().unwrap() + 1;
        let leaves: Vec<Partition> = (0..n_parts)
            .map(|p| Partition { id: p, members: members(&labels, p), centroid: coords[2 * p..2 * p + 2].to_vec() })
            .filter(|l| !l.members.is_empty())
            .enumerate()
            .map(|(id, l)| Partition { id, ..l })
            .collect();
        let config = PipelineConfig { theta_ci, ..PipelineConfig::default() };
        let out = merge_partitions(&leaves, &likes, &config).unwrap();
        for e in &out.merge_log {
            prop_assert!(e.ward_distance < config.theta_image);
            prop_assert!(e.user_iou > config.theta_ci);
        }
        prop_assert_eq!(replay_merge_log(leaves.len(), &out.merge_log).unwrap(), out.leaf_to_final.clone());
        // final CI equals a direct computation over the merged members
        for (&p, &ci) in &out.ci_scores {
            let m: Vec<String> = leaves
                .iter()
                .filter(|l| out.leaf_to_final[l.id] == p)
                .flat_map(|l| l.members.clone())
                .collect();
            prop_assert_eq!(ci, ci_score(strs(&m), &likes, 1));
        }
    }

    #[test]
    fn lance_williams_matches_direct_ward(
        sizes in prop::collection::vec(1usize..30, 3),
        c in prop::collection::vec(-5.0f64..5.0, 9),
    ) {
        let (a, b, cc) = (&c[0..3], &c[3..6], &c[6..9]);
        let (na, nb, nc) = (sizes[0], sizes[1], sizes[2]);
        let merged: Vec<f64> = (0..3)
            .map(|j| (na as f64 * a[j] + nb as f64 * b[j]) / (na + nb) as f64)
            .collect();
        let direct = ward_distance_sq(na + nb, &merged, nc, cc);
        let updated = lance_williams_ward(
            ward_distance_sq(na, a, nc, cc),
            ward_distance_sq(nb, b, nc, cc),
            ward_distance_sq(na, a, nb, b),
            na, nb, nc,
        );
        prop_assert!((direct - updated).abs() <= 1e-9 * direct.max(1.0));
    }

    #[test]
    fn groups_follow_ci_order(
        entries in prop::collection::vec((0.0f64..1.0, 1usize..50), 3..30),
    ) {
        let ci: BTreeMap<usize, f64> = entries.iter().enumerate().map(|(p, e)| (p, e.0)).collect();
        let counts: BTreeMap<usize, usize> = entries.iter().enumerate().map(|(p, e)| (p, e.1)).collect();
        let g = group_partitions(&ci, &counts).unwrap();
        let ci_of = |grp: Group| -> Vec<f64> { g.partitions_in(grp).map(|p| ci[&p]).collect() };
        for pair in Group::ALL.windows(2) {
            let hi = ci_of(pair[0]);
            let lo = ci_of(pair[1]);
            prop_assert!(!hi.is_empty() && !lo.is_empty());
            let min_hi = hi.iter().copied().fold(f64::INFINITY, f64::min);
            let max_lo = lo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(min_hi >= max_lo);
        }
        prop_assert!(g.boundaries[0] < g.boundaries[1]);
        prop_assert!(g.boundaries[1] < counts.values().sum::<usize>());
    }

    #[test]
    fn ranking_is_a_permutation(
        values in prop::collection::vec(prop::collection::vec(-5.0f32..5.0, 3), 1..40),
        weights in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        let records = values
            .into_iter()
            .enumerate()
            .map(|(i, v)| EmbeddingRecord::new(format!("img{i:03}"), v).unwrap())
            .collect();
        let set = EmbeddingSet::new(3, records).unwrap();
        let reg = CiRegressor { weights, bias: 0.1, ridge_lambda: 0.0, target_min: 0.0, target_max: 1.0 };
        let ranked = rank_images(&reg, &set, false).unwrap();
        let mut ids: Vec<&str> = ranked.iter().map(|(id, _)| id.as_str()).collect();
        prop_assert!(ranked.windows(2).all(|w| w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0)));
        ids.sort();
        let expect: Vec<&str> = set.ids().collect();
        prop_assert_eq!(ids, expect);
    }

    #[test]
    fn pca_transform_is_affine(x in matrix(12, 4), s in -3.0f64..3.0) {
        let Ok(pca) = fit_pca(&x, 2) else { return Ok(()) };
        // T(x) - T(y) = C (x - y), so T(y + s (x - y)) = T(y) + s (T(x) - T(y))
        let (a, b) = (x.row(0).to_vec(), x.row(1).to_vec());
        let mix: Vec<f64> = a.iter().zip(&b).map(|(p, q)| q + s * (p - q)).collect();
        let t = pca.transform(&Matrix::from_rows(&[a, b, mix]).unwrap()).unwrap();
        for j in 0..2 {
            let expect = t.row(1)[j] + s * (t.row(0)[j] - t.row(1)[j]);
            prop_assert!((t.row(2)[j] - expect).abs() < 1e-9 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn kmeans_ignores_row_order(x in matrix(20, 2), seed in 0u64..50, rot in 1usize..19) {
        let k = 3;
        let a = kmeans_fit(&x, k, seed, 50, 1e-9).unwrap();
        let rows: Vec<Vec<f64>> = (0..20).map(|i| x.row((i + rot) % 20).to_vec()).collect();
        let b = kmeans_fit(&Matrix::from_rows(&rows).unwrap(), k, seed, 50, 1e-9).unwrap();
        // same partition up to relabeling and equal inertia
        for i in 0..20 {
            for j in 0..20 {
                let same_a = a.labels[(i + rot) % 20] == a.labels[(j + rot) % 20];
                prop_assert_eq!(same_a, b.labels[i] == b.labels[j]);
            }
        }
        prop_assert_eq!(a.inertia.to_bits(), b.inertia.to_bits());
        prop_assert!(a.inertia_history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }

    #[test]
    fn ridge_shrinks_weights(x in matrix(15, 3), t in prop::collection::vec(-1.0f64..1.0, 15), l1 in 0.01f64..10.0, f in 1.5f64..10.0) {
        let norm = |w: &[f64]| squared_distance(w, &[0.0; 3]);
        let (Ok(a), Ok(b)) = (fit(&x, &t, RidgePenalty::Fixed(l1)), fit(&x, &t, RidgePenalty::Fixed(l1 * f))) else {
            return Ok(());
        };
        prop_assert!(norm(&a.weights) >= norm(&b.weights) * (1.0 - 1e-7));
    }
}
