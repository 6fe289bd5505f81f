//! The dual-criterion merge on four hand-made leaves: two close leaves that
//! share likers merge, two close leaves with disjoint likers do not.

use common_interest::ci::{merge_partitions, unique_users, user_iou, ward_distance};
use common_interest::types::{LikesIndex, Partition, PipelineConfig};

fn leaf(id: usize, n: usize, centroid: [f64; 2]) -> Partition {
    Partition {
        id,
        members: (0..n).map(|i| format!("p{id}_{i}")).collect(),
        centroid: centroid.to_vec(),
    }
}

fn main() -> common_interest::error::Result<()> {
    let leaves = vec![
        leaf(0, 4, [0.0, 0.0]),
        leaf(1, 4, [1.0, 0.0]),
        leaf(2, 4, [20.0, 0.0]),
        leaf(3, 4, [21.0, 0.0]),
    ];
    let likes = LikesIndex::from_pairs([
        ("ann", "p0_0"),
        ("ann", "p1_2"),
        ("bob", "p0_1"),
        ("bob", "p1_0"),
        ("cy", "p1_3"),
        ("dee", "p2_0"),
        ("eve", "p3_1"),
    ])?;

    let users: Vec<_> = leaves
        .iter()
        .map(|l| unique_users(l.members.iter().map(String::as_str), &likes, 1))
        .collect();
    for (a, b) in [(0, 1), (2, 3), (1, 2)] {
        println!(
            "leaves {a},{b}: ward {:.3}, user IoU {:.3}",
            ward_distance(&leaves[a], &leaves[b])?,
            user_iou(&users[a], &users[b])
        );
    }

    let out = merge_partitions(&leaves, &likes, &PipelineConfig::default())?;
    for e in &out.merge_log {
        println!(
            "merge {} + {} -> {} (ward {:.3}, IoU {:.3})",
            e.left_id, e.right_id, e.new_id, e.ward_distance, e.user_iou
        );
    }
    println!("leaf -> final: {:?}", out.leaf_to_final);
    for (p, ci) in &out.ci_scores {
        println!("partition {p}: CI {ci:.3}");
    }
    Ok(())
}
