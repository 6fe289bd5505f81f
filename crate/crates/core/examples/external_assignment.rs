//! Route a second corpus through a fitted model and report group shares.

use common_interest::analysis::{assign_external, group_partitions};
use common_interest::io::{generate_synthetic, SyntheticSpec};
use common_interest::pipeline::{fit, ReducerChoice};
use common_interest::types::{EmbeddingSet, PipelineConfig};

fn main() -> common_interest::error::Result<()> {
    let spec = SyntheticSpec::default();
    let data = generate_synthetic(&spec)?;
    let config = PipelineConfig {
        n_partitions: 20,
        ..PipelineConfig::default()
    };
    let model = fit(&data.embeddings, &data.likes, &config, ReducerChoice::Pca)?;
    let groups = group_partitions(&model.ci_scores, &model.final_sizes())?;

    // a corpus skewed toward the common topics: all of their images, a
    // fifth of every niche topic
    let skewed: EmbeddingSet = data.embeddings.filter(|id| {
        let topic = data.truth.topic_of[id];
        let index: usize = id[6..].parse().expect("numeric suffix");
        topic < spec.common_topic_count || index.is_multiple_of(5)
    });
    let out = assign_external(&model, &groups, &skewed)?;
    println!("{} images", skewed.len());
    println!("counts Comm/Inter/Subj: {:?}", out.counts);
    println!(
        "shares: {:.1}% / {:.1}% / {:.1}%",
        100.0 * out.shares[0],
        100.0 * out.shares[1],
        100.0 * out.shares[2]
    );
    Ok(())
}
