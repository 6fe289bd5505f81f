//! Plant 5 common and 15 niche topics, fit, and compare recovered CI to
//! the planted popularity of each topic.

use std::collections::BTreeMap;

use common_interest::io::{generate_synthetic, SyntheticSpec};
use common_interest::metrics::{adjusted_rand_index, spearman};
use common_interest::pipeline::{fit, ReducerChoice};
use common_interest::types::PipelineConfig;

fn main() -> common_interest::error::Result<()> {
    let spec = SyntheticSpec::default();
    let data = generate_synthetic(&spec)?;
    let config = PipelineConfig {
        n_partitions: 20,
        ..PipelineConfig::default()
    };
    let model = fit(&data.embeddings, &data.likes, &config, ReducerChoice::Identity)?;

    let mut topic_ci = BTreeMap::new();
    let (mut truth, mut found) = (Vec::new(), Vec::new());
    for (id, &topic) in &data.truth.topic_of {
        let p = model.final_partition_of(id).expect("every image is assigned");
        topic_ci.insert(topic, model.ci_scores[&p]);
        truth.push(topic);
        found.push(p);
    }
    println!("topic  planted  recovered");
    for (t, ci) in &topic_ci {
        println!("{t:>5}  {:>7.3}  {ci:>9.3}", data.truth.planted_popularity[*t]);
    }
    let recovered: Vec<f64> = topic_ci.values().copied().collect();
    println!("ARI vs topics: {:.4}", adjusted_rand_index(&truth, &found)?);
    println!(
        "spearman:      {:.3}",
        spearman(&recovered, &data.truth.planted_popularity)?
    );
    Ok(())
}
