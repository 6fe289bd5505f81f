//! How partition CI falls as a user needs more liked images to count.

use common_interest::io::{generate_synthetic, SyntheticSpec};
use common_interest::pipeline::{ci_with_min_likes, fit, ReducerChoice};
use common_interest::types::PipelineConfig;

fn main() -> common_interest::error::Result<()> {
    let data = generate_synthetic(&SyntheticSpec::default())?;
    let config = PipelineConfig {
        n_partitions: 20,
        ..PipelineConfig::default()
    };
    let model = fit(&data.embeddings, &data.likes, &config, ReducerChoice::Identity)?;
    let by_k: Vec<_> = (1..=5).map(|k| ci_with_min_likes(&model, &data.likes, k)).collect();
    println!("partition  k=1    k=2    k=3    k=4    k=5");
    for p in model.ci_scores.keys() {
        let row: Vec<String> = by_k.iter().map(|m| format!("{:.2}", m[p])).collect();
        println!("{p:>9}  {}", row.join("   "));
    }
    Ok(())
}
