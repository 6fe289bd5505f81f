//! Train the per-image CI regressor on a fitted model and rank images.

use common_interest::analysis::rank_images;
use common_interest::io::{generate_synthetic, SyntheticSpec};
use common_interest::pipeline::{fit, ReducerChoice};
use common_interest::regress::{train, RidgePenalty};
use common_interest::types::PipelineConfig;

fn main() -> common_interest::error::Result<()> {
    let data = generate_synthetic(&SyntheticSpec::default())?;
    let config = PipelineConfig {
        n_partitions: 20,
        ..PipelineConfig::default()
    };
    let model = fit(&data.embeddings, &data.likes, &config, ReducerChoice::Pca)?;
    let report = train(&model, &data.embeddings, RidgePenalty::Auto, 0.8, 0)?;
    println!(
        "{} train / {} test images, R^2 {:.3} / {:.3}, lambda {:.3e}",
        report.n_train, report.n_test, report.train_r2, report.test_r2, report.regressor.ridge_lambda
    );

    let ranked = rank_images(&report.regressor, &data.embeddings, false)?;
    println!("top 5:");
    for (id, score) in ranked.iter().take(5) {
        println!("  {id}  {score:.3}  topic {}", data.truth.topic_of[id]);
    }
    println!("bottom 5:");
    for (id, score) in ranked.iter().rev().take(5) {
        println!("  {id}  {score:.3}  topic {}", data.truth.topic_of[id]);
    }
    Ok(())
}
