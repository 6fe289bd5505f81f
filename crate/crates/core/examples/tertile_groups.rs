//! Comm / Inter / Subj groups of a fitted model and an attribute table
//! built from made-up labels.

use std::collections::BTreeMap;

use common_interest::analysis::{attribute_table, group_partitions, write_attribute_csv};
use common_interest::io::{generate_synthetic, ImageAttributes, SyntheticSpec};
use common_interest::pipeline::{fit, ReducerChoice};
use common_interest::types::{Group, PipelineConfig};

fn main() -> common_interest::error::Result<()> {
    let spec = SyntheticSpec::default();
    let data = generate_synthetic(&spec)?;
    let config = PipelineConfig {
        n_partitions: 20,
        ..PipelineConfig::default()
    };
    let model = fit(&data.embeddings, &data.likes, &config, ReducerChoice::Identity)?;
    let groups = group_partitions(&model.ci_scores, &model.final_sizes())?;
    for g in Group::ALL {
        let parts: Vec<usize> = groups.partitions_in(g).collect();
        println!("{g}: partitions {parts:?}");
    }

    // every 4th image gets labels; common topics are more often "landscape"
    let mut attrs = BTreeMap::new();
    for (id, &topic) in &data.truth.topic_of {
        let index: usize = id[6..].parse().expect("numeric suffix");
        if !index.is_multiple_of(4) {
            continue;
        }
        let mut a = ImageAttributes::default();
        let common = topic < spec.common_topic_count;
        if common || index.is_multiple_of(3) {
            a.labels.insert("landscape".into());
        }
        if !common {
            a.labels.insert("portrait".into());
        }
        a.numeric.insert("aesthetic".into(), 40.0 + topic as f64);
        attrs.insert(id.clone(), a);
    }
    let table = attribute_table(&attrs, &groups, &model.final_assignment())?;
    write_attribute_csv(&table, std::io::stdout().lock())
}
