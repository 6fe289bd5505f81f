//! Tertile groups over CI-sorted partitions and what they contain.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::tables::AttributeMap;
use crate::pipeline::route;
use crate::regress::predict;
use crate::types::{
    AttributeRow, AttributeTable, CiRegressor, EmbeddingSet, Group, GroupAssignment, NumericRow, PartitionModel,
    Quartiles,
};

/// Partition ids sorted by CI descending, ties by lower id.
pub fn ci_order(ci_scores: &BTreeMap<usize, f64>) -> Vec<usize> {
    let mut order: Vec<usize> = ci_scores.keys().copied().collect();
    order.sort_by(|a, b| ci_scores[b].total_cmp(&ci_scores[a]).then(a.cmp(b)));
    order
}

/// Splits partitions into Comm, Inter and Subj thirds of the image count.
///
/// Walking partitions in [`ci_order`], the one that crosses a third joins
/// the earlier group iff that leaves the cumulative count closer to the
/// target. Every group gets at least one partition.
pub fn group_partitions(
    ci_scores: &BTreeMap<usize, f64>,
    image_counts: &BTreeMap<usize, usize>,
) -> Result<GroupAssignment> {
    let n = ci_scores.len();
    if n < 3 {
        return Err(Error::TooFewPartitions { needed: 3, got: n });
    }
    if !ci_scores.keys().eq(image_counts.keys()) {
        return Err(Error::Invariant(
            "CI scores and image counts cover different partitions".into(),
        ));
    }
    if let Some((p, _)) = image_counts.iter().find(|(_, &c)| c == 0) {
        return Err(Error::Invariant(format!("partition {p} has no images")));
    }

    let order = ci_order(ci_scores);
    let total: usize = image_counts.values().sum();
    let mut group_of = BTreeMap::new();
    let mut boundaries = [0usize; 2];
    let mut g = 0usize;
    let mut in_group = 0usize;
    let mut cum = 0usize;
    for (i, &p) in order.iter().enumerate() {
        let count = image_counts[&p];
        while g < 2 {
            // distances to the target third, scaled by 3 to stay in integers
            let target = (g + 1) as i128 * total as i128;
            let after = (3 * (cum + count) as i128 - target).abs();
            let before = (3 * cum as i128 - target).abs();
            let later_groups_fed = n - i > 2 - g;
            let fits = 3 * (cum + count) as i128 <= target || after < before;
            if in_group == 0 || (fits && later_groups_fed) {
                break;
            }
            boundaries[g] = cum;
            g += 1;
            in_group = 0;
        }
        group_of.insert(p, Group::ALL[g]);
        in_group += 1;
        cum += count;
    }
    if g < 2 {
        // unreachable with n >= 3, kept as a guard
        return Err(Error::Invariant("fewer than three groups formed".into()));
    }
    Ok(GroupAssignment { group_of, boundaries })
}

/// Linear-interpolation quantile of sorted data at `q` in `[0, 1]`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn quartiles(mut values: Vec<f64>) -> Option<Quartiles> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(Quartiles {
        q25: quantile(&values, 0.25),
        q50: quantile(&values, 0.5),
        q75: quantile(&values, 0.75),
    })
}

/// Percentages of labeled images per group carrying each categorical
/// label, plus numeric quartiles. An image is labeled when it has any row
/// in `attributes` and belongs to a final partition.
pub fn attribute_table(
    attributes: &AttributeMap,
    groups: &GroupAssignment,
    assignment: &BTreeMap<String, usize>,
) -> Result<AttributeTable> {
    let mut labeled = [0usize; 3];
    let mut label_counts: BTreeMap<&str, [usize; 3]> = BTreeMap::new();
    let mut numeric: BTreeMap<&str, [Vec<f64>; 3]> = BTreeMap::new();
    for img in attributes.values() {
        for label in &img.labels {
            label_counts.entry(label).or_default();
        }
        for name in img.numeric.keys() {
            numeric.entry(name).or_default();
        }
    }
    for (image, img) in attributes {
        let Some(group) = assignment.get(image).and_then(|&p| groups.group(p)) else {
            continue;
        };
        let g = group.index();
        labeled[g] += 1;
        for label in &img.labels {
            label_counts.get_mut(label.as_str()).expect("collected above")[g] += 1;
        }
        for (name, &v) in &img.numeric {
            numeric.get_mut(name.as_str()).expect("collected above")[g].push(v);
        }
    }
    if let Some(g) = Group::ALL.into_iter().find(|g| labeled[g.index()] == 0) {
        return Err(Error::EmptyGroup(g.name()));
    }

    let pct = |c: &[usize; 3], g: Group| 100.0 * c[g.index()] as f64 / labeled[g.index()] as f64;
    let mut rows: Vec<AttributeRow> = label_counts
        .iter()
        .map(|(name, c)| {
            let (comm, inter, subj) = (pct(c, Group::Comm), pct(c, Group::Inter), pct(c, Group::Subj));
            AttributeRow {
                attribute: (*name).to_owned(),
                percent_comm: comm,
                percent_inter: inter,
                percent_subj: subj,
                delta: comm - subj,
            }
        })
        .collect();
    rows.sort_by(|a, b| b.delta.total_cmp(&a.delta).then_with(|| a.attribute.cmp(&b.attribute)));

    let numeric_rows = numeric
        .into_iter()
        .map(|(name, [comm, inter, subj])| NumericRow {
            attribute: name.to_owned(),
            comm: quartiles(comm),
            inter: quartiles(inter),
            subj: quartiles(subj),
        })
        .collect();
    Ok(AttributeTable { rows, numeric_rows })
}

/// Writes `attribute,comm,inter,subj,delta`. Numeric attributes follow as
/// `name@q25`, `name@q50`, `name@q75` rows; a group without values is left
/// empty.
pub fn write_attribute_csv<W: Write>(table: &AttributeTable, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["attribute", "comm", "inter", "subj", "delta"])?;
    for r in &table.rows {
        w.write_record([
            r.attribute.clone(),
            r.percent_comm.to_string(),
            r.percent_inter.to_string(),
            r.percent_subj.to_string(),
            r.delta.to_string(),
        ])?;
    }
    let cell = |q: Option<f64>| q.map(|v| v.to_string()).unwrap_or_default();
    for r in &table.numeric_rows {
        for (tag, pick) in [
            ("q25", (|q: &Quartiles| q.q25) as fn(&Quartiles) -> f64),
            ("q50", |q| q.q50),
            ("q75", |q| q.q75),
        ] {
            let (c, i, s) = (
                r.comm.as_ref().map(pick),
                r.inter.as_ref().map(pick),
                r.subj.as_ref().map(pick),
            );
            let delta = c.zip(s).map(|(c, s)| c - s);
            w.write_record([format!("{}@{tag}", r.attribute), cell(c), cell(i), cell(s), cell(delta)])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalAssignment {
    /// Group of every input image, in input order.
    pub labels: Vec<(String, Group)>,
    /// Image counts for Comm, Inter, Subj.
    pub counts: [usize; 3],
    /// `counts / total`; zero for an empty input.
    pub shares: [f64; 3],
}

/// Routes new embeddings through the model and tallies their groups.
pub fn assign_external(
    model: &PartitionModel,
    groups: &GroupAssignment,
    embeddings: &EmbeddingSet,
) -> Result<ExternalAssignment> {
    let finals = route(model, embeddings)?;
    let mut counts = [0usize; 3];
    let labels = embeddings
        .ids()
        .zip(finals)
        .map(|(id, p)| {
            let g = groups
                .group(p)
                .ok_or_else(|| Error::Invariant(format!("final partition {p} has no group")))?;
            counts[g.index()] += 1;
            Ok((id.to_owned(), g))
        })
        .collect::<Result<Vec<_>>>()?;
    let total = labels.len();
    let shares = counts.map(|c| if total == 0 { 0.0 } else { c as f64 / total as f64 });
    Ok(ExternalAssignment { labels, counts, shares })
}

/// `(image_id, CI_R)` sorted by score descending, ties by id.
pub fn rank_images(model: &CiRegressor, embeddings: &EmbeddingSet, clamp: bool) -> Result<Vec<(String, f64)>> {
    let scores = predict(model, &embeddings.to_matrix(), clamp)?;
    let mut ranked: Vec<(String, f64)> = embeddings.ids().map(str::to_owned).zip(scores).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}

/// One line per final partition of the report, in [`ci_order`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub rank: usize,
    pub partition: usize,
    pub ci: f64,
    pub n_images: usize,
    pub cumulative_images: usize,
    pub group: Option<Group>,
}

/// Partitions by CI descending, with their tertile group when at least
/// three partitions exist.
pub fn partition_report(model: &PartitionModel) -> Result<Vec<ReportRow>> {
    let sizes = model.final_sizes();
    let groups = if model.ci_scores.len() >= 3 {
        Some(group_partitions(&model.ci_scores, &sizes)?)
    } else {
        None
    };
    let mut cum = 0;
    Ok(ci_order(&model.ci_scores)
        .into_iter()
        .enumerate()
        .map(|(rank, p)| {
            cum += sizes[&p];
            ReportRow {
                rank: rank + 1,
                partition: p,
                ci: model.ci_scores[&p],
                n_images: sizes[&p],
                cumulative_images: cum,
                group: groups.as_ref().and_then(|g| g.group(p)),
            }
        })
        .collect())
}

pub fn write_report_csv<W: Write>(rows: &[ReportRow], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["rank", "partition", "ci", "n_images", "cumulative_images", "group"])?;
    for r in rows {
        w.write_record([
            r.rank.to_string(),
            r.partition.to_string(),
            r.ci.to_string(),
            r.n_images.to_string(),
            r.cumulative_images.to_string(),
            r.group.map(|g| g.name().to_owned()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
