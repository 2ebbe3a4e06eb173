use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::importance::ImportanceRecord;

/// Each group's share of a layer's total importance before and after pruning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerShare {
    pub layer_id: usize,
    pub group: usize,
    pub reference_share: Option<f64>,
    pub pruned_share: Option<f64>,
}

fn shares(records: &[ImportanceRecord]) -> BTreeMap<(usize, usize), Option<f64>> {
    let mut per_group: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for r in records {
        *per_group.entry((r.layer_id, r.group)).or_default() += r.score;
    }
    let mut per_layer: BTreeMap<usize, f64> = BTreeMap::new();
    for (&(l, _), &s) in &per_group {
        *per_layer.entry(l).or_default() += s;
    }
    per_group
        .into_iter()
        .map(|((l, g), s)| {
            let total = per_layer[&l];
            ((l, g), (total > 0.0).then(|| s / total))
        })
        .collect()
}

/// Shares from two importance dumps of the same layers and groups. Pruned
/// weights score zero, so the pruned dump only counts kept weights.
pub fn layer_share_report(
    reference: &[ImportanceRecord],
    pruned: &[ImportanceRecord],
) -> Result<Vec<LayerShare>> {
    let a = shares(reference);
    let b = shares(pruned);
    if !a.keys().eq(b.keys()) {
        return Err(Error::Data(
            "importance dumps cover different layers or groups".into(),
        ));
    }
    Ok(a.into_iter()
        .zip(b.into_values())
        .map(
            |(((layer_id, group), reference_share), pruned_share)| LayerShare {
                layer_id,
                group,
                reference_share,
                pruned_share,
            },
        )
        .collect())
}

/// Largest absolute gap between pruned and reference share over all layers and groups.
pub fn max_share_deviation(rows: &[LayerShare]) -> f64 {
    rows.iter()
        .filter_map(|r| Some((r.pruned_share? - r.reference_share?).abs()))
        .fold(0.0, f64::max)
}

pub fn write_layer_shares_csv<W: Write>(rows: &[LayerShare], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["layer_id", "group", "reference_share", "pruned_share"])?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.layer_id.to_string(),
            r.group.to_string(),
            cell(r.reference_share),
            cell(r.pruned_share),
        ])?;
    }
    w.flush()?;
    Ok(())
}
