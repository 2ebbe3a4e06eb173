//! Group-wise weight importance, importance shares and share deltas.
//!
//! Importance of weight `w` for group `k` is the squared loss change on the
//! group's rows when `w` is zeroed, approximated to first order by `(g_w·w)²`.
//! Totals, shares and deltas are restricted to one layer at a time.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::GroupedDataset;
use crate::error::{Error, Result};
use crate::network::{Gradients, Model};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceConfig {
    /// Fraction of each group's training rows used for gradients.
    pub sample_fraction: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        ImportanceConfig {
            sample_fraction: 0.2,
            batch_size: 64,
            seed: 0,
        }
    }
}

fn group_seed(seed: u64, group: usize) -> u64 {
    seed ^ (group as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Gradient of the mean cross-entropy over a seeded sample of group `k`'s rows.
pub fn group_gradients(
    model: &Model,
    data: &GroupedDataset,
    group: usize,
    sample_fraction: f64,
    batch_size: usize,
    seed: u64,
) -> Result<Gradients> {
    if !(sample_fraction > 0.0 && sample_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "sample_fraction must be in (0, 1], got {sample_fraction}"
        )));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut rows = data.group_rows(group);
    if rows.is_empty() {
        return Err(Error::Data(format!("group {group} has no rows")));
    }
    let take = ((sample_fraction * rows.len() as f64).ceil() as usize).clamp(1, rows.len());
    if take < rows.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(group_seed(seed, group));
        rows.shuffle(&mut rng);
        rows.truncate(take);
        rows.sort_unstable();
    }
    mean_gradients(model, data, &rows, batch_size)
}

/// Mean-loss gradients over `rows`, accumulated batch by batch with size weights.
pub fn mean_gradients(
    model: &Model,
    data: &GroupedDataset,
    rows: &[usize],
    batch_size: usize,
) -> Result<Gradients> {
    let mut total = Gradients::zeros_like(model);
    for chunk in rows.chunks(batch_size.max(1)) {
        let (x, y) = data.batch(chunk)?;
        let (_, g) = model.loss_and_gradients(&x, &y)?;
        total.add_scaled(&g, chunk.len() as f64 / rows.len() as f64);
    }
    Ok(total)
}

/// `(g_w · w)²` for unpruned entries, exactly 0 for pruned ones.
pub fn taylor_importance(gradients: &[f64], weights: &[f64], mask: &[u8]) -> Result<Vec<f64>> {
    if gradients.len() != weights.len() || mask.len() != weights.len() {
        return Err(Error::dim(
            "taylor_importance",
            &[gradients.len(), weights.len()],
            &[mask.len()],
        ));
    }
    Ok(gradients
        .iter()
        .zip(weights)
        .zip(mask)
        .map(|((g, w), &m)| if m == 1 { (g * w) * (g * w) } else { 0.0 })
        .collect())
}

/// Brute-force squared loss change from zeroing one weight on group `k`'s rows.
pub fn exact_importance(
    model: &Model,
    data: &GroupedDataset,
    group: usize,
    layer: usize,
    index: usize,
) -> Result<f64> {
    let l = model
        .layers()
        .get(layer)
        .ok_or_else(|| Error::Contract(format!("layer {layer} out of range")))?;
    if index >= l.len() {
        return Err(Error::Contract(format!(
            "weight {index} out of range for layer {layer} ({} weights)",
            l.len()
        )));
    }
    if l.weights().data()[index] == 0.0 {
        return Ok(0.0);
    }
    let rows = data.group_rows(group);
    if rows.is_empty() {
        return Err(Error::Data(format!("group {group} has no rows")));
    }
    let (x, y) = data.batch(&rows)?;
    let base = model.loss(&x, &y)?;
    let mut probe = model.clone();
    let mut w = probe.layers()[layer].weights().data().to_vec();
    w[index] = 0.0;
    probe.layer_mut(layer).set_weights(&w)?;
    let zeroed = probe.loss(&x, &y)?;
    Ok((base - zeroed).powi(2))
}

/// Normalised group totals.
pub fn shares(totals: &[f64]) -> Result<Vec<f64>> {
    let sum: f64 = totals.iter().sum();
    if !(sum > 0.0) || totals.iter().any(|t| *t < 0.0) {
        return Err(Error::DegenerateImportance(format!(
            "group totals {totals:?} have no positive mass"
        )));
    }
    Ok(totals.iter().map(|t| t / sum).collect())
}

/// Relative change of each group's share against its target.
pub fn share_delta(current: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    if current.len() != target.len() {
        return Err(Error::dim("share_delta", &[current.len()], &[target.len()]));
    }
    if target.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::DegenerateImportance(format!(
            "target shares {target:?} contain a zero share"
        )));
    }
    Ok(current
        .iter()
        .zip(target)
        .map(|(c, t)| (c - t) / t)
        .collect())
}

/// Per-group importance of one layer's weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceTable {
    pub layer_id: usize,
    /// Which dataset groups the rows of `scores` belong to.
    pub group_ids: Vec<usize>,
    /// `[group][weight]`
    pub scores: Vec<Vec<f64>>,
    /// Unpruned weights eligible for selection.
    pub candidates: Vec<bool>,
    pub group_totals: Vec<f64>,
    /// Shares of the candidate weights; `None` when all totals are zero.
    pub shares: Option<Vec<f64>>,
    pub target_shares: Option<Vec<f64>>,
    pub deltas: Option<Vec<f64>>,
}

impl ImportanceTable {
    /// Totals and shares over candidates; targets default to those shares.
    pub fn new(
        layer_id: usize,
        group_ids: Vec<usize>,
        scores: Vec<Vec<f64>>,
        candidates: Vec<bool>,
    ) -> Result<Self> {
        if scores.len() != group_ids.len() || scores.is_empty() {
            return Err(Error::Contract("one score row per group required".into()));
        }
        if scores.iter().any(|s| s.len() != candidates.len()) {
            return Err(Error::Contract(
                "score rows must match the layer size".into(),
            ));
        }
        if scores
            .iter()
            .flatten()
            .any(|s| !(s.is_finite() && *s >= 0.0))
        {
            return Err(Error::Contract(
                "importance scores must be finite and non-negative".into(),
            ));
        }
        let group_totals: Vec<f64> = scores
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&candidates)
                    .filter(|(_, &c)| c)
                    .map(|(s, _)| s)
                    .sum()
            })
            .collect();
        let shares = shares(&group_totals).ok();
        let mut table = ImportanceTable {
            layer_id,
            group_ids,
            scores,
            candidates,
            group_totals,
            shares: shares.clone(),
            target_shares: None,
            deltas: None,
        };
        table.set_target_shares(shares);
        Ok(table)
    }

    pub fn set_target_shares(&mut self, target: Option<Vec<f64>>) {
        self.deltas = match (&self.shares, &target) {
            (Some(s), Some(t)) => share_delta(s, t).ok(),
            _ => None,
        };
        self.target_shares = target;
    }

    pub fn num_groups(&self) -> usize {
        self.scores.len()
    }

    pub fn num_weights(&self) -> usize {
        self.candidates.len()
    }

    pub fn available(&self) -> usize {
        self.candidates.iter().filter(|&&c| c).count()
    }

    /// Multiplies every score by `factor`; shares are unchanged.
    pub fn scaled(&self, factor: f64) -> Result<ImportanceTable> {
        let scores = self
            .scores
            .iter()
            .map(|r| r.iter().map(|s| s * factor).collect())
            .collect();
        let mut t = ImportanceTable::new(
            self.layer_id,
            self.group_ids.clone(),
            scores,
            self.candidates.clone(),
        )?;
        t.set_target_shares(self.target_shares.clone());
        Ok(t)
    }
}

/// Groups with at least one row, in index order.
pub fn present_groups(data: &GroupedDataset) -> Vec<usize> {
    let mut seen = vec![false; data.num_groups()];
    for &g in data.groups() {
        seen[g] = true;
    }
    (0..data.num_groups()).filter(|&g| seen[g]).collect()
}

/// Taylor importance tables for `layers`, one gradient pass per present group.
pub fn importance_tables(
    model: &Model,
    data: &GroupedDataset,
    layers: &[usize],
    config: &ImportanceConfig,
) -> Result<Vec<ImportanceTable>> {
    let groups = present_groups(data);
    if groups.is_empty() {
        return Err(Error::Data("no rows to compute importance on".into()));
    }
    let grads: Vec<Gradients> = groups
        .par_iter()
        .map(|&k| {
            group_gradients(
                model,
                data,
                k,
                config.sample_fraction,
                config.batch_size,
                config.seed,
            )
        })
        .collect::<Result<_>>()?;
    layers
        .iter()
        .map(|&l| {
            let layer = &model.layers()[l];
            let scores = grads
                .iter()
                .map(|g| taylor_importance(&g.weights[l], layer.weights().data(), layer.mask()))
                .collect::<Result<Vec<_>>>()?;
            ImportanceTable::new(
                l,
                groups.clone(),
                scores,
                layer.mask().iter().map(|&m| m == 1).collect(),
            )
        })
        .collect()
}

/// One row of an importance dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRecord {
    pub layer_id: usize,
    pub group: usize,
    pub weight_index: usize,
    pub score: f64,
}

/// CSV with columns `layer_id,group,weight_index,score`.
pub fn write_importance_csv<W: Write>(tables: &[ImportanceTable], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for t in tables {
        for (row, &g) in t.scores.iter().zip(&t.group_ids) {
            for (i, &s) in row.iter().enumerate() {
                w.serialize(ImportanceRecord {
                    layer_id: t.layer_id,
                    group: g,
                    weight_index: i,
                    score: s,
                })?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_importance_csv<R: Read>(reader: R) -> Result<Vec<ImportanceRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let rec: ImportanceRecord = rec?;
        if !(rec.score.is_finite() && rec.score >= 0.0) {
            return Err(Error::Data(format!(
                "invalid importance score {}",
                rec.score
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Architecture;
    use proptest::prelude::*;
    use rand::Rng;

    fn dataset(n: usize, seed: u64) -> GroupedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels = (0..n).map(|i| i % 2).collect();
        let groups = (0..n).map(|i| (i / 2) % 2).collect();
        GroupedDataset::new(
            features,
            3,
            labels,
            groups,
            vec!["a".into(), "b".into()],
            vec!["0".into(), "1".into()],
        )
        .unwrap()
    }

    fn model() -> Model {
        Model::new(
            &Architecture::Mlp {
                input: 3,
                hidden: vec![5],
                classes: 2,
            },
            2,
        )
        .unwrap()
    }

    #[test]
    fn full_fraction_single_batch_is_plain_backward() {
        let d = dataset(40, 0);
        let m = model();
        let g = group_gradients(&m, &d, 1, 1.0, 1000, 0).unwrap();
        let rows = d.group_rows(1);
        let (x, y) = d.batch(&rows).unwrap();
        let (_, direct) = m.loss_and_gradients(&x, &y).unwrap();
        assert_eq!(g, direct);
    }

    #[test]
    fn duplicated_rows_same_gradient() {
        let d = dataset(20, 1);
        let rows: Vec<usize> = (0..d.len()).chain(0..d.len()).collect();
        let doubled = d.subset(&rows);
        let m = model();
        let a = group_gradients(&m, &d, 0, 1.0, 1000, 0).unwrap();
        let b = group_gradients(&m, &doubled, 0, 1.0, 1000, 0).unwrap();
        for (x, y) in a.weights.iter().flatten().zip(b.weights.iter().flatten()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn half_samples_average_to_full_sample() {
        let d = dataset(64, 2);
        let m = model();
        let rows = d.group_rows(0);
        let (lo, hi) = rows.split_at(rows.len() / 2);
        let full = mean_gradients(&m, &d, &rows, 8).unwrap();
        let a = mean_gradients(&m, &d, lo, 8).unwrap();
        let b = mean_gradients(&m, &d, hi, 8).unwrap();
        let mut avg = Gradients::zeros_like(&m);
        avg.add_scaled(&a, 0.5);
        avg.add_scaled(&b, 0.5);
        for (x, y) in avg
            .weights
            .iter()
            .flatten()
            .zip(full.weights.iter().flatten())
        {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn sampling_errors() {
        let d = dataset(8, 0);
        let m = model();
        assert!(group_gradients(&m, &d, 0, 0.0, 4, 0).is_err());
        assert!(group_gradients(&m, &d, 0, 1.5, 4, 0).is_err());
        assert!(group_gradients(&m, &d.restrict_groups(&[1]), 0, 1.0, 4, 0).is_err());
    }

    #[test]
    fn taylor_examples() {
        assert_eq!(taylor_importance(&[2.0], &[3.0], &[1]).unwrap(), vec![36.0]);
        assert_eq!(taylor_importance(&[5.0], &[0.0], &[1]).unwrap(), vec![0.0]);
        assert_eq!(taylor_importance(&[5.0], &[1.0], &[0]).unwrap(), vec![0.0]);
        assert!(taylor_importance(&[1.0], &[1.0, 2.0], &[1, 1]).is_err());
    }

    #[test]
    fn exact_importance_of_zero_weight_is_zero() {
        let d = dataset(10, 0);
        let mut m = model();
        let mut mask = vec![1u8; 15];
        mask[4] = 0;
        m.layer_mut(0).set_mask(mask).unwrap();
        assert_eq!(exact_importance(&m, &d, 0, 0, 4).unwrap(), 0.0);
        assert!(exact_importance(&m, &d, 0, 0, 15).is_err());
        assert!(exact_importance(&m, &d, 0, 9, 0).is_err());
    }

    #[test]
    fn dead_relu_path_has_zero_exact_importance() {
        let d = dataset(10, 3);
        let mut m = model();
        // hidden unit 0 never activates: zero incoming weights, negative bias
        let mut w = m.layers()[0].weights().data().to_vec();
        for i in 0..3 {
            w[i * 5] = 0.0;
        }
        m.layer_mut(0).set_weights(&w).unwrap();
        let mut b = m.layers()[0].bias().data().to_vec();
        b[0] = -1.0;
        m.layer_mut(0).set_bias(&b).unwrap();
        // outgoing weight from the dead unit
        assert_eq!(exact_importance(&m, &d, 1, 1, 0).unwrap(), 0.0);
    }

    #[test]
    fn exact_importance_linear_hand_computation() {
        // one dense layer 4→2 (8 weights), one row: x = [1, 2, 0, -1], label 0
        let arch = Architecture::Mlp {
            input: 4,
            hidden: vec![],
            classes: 2,
        };
        let mut m = Model::new(&arch, 0).unwrap();
        let w = [0.5, -0.5, 0.25, 0.0, 1.0, 1.0, -1.0, 0.5];
        m.layer_mut(0).set_weights(&w).unwrap();
        m.layer_mut(0).set_bias(&[0.0, 0.0]).unwrap();
        let d = GroupedDataset::new(
            vec![1.0, 2.0, 0.0, -1.0],
            4,
            vec![0],
            vec![0],
            vec!["g".into()],
            vec!["0".into(), "1".into()],
        )
        .unwrap();
        // logits: z0 = 0.5 + 0.5 + 0 + 1 = 2.0, z1 = -0.5 + 0 + 0 - 0.5 = -1.0
        let ce = |z0: f64, z1: f64| (z0.exp() + z1.exp()).ln() - z0;
        let base = ce(2.0, -1.0);
        // zeroing w[2] (x1 → class 0, value 0.25) removes 0.5 from z0
        let want = (base - ce(1.5, -1.0)).powi(2);
        let got = exact_importance(&m, &d, 0, 0, 2).unwrap();
        assert!((got - want).abs() < 1e-15);
        // w[6] (x3 → class 0, value -1) times x3 = -1 contributes +1 to z0
        let want = (base - ce(1.0, -1.0)).powi(2);
        assert!((exact_importance(&m, &d, 0, 0, 6).unwrap() - want).abs() < 1e-15);
        // x2 = 0, so weights on it have no effect
        assert_eq!(exact_importance(&m, &d, 0, 0, 4).unwrap(), 0.0);
    }

    #[test]
    fn shares_examples() {
        assert_eq!(shares(&[3.0, 1.0]).unwrap(), vec![0.75, 0.25]);
        let s = shares(&[2.0; 7]).unwrap();
        assert!(s.iter().all(|v| (v - 1.0 / 7.0).abs() < 1e-15));
        assert_eq!(shares(&[30.0, 10.0]).unwrap(), shares(&[3.0, 1.0]).unwrap());
        assert!(matches!(
            shares(&[0.0, 0.0]),
            Err(Error::DegenerateImportance(_))
        ));
    }

    #[test]
    fn delta_examples() {
        assert_eq!(
            share_delta(&[0.3, 0.7], &[0.3, 0.7]).unwrap(),
            vec![0.0, 0.0]
        );
        assert_eq!(
            share_delta(&[0.25, 0.75], &[0.5, 0.5]).unwrap(),
            vec![-0.5, 0.5]
        );
        assert!(share_delta(&[0.5, 0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn table_totals_ignore_pruned_entries() {
        let t = ImportanceTable::new(
            0,
            vec![0, 1],
            vec![vec![1.0, 2.0, 0.0], vec![0.0, 1.0, 0.0]],
            vec![true, false, true],
        )
        .unwrap();
        assert_eq!(t.group_totals, vec![1.0, 0.0]);
        assert_eq!(t.shares, Some(vec![1.0, 0.0]));
        assert_eq!(t.deltas, None);
        assert!(ImportanceTable::new(0, vec![0], vec![vec![-1.0]], vec![true]).is_err());
    }

    #[test]
    fn dump_round_trip() {
        let t = ImportanceTable::new(
            2,
            vec![0, 1],
            vec![vec![1.5, 0.0], vec![0.25, 3.0]],
            vec![true, true],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_importance_csv(&[t], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("layer_id,group,weight_index,score\n"));
        let back = read_importance_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 4);
        assert_eq!(back[3].score, 3.0);
    }

    proptest! {
        #[test]
        fn shares_sum_to_one_and_are_scale_invariant(
            totals in proptest::collection::vec(0.0f64..100.0, 1..8),
            scale in 1e-6f64..1e6,
        ) {
            prop_assume!(totals.iter().sum::<f64>() > 1e-9);
            let s = shares(&totals).unwrap();
            prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let scaled: Vec<f64> = totals.iter().map(|t| t * scale).collect();
            let s2 = shares(&scaled).unwrap();
            for (a, b) in s.iter().zip(&s2) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn weighted_deltas_sum_to_zero(
            a in proptest::collection::vec(0.01f64..1.0, 2..6),
            b in proptest::collection::vec(0.01f64..1.0, 2..6),
        ) {
            let n = a.len().min(b.len());
            let cur = shares(&a[..n]).unwrap();
            let tgt = shares(&b[..n]).unwrap();
            let d = share_delta(&cur, &tgt).unwrap();
            let s: f64 = d.iter().zip(&tgt).map(|(x, t)| x * t).sum();
            prop_assert!(s.abs() < 1e-12);
        }
    }
}
