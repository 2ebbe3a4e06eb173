use log::warn;

use super::trace::{LayerTrace, SelectionStep};
use super::{
    importance_data, keep_count, layer_targets, magnitude_select, report, retrain, PruneConfig,
    PruneOutcome, TargetShares,
};
use crate::data::GroupedDataset;
use crate::error::{Error, Result};
use crate::importance::{importance_tables, ImportanceTable};
use crate::network::Model;

/// Deltas closer than this (relative to their size) count as tied, so that
/// rounding noise from rescaled scores cannot reorder groups.
pub const DELTA_TIE_TOLERANCE: f64 = 1e-12;

/// `a` is smaller than `b` by more than the tie tolerance.
pub fn lower(a: f64, b: f64) -> bool {
    a < b - DELTA_TIE_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

/// Greedy group-balanced selection of `keep_count` candidates of one layer.
///
/// Each step picks the group whose share of selected importance lags its
/// target the most, then that group's best remaining weight. A selected
/// weight adds its score to every group's running total. Tied groups go to
/// the lowest index, tied weights likewise.
pub fn fairgrape_select_layer(
    table: &ImportanceTable,
    keep_count: usize,
) -> Result<(Vec<u8>, LayerTrace)> {
    let available = table.available();
    if keep_count > available {
        return Err(Error::Contract(format!(
            "cannot keep {keep_count} weights in layer {} with {available} unpruned",
            table.layer_id
        )));
    }
    let target = match &table.target_shares {
        Some(t) if t.len() == table.num_groups() && t.iter().all(|&p| p > 0.0) => t.clone(),
        _ => {
            return Err(Error::DegenerateImportance(format!(
                "layer {} has no usable target shares",
                table.layer_id
            )))
        }
    };
    let k = table.num_groups();
    // each group's candidates by descending score, ties by index
    let orders: Vec<Vec<usize>> = table
        .scores
        .iter()
        .map(|row| {
            let mut idx: Vec<usize> = (0..row.len()).filter(|&w| table.candidates[w]).collect();
            idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            idx
        })
        .collect();
    let mut cursor = vec![0usize; k];
    let mut selected = vec![false; table.num_weights()];
    let mut totals = vec![0.0f64; k];
    let mut steps = Vec::with_capacity(keep_count);
    for step in 0..keep_count {
        let sum: f64 = totals.iter().sum();
        let deltas: Vec<f64> = (0..k)
            .map(|g| {
                let share = if sum > 0.0 {
                    totals[g] / sum
                } else {
                    1.0 / k as f64
                };
                (share - target[g]) / target[g]
            })
            .collect();
        let mut chosen = 0;
        for g in 1..k {
            if lower(deltas[g], deltas[chosen]) {
                chosen = g;
            }
        }
        while selected[orders[chosen][cursor[chosen]]] {
            cursor[chosen] += 1;
        }
        let w = orders[chosen][cursor[chosen]];
        selected[w] = true;
        for (t, row) in totals.iter_mut().zip(&table.scores) {
            *t += row[w];
        }
        steps.push(SelectionStep {
            step,
            group: table.group_ids[chosen],
            weight_index: w,
            deltas,
        });
    }
    let mask = selected.iter().map(|&s| s as u8).collect();
    Ok((
        mask,
        LayerTrace {
            layer_id: table.layer_id,
            group_ids: table.group_ids.clone(),
            steps,
        },
    ))
}

/// Iterative layer-wise prune/retrain driven by group importance shares.
pub fn fairgrape_prune(
    model: &Model,
    data: &GroupedDataset,
    config: &PruneConfig,
) -> Result<PruneOutcome> {
    config.validate()?;
    let iters = config.iterations()?;
    let sizes: Vec<usize> = model.layers().iter().map(|l| l.len()).collect();
    let targets = layer_targets(&sizes, config.target_keep);
    let imp_data = importance_data(model, data, config)?;
    let all_layers: Vec<usize> = (0..sizes.len()).collect();
    let original: Option<Vec<Option<Vec<f64>>>> = match config.target_shares {
        TargetShares::Original => Some(
            importance_tables(model, &imp_data, &all_layers, &config.importance(0))?
                .into_iter()
                .map(|t| t.shares)
                .collect(),
        ),
        TargetShares::Current => None,
    };

    let mut current = model.clone();
    let mut traces = Vec::with_capacity(iters);
    let mut reports = Vec::with_capacity(iters);
    let mut snapshots = Vec::with_capacity(iters);
    for it in 0..iters {
        let mut layer_traces = Vec::new();
        let mut fallback = Vec::new();
        for l in 0..sizes.len() {
            let remaining = current.layers()[l].kept();
            let keep = keep_count(remaining, targets[l], config.step_prune_fraction, it, iters);
            let mut table = importance_tables(&current, &imp_data, &[l], &config.importance(it))?
                .pop()
                .expect("one table per requested layer");
            if let Some(orig) = &original {
                table.set_target_shares(orig[l].clone());
            }
            let mask = match fairgrape_select_layer(&table, keep) {
                Ok((mask, trace)) => {
                    layer_traces.push(trace);
                    mask
                }
                Err(Error::DegenerateImportance(msg)) => {
                    warn!("iteration {it}: {msg}; using magnitude selection");
                    fallback.push(l);
                    magnitude_select(&current.layers()[l], keep)?
                }
                Err(e) => return Err(e),
            };
            current.layer_mut(l).set_mask(mask)?;
        }
        let losses = retrain(
            &mut current,
            data,
            &config.retrain(it, config.retrain_epochs),
        )?;
        reports.push(report(&current, it, losses, fallback));
        traces.push(layer_traces);
        snapshots.push(current.clone());
    }
    Ok(PruneOutcome {
        model: current,
        traces,
        reports,
        iteration_models: snapshots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table(scores: Vec<Vec<f64>>) -> ImportanceTable {
        let n = scores[0].len();
        let k = scores.len();
        ImportanceTable::new(0, (0..k).collect(), scores, vec![true; n]).unwrap()
    }

    #[test]
    fn hand_example() {
        let t = table(vec![vec![10.0, 1.0, 1.0], vec![1.0, 1.0, 10.0]]);
        let (mask, trace) = fairgrape_select_layer(&t, 2).unwrap();
        assert_eq!(mask, vec![1, 0, 1]);
        assert_eq!(trace.selected(), vec![0, 2]);
        assert_eq!(trace.steps[0].group, 0);
        assert_eq!(trace.steps[1].group, 1);
        // equal targets and equal start: both deltas are zero, group 0 wins the tie
        assert_eq!(trace.steps[0].deltas, vec![0.0, 0.0]);
    }

    #[test]
    fn single_group_is_top_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scores: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..1.0)).collect();
        let t = table(vec![scores.clone()]);
        let (mask, _) = fairgrape_select_layer(&t, 7).unwrap();
        let mut idx: Vec<usize> = (0..20).collect();
        idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let mut want = vec![0u8; 20];
        for &i in &idx[..7] {
            want[i] = 1;
        }
        assert_eq!(mask, want);
    }

    #[test]
    fn only_candidates_are_selected() {
        let t = ImportanceTable::new(
            3,
            vec![0, 1],
            vec![vec![9.0, 1.0, 2.0, 3.0], vec![9.0, 4.0, 1.0, 1.0]],
            vec![false, true, true, true],
        )
        .unwrap();
        let (mask, trace) = fairgrape_select_layer(&t, 3).unwrap();
        assert_eq!(mask, vec![0, 1, 1, 1]);
        assert_eq!(trace.layer_id, 3);
        assert!(fairgrape_select_layer(&t, 4).is_err());
    }

    #[test]
    fn zero_target_share_is_degenerate() {
        let t = table(vec![vec![1.0, 2.0], vec![0.0, 0.0]]);
        assert!(matches!(
            fairgrape_select_layer(&t, 1),
            Err(Error::DegenerateImportance(_))
        ));
        let z = table(vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert!(matches!(
            fairgrape_select_layer(&z, 1),
            Err(Error::DegenerateImportance(_))
        ));
    }

    #[test]
    fn near_equal_deltas_tie() {
        assert!(!lower(1.0, 1.0 + 1e-14));
        assert!(lower(1.0, 1.0 + 1e-9));
        assert!(!lower(-3e6, -3e6 + 1e-8));
    }

    #[test]
    fn keep_zero_and_keep_all() {
        let t = table(vec![vec![1.0, 2.0, 3.0], vec![3.0, 2.0, 1.0]]);
        assert_eq!(fairgrape_select_layer(&t, 0).unwrap().0, vec![0, 0, 0]);
        assert_eq!(fairgrape_select_layer(&t, 3).unwrap().0, vec![1, 1, 1]);
    }

    #[test]
    fn chosen_group_has_minimal_delta_at_every_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let scores = (0..3)
                .map(|_| (0..16).map(|_| rng.random_range(0.0..5.0)).collect())
                .collect();
            let t = table(scores);
            let (_, trace) = fairgrape_select_layer(&t, 10).unwrap();
            for s in &trace.steps {
                let min = s.deltas.iter().cloned().fold(f64::INFINITY, f64::min);
                assert!(!lower(min, s.deltas[s.group]));
                assert!(s.deltas[..s.group]
                    .iter()
                    .all(|&d| lower(s.deltas[s.group], d)));
            }
        }
    }
}
