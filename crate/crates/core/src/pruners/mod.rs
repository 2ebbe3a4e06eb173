//! Fairness-aware group importance pruning and four baselines, all driven by
//! the same iterative prune/retrain schedule.

mod baselines;
mod fairgrape;
mod trace;

pub use baselines::{
    grasp_prune, grasp_scores, hessian_direction_product, hessian_gradient_product, lottery_prune,
    magnitude_prune, magnitude_select, snip_prune, snip_scores, top_k_global, top_k_layer,
};
pub use fairgrape::{fairgrape_prune, fairgrape_select_layer, DELTA_TIE_TOLERANCE};
pub use trace::{parse_trace_csv, write_trace_csv, LayerTrace, SelectionStep, TraceRow};

use serde::{Deserialize, Serialize};

use crate::data::{pseudo_groups, GroupedDataset};
use crate::error::{Error, Result};
use crate::importance::ImportanceConfig;
use crate::network::{train, AdamConfig, Model, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fairgrape,
    Magnitude,
    Snip,
    Grasp,
    Lottery,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Fairgrape,
        Method::Magnitude,
        Method::Snip,
        Method::Grasp,
        Method::Lottery,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Fairgrape => "fairgrape",
            Method::Magnitude => "magnitude",
            Method::Snip => "snip",
            Method::Grasp => "grasp",
            Method::Lottery => "lottery",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.as_str() == s)
    }

    /// Single-shot methods prune once and retrain for the whole budget.
    pub fn is_single_shot(&self) -> bool {
        matches!(self, Method::Snip | Method::Grasp)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GroupSource {
    TrueLabels,
    PseudoKmeans { k: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetShares {
    /// Shares of the unpruned reference model, fixed for the whole run.
    Original,
    /// Shares of the current layer, recomputed before every layer pass.
    Current,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub method: Method,
    /// Fraction of weights kept at the end, `c`.
    pub target_keep: f64,
    /// Fraction of remaining weights removed per iteration, `r`.
    pub step_prune_fraction: f64,
    pub retrain_epochs: usize,
    pub importance_sample_fraction: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub group_source: GroupSource,
    pub target_shares: TargetShares,
    /// Restricts importance to these groups' rows (`None` uses all groups).
    pub importance_groups: Option<Vec<usize>>,
    pub adam: AdamConfig,
    pub kmeans_iters: usize,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            method: Method::Fairgrape,
            target_keep: 0.1,
            step_prune_fraction: 0.1,
            retrain_epochs: 5,
            importance_sample_fraction: 0.2,
            batch_size: 64,
            seed: 0,
            group_source: GroupSource::TrueLabels,
            target_shares: TargetShares::Current,
            importance_groups: None,
            adam: AdamConfig::default(),
            kmeans_iters: 100,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_keep > 0.0 && self.target_keep < 1.0) {
            return Err(Error::Config(format!(
                "target_keep must be in (0, 1), got {}",
                self.target_keep
            )));
        }
        if !(self.step_prune_fraction > 0.0 && self.step_prune_fraction < 1.0) {
            return Err(Error::Config(format!(
                "step_prune_fraction must be in (0, 1), got {}",
                self.step_prune_fraction
            )));
        }
        if !(self.importance_sample_fraction > 0.0 && self.importance_sample_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "importance_sample_fraction must be in (0, 1], got {}",
                self.importance_sample_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if let GroupSource::PseudoKmeans { k } = self.group_source {
            if k == 0 {
                return Err(Error::Config("pseudo_kmeans needs k >= 1".into()));
            }
        }
        if let Some(g) = &self.importance_groups {
            if g.is_empty() {
                return Err(Error::Config("importance_groups must not be empty".into()));
            }
        }
        Ok(())
    }

    pub fn iterations(&self) -> Result<usize> {
        compute_iterations(self.step_prune_fraction, self.target_keep)
    }

    pub(crate) fn importance(&self, iteration: usize) -> ImportanceConfig {
        ImportanceConfig {
            sample_fraction: self.importance_sample_fraction,
            batch_size: self.batch_size,
            seed: derive_seed(self.seed, 1, iteration),
        }
    }

    pub(crate) fn retrain(&self, iteration: usize, epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: self.batch_size,
            seed: derive_seed(self.seed, 2, iteration),
            adam: self.adam,
        }
    }
}

/// Independent seed for one random stream of a run: 1 importance sampling,
/// 2 retraining, 3 k-means, 4 single-shot scoring batch.
pub fn derive_seed(seed: u64, stream: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ stream.wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (index as u64)
            .wrapping_add(1)
            .wrapping_mul(0x1656_67B1_9E37_79F9)
}

/// Number of prune/retrain rounds so that `(1 - r)^Iters <= c`.
pub fn compute_iterations(r: f64, c: f64) -> Result<usize> {
    if !(r > 0.0 && r < 1.0 && c > 0.0 && c < 1.0) {
        return Err(Error::Config(format!(
            "r and c must lie in (0, 1), got r = {r}, c = {c}"
        )));
    }
    let raw = c.ln() / (1.0 - r).ln();
    // absorb rounding noise in exact powers such as c = (1 - r)^n
    Ok(((raw - 1e-9).ceil() as usize).max(1))
}

/// Final kept count per layer: `round(c·m)` split by largest remainder.
pub fn layer_targets(sizes: &[usize], c: f64) -> Vec<usize> {
    let m: usize = sizes.iter().sum();
    let total = (c * m as f64).round() as usize;
    let exact: Vec<f64> = sizes.iter().map(|&s| c * s as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - out[a] as f64;
        let rb = exact[b] - out[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut assigned: usize = out.iter().sum();
    for &i in order.iter().cycle().take(sizes.len() * 2) {
        if assigned >= total {
            break;
        }
        if out[i] < sizes[i] {
            out[i] += 1;
            assigned += 1;
        }
    }
    out
}

/// Kept count for a layer after `iteration` (0-based) of `iters` rounds.
pub fn keep_count(
    remaining: usize,
    target: usize,
    r: f64,
    iteration: usize,
    iters: usize,
) -> usize {
    if iteration + 1 >= iters {
        return target.min(remaining);
    }
    let step = (remaining as f64 * (1.0 - r)).round() as usize;
    step.max(target).min(remaining)
}

/// Per-iteration summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub kept_per_layer: Vec<usize>,
    pub kept_fraction: f64,
    pub retrain_losses: Vec<f64>,
    /// Layers that fell back to magnitude selection.
    pub fallback_layers: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct PruneOutcome {
    pub model: Model,
    /// Selection traces per iteration (FairGRAPE only).
    pub traces: Vec<Vec<LayerTrace>>,
    pub reports: Vec<IterationReport>,
    /// The model after each iteration's retraining.
    pub iteration_models: Vec<Model>,
}

pub(crate) fn report(
    model: &Model,
    iteration: usize,
    losses: Vec<f64>,
    fallback: Vec<usize>,
) -> IterationReport {
    IterationReport {
        iteration,
        kept_per_layer: model.layers().iter().map(|l| l.kept()).collect(),
        kept_fraction: model.kept_weights() as f64 / model.num_weights() as f64,
        retrain_losses: losses,
        fallback_layers: fallback,
    }
}

pub(crate) fn retrain(
    model: &mut Model,
    data: &GroupedDataset,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    Ok(train(model, data, cfg)?.epoch_losses)
}

/// The rows importance is computed on, with pseudo groups swapped in if asked for.
pub fn importance_data(
    model: &Model,
    data: &GroupedDataset,
    config: &PruneConfig,
) -> Result<GroupedDataset> {
    let grouped = match config.group_source {
        GroupSource::TrueLabels => data.clone(),
        GroupSource::PseudoKmeans { k } => {
            pseudo_groups(
                data,
                model,
                k,
                derive_seed(config.seed, 3, 0),
                config.kmeans_iters,
            )?
            .dataset
        }
    };
    Ok(match &config.importance_groups {
        Some(keep) => {
            let d = grouped.restrict_groups(keep);
            if d.is_empty() {
                return Err(Error::Data(format!(
                    "no rows in importance groups {keep:?}"
                )));
            }
            d
        }
        None => grouped,
    })
}

/// Runs `config.method` on a trained model using `data` as the training set.
pub fn prune(model: &Model, data: &GroupedDataset, config: &PruneConfig) -> Result<PruneOutcome> {
    config.validate()?;
    match config.method {
        Method::Fairgrape => fairgrape_prune(model, data, config),
        Method::Magnitude => magnitude_prune(model, data, config),
        Method::Snip => snip_prune(model, data, config),
        Method::Grasp => grasp_prune(model, data, config),
        Method::Lottery => lottery_prune(model, data, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn iteration_examples() {
        assert_eq!(compute_iterations(0.1, 0.1).unwrap(), 22);
        assert_eq!(compute_iterations(0.9, 0.1).unwrap(), 1);
        assert_eq!(compute_iterations(0.5, 0.1).unwrap(), 4);
        assert_eq!(compute_iterations(0.5, 0.25).unwrap(), 2);
        assert!(compute_iterations(0.0, 0.5).is_err());
        assert!(compute_iterations(0.5, 1.0).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.as_str()), Some(m));
        }
        assert_eq!(Method::parse("ws"), None);
    }

    #[test]
    fn layer_targets_examples() {
        assert_eq!(layer_targets(&[10, 10], 0.25), vec![3, 2]);
        assert_eq!(layer_targets(&[100, 7], 0.1), vec![10, 1]);
        assert_eq!(layer_targets(&[5], 0.999999), vec![5]);
    }

    #[test]
    fn final_iteration_lands_on_target() {
        assert_eq!(keep_count(100, 10, 0.1, 21, 22), 10);
        assert_eq!(keep_count(100, 10, 0.1, 0, 22), 90);
        assert_eq!(keep_count(11, 10, 0.1, 3, 22), 10);
    }

    proptest! {
        #[test]
        fn targets_are_within_one_and_sum_exactly(
            sizes in proptest::collection::vec(1usize..500, 1..6),
            c in 0.01f64..0.99,
        ) {
            let t = layer_targets(&sizes, c);
            let m: usize = sizes.iter().sum();
            prop_assert_eq!(t.iter().sum::<usize>(), (c * m as f64).round() as usize);
            for (ti, &s) in t.iter().zip(&sizes) {
                prop_assert!((*ti as f64 - c * s as f64).abs() <= 1.0);
                prop_assert!(*ti <= s);
            }
        }

        #[test]
        fn schedule_reaches_c(r in 0.01f64..0.99, c in 0.01f64..0.99) {
            let n = compute_iterations(r, c).unwrap();
            prop_assert!((1.0 - r).powi(n as i32) <= c * (1.0 + 1e-6));
            if n > 1 {
                prop_assert!((1.0 - r).powi(n as i32 - 1) > c * (1.0 - 1e-6));
            }
        }
    }
}
