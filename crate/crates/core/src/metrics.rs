//! Group-wise accuracy and error rates, and the bias statistics built on them.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::GroupedDataset;
use crate::error::{Error, Result};
use crate::network::Model;
use crate::stats::{mean, population_std, population_variance};

/// One-vs-rest counts for one class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
}

impl Confusion {
    pub fn fnr(&self) -> Option<f64> {
        let p = self.tp + self.fn_;
        (p > 0).then(|| self.fn_ as f64 / p as f64)
    }

    pub fn fpr(&self) -> Option<f64> {
        let n = self.tn + self.fp;
        (n > 0).then(|| self.fp as f64 / n as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        self.fnr().map(|f| 1.0 - f)
    }
}

/// Metrics over a set of rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub count: usize,
    /// Percent correct.
    pub accuracy: f64,
    /// Class 1 as positive for two classes, macro one-vs-rest otherwise.
    /// `None` when no class has the rows to define it.
    pub fnr: Option<f64>,
    pub fpr: Option<f64>,
    pub per_class: Vec<Confusion>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: usize,
    pub name: String,
    /// `None` when the partition has no rows of this group.
    pub metrics: Option<Metrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub overall: Metrics,
    pub groups: Vec<GroupMetrics>,
}

impl Evaluation {
    pub fn group_accuracy(&self, k: usize) -> Option<f64> {
        self.groups.get(k)?.metrics.as_ref().map(|m| m.accuracy)
    }
}

fn macro_rate(per_class: &[Confusion], rate: fn(&Confusion) -> Option<f64>) -> Option<f64> {
    if per_class.len() == 2 {
        return rate(&per_class[1]);
    }
    let defined: Vec<f64> = per_class.iter().filter_map(rate).collect();
    (!defined.is_empty()).then(|| mean(&defined))
}

/// Metrics from parallel label/prediction slices.
pub fn metrics_from(labels: &[usize], predictions: &[usize], classes: usize) -> Result<Metrics> {
    if labels.len() != predictions.len() {
        return Err(Error::dim("metrics", &[labels.len()], &[predictions.len()]));
    }
    if labels.is_empty() {
        return Err(Error::Data("no rows to evaluate".into()));
    }
    let mut per_class = vec![Confusion::default(); classes];
    let mut correct = 0;
    for (&y, &p) in labels.iter().zip(predictions) {
        if y >= classes || p >= classes {
            return Err(Error::Data(format!("class index out of range ({y}, {p})")));
        }
        correct += (y == p) as usize;
        for (c, conf) in per_class.iter_mut().enumerate() {
            match (y == c, p == c) {
                (true, true) => conf.tp += 1,
                (true, false) => conf.fn_ += 1,
                (false, true) => conf.fp += 1,
                (false, false) => conf.tn += 1,
            }
        }
    }
    Ok(Metrics {
        count: labels.len(),
        accuracy: 100.0 * correct as f64 / labels.len() as f64,
        fnr: macro_rate(&per_class, Confusion::fnr),
        fpr: macro_rate(&per_class, Confusion::fpr),
        per_class,
    })
}

/// Overall and per-group metrics of `model` on `data`.
pub fn evaluate(model: &Model, data: &GroupedDataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty partition".into()));
    }
    let predictions = model.predict(&data.feature_tensor()?)?;
    evaluate_predictions(data, &predictions)
}

pub fn evaluate_predictions(data: &GroupedDataset, predictions: &[usize]) -> Result<Evaluation> {
    let classes = data.num_classes();
    let overall = metrics_from(data.labels(), predictions, classes)?;
    let groups = (0..data.num_groups())
        .map(|k| {
            let rows = data.group_rows(k);
            let metrics = if rows.is_empty() {
                None
            } else {
                let y: Vec<usize> = rows.iter().map(|&r| data.labels()[r]).collect();
                let p: Vec<usize> = rows.iter().map(|&r| predictions[r]).collect();
                Some(metrics_from(&y, &p, classes)?)
            };
            Ok(GroupMetrics {
                group: k,
                name: data.group_names()[k].clone(),
                metrics,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Evaluation { overall, groups })
}

/// Accuracy changes of a pruned model against its reference, per group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasStats {
    /// Groups present in both evaluations, in index order.
    pub groups: Vec<usize>,
    pub group_deltas: Vec<f64>,
    pub overall_delta: f64,
    pub mean_delta: f64,
    pub variance: f64,
    /// Std-dev of the pruned model's group accuracies.
    pub rho_accuracy: f64,
    /// Std-dev of the group accuracy changes.
    pub rho_delta: f64,
}

fn present(e: &Evaluation) -> Vec<(usize, String, f64)> {
    e.groups
        .iter()
        .filter_map(|g| {
            g.metrics
                .as_ref()
                .map(|m| (g.group, g.name.clone(), m.accuracy))
        })
        .collect()
}

fn check_groups(pruned: &Evaluation, reference: &Evaluation) -> Result<()> {
    let a: Vec<_> = pruned
        .groups
        .iter()
        .map(|g| (g.group, &g.name, g.metrics.is_some()))
        .collect();
    let b: Vec<_> = reference
        .groups
        .iter()
        .map(|g| (g.group, &g.name, g.metrics.is_some()))
        .collect();
    if a != b {
        return Err(Error::Data("evaluations cover different group sets".into()));
    }
    Ok(())
}

pub fn bias_stats(pruned: &Evaluation, reference: &Evaluation) -> Result<BiasStats> {
    check_groups(pruned, reference)?;
    let p = present(pruned);
    let r = present(reference);
    if p.is_empty() {
        return Err(Error::Data("no groups to compare".into()));
    }
    let deltas: Vec<f64> = p.iter().zip(&r).map(|(a, b)| a.2 - b.2).collect();
    let accs: Vec<f64> = p.iter().map(|a| a.2).collect();
    Ok(BiasStats {
        groups: p.iter().map(|a| a.0).collect(),
        overall_delta: pruned.overall.accuracy - reference.overall.accuracy,
        mean_delta: mean(&deltas),
        variance: population_variance(&deltas),
        rho_accuracy: population_std(&accs),
        rho_delta: population_std(&deltas),
        group_deltas: deltas,
    })
}

/// Std-dev of group accuracies of a single evaluation.
pub fn accuracy_spread(e: &Evaluation) -> f64 {
    let accs: Vec<f64> = present(e).iter().map(|a| a.2).collect();
    population_std(&accs)
}

/// Error-rate change of one group, relative to the reference rate when it is nonzero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateChange {
    pub group: usize,
    pub name: String,
    pub fnr_change: Option<f64>,
    /// False when the reference rate was 0 and `fnr_change` is absolute.
    pub fnr_normalized: bool,
    pub fpr_change: Option<f64>,
    pub fpr_normalized: bool,
}

fn rate_change(new: Option<f64>, old: Option<f64>) -> (Option<f64>, bool) {
    match (new, old) {
        (Some(n), Some(o)) if o != 0.0 => (Some((n - o) / o), true),
        (Some(n), Some(o)) => (Some(n - o), false),
        _ => (None, false),
    }
}

pub fn normalized_rate_changes(
    pruned: &Evaluation,
    reference: &Evaluation,
) -> Result<Vec<RateChange>> {
    check_groups(pruned, reference)?;
    Ok(pruned
        .groups
        .iter()
        .zip(&reference.groups)
        .map(|(p, r)| {
            let get = |g: &GroupMetrics| g.metrics.as_ref().map(|m| (m.fnr, m.fpr));
            let (pf, pp) = get(p).unwrap_or((None, None));
            let (rf, rp) = get(r).unwrap_or((None, None));
            let (fnr_change, fnr_normalized) = rate_change(pf, rf);
            let (fpr_change, fpr_normalized) = rate_change(pp, rp);
            RateChange {
                group: p.group,
                name: p.name.clone(),
                fnr_change,
                fnr_normalized,
                fpr_change,
                fpr_normalized,
            }
        })
        .collect())
}

pub fn write_rate_changes_csv<W: Write>(changes: &[RateChange], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "group",
        "name",
        "fnr_change",
        "fnr_normalized",
        "fpr_change",
        "fpr_normalized",
    ])?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in changes {
        w.write_record([
            c.group.to_string(),
            c.name.clone(),
            cell(c.fnr_change),
            c.fnr_normalized.to_string(),
            cell(c.fpr_change),
            c.fpr_normalized.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Everything measured in one seeded prune run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub method: String,
    /// Fraction of weights removed.
    pub sparsity: f64,
    pub seed: u64,
    pub reference: Evaluation,
    pub pruned: Evaluation,
    pub bias: BiasStats,
    pub rate_changes: Vec<RateChange>,
}

impl FairnessReport {
    pub fn new(
        method: &str,
        sparsity: f64,
        seed: u64,
        reference: Evaluation,
        pruned: Evaluation,
    ) -> Result<Self> {
        let bias = bias_stats(&pruned, &reference)?;
        let rate_changes = normalized_rate_changes(&pruned, &reference)?;
        Ok(FairnessReport {
            method: method.to_string(),
            sparsity,
            seed,
            reference,
            pruned,
            bias,
            rate_changes,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// `(group, metric, value)` triples; group `all` holds overall and spread values.
    pub fn flat_rows(&self) -> Vec<(String, String, f64)> {
        let mut rows = Vec::new();
        let mut push = |g: &str, m: &str, v: Option<f64>| {
            if let Some(v) = v {
                rows.push((g.to_string(), m.to_string(), v));
            }
        };
        for (tag, e) in [("reference", &self.reference), ("pruned", &self.pruned)] {
            push("all", &format!("{tag}_accuracy"), Some(e.overall.accuracy));
            push("all", &format!("{tag}_fnr"), e.overall.fnr);
            push("all", &format!("{tag}_fpr"), e.overall.fpr);
            for g in &e.groups {
                if let Some(m) = &g.metrics {
                    push(&g.name, &format!("{tag}_accuracy"), Some(m.accuracy));
                    push(&g.name, &format!("{tag}_fnr"), m.fnr);
                    push(&g.name, &format!("{tag}_fpr"), m.fpr);
                }
            }
        }
        for (&k, &d) in self.bias.groups.iter().zip(&self.bias.group_deltas) {
            push(&self.pruned.groups[k].name, "delta_accuracy", Some(d));
        }
        push("all", "delta_accuracy", Some(self.bias.overall_delta));
        push("all", "mean_delta", Some(self.bias.mean_delta));
        push("all", "variance", Some(self.bias.variance));
        push("all", "rho_accuracy", Some(self.bias.rho_accuracy));
        push("all", "rho_delta", Some(self.bias.rho_delta));
        rows
    }
}

/// Flat CSV `method,sparsity,seed,group,metric,value` over many reports.
pub fn write_flat_csv<W: Write>(reports: &[FairnessReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "sparsity", "seed", "group", "metric", "value"])?;
    for r in reports {
        for (g, m, v) in r.flat_rows() {
            w.write_record([
                r.method.clone(),
                r.sparsity.to_string(),
                r.seed.to_string(),
                g,
                m,
                v.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
