use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::RunManifest;
use crate::error::{Error, Result};
use crate::metrics::{accuracy_spread, Evaluation, FairnessReport};
use crate::pruners::Method;
use crate::stats::median;

pub const NO_PRUNING: &str = "No-pruning";

/// One table row: medians across the run's seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub sparsity: Option<f64>,
    pub overall: f64,
    pub groups: Vec<Option<f64>>,
    pub rho_accuracy: f64,
    /// Blank for the unpruned row.
    pub rho_delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub group_names: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

fn median_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| median(&v))
}

fn eval_row(
    label: String,
    sparsity: Option<f64>,
    evals: &[&Evaluation],
    rho_delta: Option<f64>,
) -> ComparisonRow {
    let k = evals[0].groups.len();
    ComparisonRow {
        label,
        sparsity,
        overall: median(&evals.iter().map(|e| e.overall.accuracy).collect::<Vec<_>>()),
        groups: (0..k)
            .map(|g| median_of(evals.iter().map(|e| e.group_accuracy(g))))
            .collect(),
        rho_accuracy: median(&evals.iter().map(|e| accuracy_spread(e)).collect::<Vec<_>>()),
        rho_delta,
    }
}

/// Builds the comparison from finished runs. Rows are ordered by sparsity,
/// then method, so the input order does not matter; the unpruned row comes
/// first and uses the reference models of the first run in that order.
pub fn compare_runs(runs: &[(RunManifest, Vec<FairnessReport>)]) -> Result<Comparison> {
    let mut order: Vec<usize> = (0..runs.len()).filter(|&i| !runs[i].1.is_empty()).collect();
    if order.is_empty() {
        return Err(Error::Data("no finished seeds to compare".into()));
    }
    let rank = |m: Method| {
        Method::ALL
            .iter()
            .position(|&x| x == m)
            .unwrap_or(usize::MAX)
    };
    order.sort_by(|&a, &b| {
        let (ma, mb) = (&runs[a].0, &runs[b].0);
        ma.sparsity
            .total_cmp(&mb.sparsity)
            .then(rank(ma.method).cmp(&rank(mb.method)))
            .then(ma.config_hash.cmp(&mb.config_hash))
    });
    let names: Vec<String> = runs[order[0]].1[0]
        .reference
        .groups
        .iter()
        .map(|g| g.name.clone())
        .collect();
    for &i in &order {
        for r in &runs[i].1 {
            if r.pruned.groups.iter().map(|g| &g.name).ne(names.iter()) {
                return Err(Error::Data(format!(
                    "run {} seed {} has groups that differ from {names:?}",
                    runs[i].0.method.as_str(),
                    r.seed
                )));
            }
        }
    }
    let first = &runs[order[0]].1;
    let mut rows = vec![eval_row(
        NO_PRUNING.into(),
        None,
        &first.iter().map(|r| &r.reference).collect::<Vec<_>>(),
        None,
    )];
    for &i in &order {
        let (m, reports) = &runs[i];
        let rho = median(&reports.iter().map(|r| r.bias.rho_delta).collect::<Vec<_>>());
        rows.push(eval_row(
            m.method.as_str().into(),
            Some(m.sparsity),
            &reports.iter().map(|r| &r.pruned).collect::<Vec<_>>(),
            Some(rho),
        ));
    }
    Ok(Comparison {
        group_names: names,
        rows,
    })
}

/// Loads each run directory's manifest and seed reports.
pub fn compare_dirs<P: AsRef<Path>>(dirs: &[P]) -> Result<Comparison> {
    let runs = dirs
        .iter()
        .map(|d| {
            let m = RunManifest::load(d.as_ref())?;
            let reports = m.reports(d.as_ref())?;
            Ok((m, reports))
        })
        .collect::<Result<Vec<_>>>()?;
    compare_runs(&runs)
}

impl Comparison {
    fn header(&self) -> Vec<String> {
        let mut h = vec!["method".to_string(), "sparsity".into(), "all".into()];
        h.extend(self.group_names.iter().cloned());
        h.push("rho_accuracy".into());
        h.push("rho_delta".into());
        h
    }

    fn cells(&self, blank: &str) -> Vec<Vec<String>> {
        let f = |v: Option<f64>| {
            v.map(|x| format!("{x:.2}"))
                .unwrap_or_else(|| blank.to_string())
        };
        self.rows
            .iter()
            .map(|r| {
                let mut c = vec![
                    r.label.clone(),
                    r.sparsity
                        .map(|s| s.to_string())
                        .unwrap_or_else(|| blank.into()),
                ];
                c.push(f(Some(r.overall)));
                c.extend(r.groups.iter().map(|&g| f(g)));
                c.push(f(Some(r.rho_accuracy)));
                c.push(f(r.rho_delta));
                c
            })
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header())?;
        for row in self.cells("") {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
    }

    /// Whitespace-aligned table; missing values print as `-`.
    pub fn to_text(&self) -> String {
        let mut table = vec![self.header()];
        table.extend(self.cells("-"));
        let widths: Vec<usize> = (0..table[0].len())
            .map(|j| table.iter().map(|r| r[j].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &table {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(j, c)| {
                    if j == 0 {
                        format!("{c:<w$}", w = widths[j])
                    } else {
                        format!("{c:>w$}", w = widths[j])
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}
