use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One greedy pick: the group with the lowest share delta and its best weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub step: usize,
    /// Dataset group id of the chosen group.
    pub group: usize,
    pub weight_index: usize,
    /// Share deltas of every group just before this pick.
    pub deltas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub layer_id: usize,
    pub group_ids: Vec<usize>,
    pub steps: Vec<SelectionStep>,
}

impl LayerTrace {
    pub fn selected(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.weight_index).collect()
    }
}

/// A row of the exported trace CSV.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRow {
    pub layer_id: usize,
    pub step: usize,
    pub group: usize,
    pub weight_index: usize,
}

/// Columns `layer_id,step,group,weight_index`.
pub fn write_trace_csv<W: Write>(traces: &[LayerTrace], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(writer);
    w.write_record(["layer_id", "step", "group", "weight_index"])?;
    for t in traces {
        for s in &t.steps {
            w.serialize(TraceRow {
                layer_id: t.layer_id,
                step: s.step,
                group: s.group,
                weight_index: s.weight_index,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses and checks a trace: steps count up from 0 within a layer and no
/// weight is chosen twice.
pub fn parse_trace_csv<R: Read>(reader: R) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["layer_id", "step", "group", "weight_index"] {
        return Err(Error::Data(format!("unexpected trace header {headers:?}")));
    }
    let mut next_step: HashMap<usize, usize> = HashMap::new();
    let mut chosen: HashSet<(usize, usize)> = HashSet::new();
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let row: TraceRow = rec?;
        let expect = next_step.entry(row.layer_id).or_insert(0);
        if row.step != *expect {
            return Err(Error::Data(format!(
                "layer {} step {} out of order (expected {})",
                row.layer_id, row.step, expect
            )));
        }
        *expect += 1;
        if !chosen.insert((row.layer_id, row.weight_index)) {
            return Err(Error::Data(format!(
                "weight {} selected twice in layer {}",
                row.weight_index, row.layer_id
            )));
        }
        out.push(row);
    }
    Ok(out)
}
