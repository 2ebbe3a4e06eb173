use std::io::{Read, Write};
use std::path::Path;

use super::{GroupedDataset, Split};
use crate::error::{Error, Result};

const LABEL: &str = "label";
const GROUP: &str = "group";
const SPLIT: &str = "split";

pub fn load_csv(path: &Path) -> Result<GroupedDataset> {
    let file = std::fs::File::open(path)?;
    parse_csv(file)
}

/// Header row required; `label` and `group` columns are mandatory, an optional
/// `split` column holds train/val/test tags, every other column is a feature.
pub fn parse_csv<R: Read>(reader: R) -> Result<GroupedDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::Data("empty file".into()));
    }
    let find = |name: &str| headers.iter().position(|h| h == name);
    let label_col =
        find(LABEL).ok_or_else(|| Error::Data("missing required column 'label'".into()))?;
    let group_col =
        find(GROUP).ok_or_else(|| Error::Data("missing required column 'group'".into()))?;
    let split_col = find(SPLIT);
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != label_col && c != group_col && Some(c) != split_col)
        .collect();
    if feature_cols.is_empty() {
        return Err(Error::Data("no feature columns".into()));
    }

    let mut class_names: Vec<String> = Vec::new();
    let mut group_names: Vec<String> = Vec::new();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    let mut splits = Vec::new();
    let intern = |names: &mut Vec<String>, v: &str| match names.iter().position(|n| n == v) {
        Some(i) => i,
        None => {
            names.push(v.to_string());
            names.len() - 1
        }
    };
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Data(format!(
                "row {} has {} fields",
                line + 2,
                record.len()
            )));
        }
        for &c in &feature_cols {
            let cell = &record[c];
            let v: f64 = cell.parse().map_err(|_| {
                Error::Data(format!(
                    "non-numeric feature '{}' in column '{}' at row {}",
                    cell,
                    &headers[c],
                    line + 2
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "non-finite feature at row {}",
                    line + 2
                )));
            }
            features.push(v);
        }
        labels.push(intern(&mut class_names, &record[label_col]));
        groups.push(intern(&mut group_names, &record[group_col]));
        if let Some(s) = split_col {
            splits.push(Split::parse(&record[s]).ok_or_else(|| {
                Error::Data(format!(
                    "bad split tag '{}' at row {}",
                    &record[s],
                    line + 2
                ))
            })?);
        }
    }
    if labels.is_empty() {
        return Err(Error::Data("empty file".into()));
    }
    let mut data = GroupedDataset::new(
        features,
        feature_cols.len(),
        labels,
        groups,
        group_names,
        class_names,
    )?;
    if split_col.is_some() {
        data.set_splits(splits)?;
    }
    Ok(data)
}

/// Features use 17 significant digits so values round-trip exactly.
pub fn write_csv<W: Write>(data: &GroupedDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("x{j}")).collect();
    header.push(LABEL.into());
    header.push(GROUP.into());
    if data.splits().is_some() {
        header.push(SPLIT.into());
    }
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = data.row(i).iter().map(|v| format!("{v:.16e}")).collect();
        rec.push(data.class_names()[data.labels()[i]].clone());
        rec.push(data.group_names()[data.groups()[i]].clone());
        if let Some(s) = data.splits() {
            rec.push(s[i].as_str().into());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(data: &GroupedDataset, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let file = std::fs::File::create(path)?;
    write_csv(data, std::io::BufWriter::new(file))
}
