//! Group-labelled datasets.

mod csv_io;
pub mod kmeans;
mod split;
mod synth;

pub use csv_io::{load_csv, parse_csv, save_csv, write_csv};
pub use kmeans::{adjusted_rand_index, kmeans, KMeansResult};
pub use split::split;
pub use synth::{synthesize_biased, SyntheticSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Model;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Rows of features with a class label `y` and a sensitive group `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupedDataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    groups: Vec<usize>,
    group_names: Vec<String>,
    class_names: Vec<String>,
    splits: Option<Vec<Split>>,
}

impl GroupedDataset {
    /// Validated constructor: every group index must occur at least once.
    pub fn new(
        features: Vec<f64>,
        dim: usize,
        labels: Vec<usize>,
        groups: Vec<usize>,
        group_names: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let d =
            GroupedDataset::from_parts(features, dim, labels, groups, group_names, class_names)?;
        let mut seen = vec![false; d.group_names.len()];
        for &k in &d.groups {
            seen[k] = true;
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(Error::Data(format!(
                "sensitive group '{}' has no rows",
                d.group_names[k]
            )));
        }
        Ok(d)
    }

    /// Structural checks only; subsets may lack some groups.
    fn from_parts(
        features: Vec<f64>,
        dim: usize,
        labels: Vec<usize>,
        groups: Vec<usize>,
        group_names: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let n = labels.len();
        if groups.len() != n || features.len() != n * dim {
            return Err(Error::Data(format!(
                "inconsistent dataset: {} labels, {} groups, {} feature values for dim {dim}",
                n,
                groups.len(),
                features.len()
            )));
        }
        if dim == 0 {
            return Err(Error::Data("dataset has no feature columns".into()));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= class_names.len()) {
            return Err(Error::Data(format!("label index {y} out of range")));
        }
        if let Some(&k) = groups.iter().find(|&&k| k >= group_names.len()) {
            return Err(Error::Data(format!("group index {k} out of range")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite feature value".into()));
        }
        Ok(GroupedDataset {
            features,
            dim,
            labels,
            groups,
            group_names,
            class_names,
            splits: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    pub fn group_names(&self) -> &[String] {
        &self.group_names
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_groups(&self) -> usize {
        self.group_names.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn splits(&self) -> Option<&[Split]> {
        self.splits.as_deref()
    }

    pub fn set_splits(&mut self, splits: Vec<Split>) -> Result<()> {
        if splits.len() != self.len() {
            return Err(Error::Data(format!(
                "{} split tags for {} rows",
                splits.len(),
                self.len()
            )));
        }
        self.splits = Some(splits);
        Ok(())
    }

    /// Row indices belonging to group `k`.
    pub fn group_rows(&self, k: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.groups[i] == k).collect()
    }

    /// Copies the given rows, keeping name tables and split tags.
    pub fn subset(&self, rows: &[usize]) -> GroupedDataset {
        let mut features = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            features.extend_from_slice(self.row(r));
        }
        GroupedDataset {
            features,
            dim: self.dim,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            groups: rows.iter().map(|&r| self.groups[r]).collect(),
            group_names: self.group_names.clone(),
            class_names: self.class_names.clone(),
            splits: self
                .splits
                .as_ref()
                .map(|s| rows.iter().map(|&r| s[r]).collect()),
        }
    }

    /// Rows tagged with `which`; errors if the dataset was never split.
    pub fn partition(&self, which: Split) -> Result<GroupedDataset> {
        let splits = self
            .splits
            .as_ref()
            .ok_or_else(|| Error::Data("dataset has no split tags".into()))?;
        let rows: Vec<usize> = (0..self.len()).filter(|&i| splits[i] == which).collect();
        Ok(self.subset(&rows))
    }

    /// Rows whose group is in `keep` (groups are not renumbered).
    pub fn restrict_groups(&self, keep: &[usize]) -> GroupedDataset {
        let rows: Vec<usize> = (0..self.len())
            .filter(|&i| keep.contains(&self.groups[i]))
            .collect();
        self.subset(&rows)
    }

    /// Same rows with a different group assignment.
    pub fn with_groups(
        &self,
        groups: Vec<usize>,
        group_names: Vec<String>,
    ) -> Result<GroupedDataset> {
        let mut d = GroupedDataset::from_parts(
            self.features.clone(),
            self.dim,
            self.labels.clone(),
            groups,
            group_names,
            self.class_names.clone(),
        )?;
        d.splits = self.splits.clone();
        Ok(d)
    }

    /// Feature matrix for the given rows.
    pub fn batch(&self, rows: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        crate::network::train::gather(&self.features, self.dim, &self.labels, rows)
    }

    pub fn feature_tensor(&self) -> Result<Tensor> {
        Tensor::matrix(self.len(), self.dim, self.features.clone())
    }
}

/// Penultimate-layer activations for every row.
pub fn extract_embeddings(model: &Model, data: &GroupedDataset) -> Result<Tensor> {
    if data.dim() != model.input_dim() {
        return Err(Error::dim(
            "extract_embeddings",
            &[data.dim()],
            &[model.input_dim()],
        ));
    }
    if data.is_empty() {
        return Err(Error::Data("no rows to embed".into()));
    }
    model.embeddings(&data.feature_tensor()?)
}

/// Dataset whose groups are k-means clusters, with the true groups kept aside.
#[derive(Clone, Debug)]
pub struct PseudoGroups {
    pub dataset: GroupedDataset,
    pub true_groups: Vec<usize>,
    pub true_group_names: Vec<String>,
    pub clustering: KMeansResult,
}

impl PseudoGroups {
    /// The same rows keyed by their real sensitive groups.
    pub fn true_dataset(&self) -> Result<GroupedDataset> {
        self.dataset
            .with_groups(self.true_groups.clone(), self.true_group_names.clone())
    }
}

pub fn pseudo_groups(
    data: &GroupedDataset,
    model: &Model,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<PseudoGroups> {
    let emb = extract_embeddings(model, data)?;
    let clustering = kmeans(emb.data(), emb.cols(), k, seed, max_iters)?;
    let names = (0..k).map(|c| format!("cluster{c}")).collect();
    let dataset = data.with_groups(clustering.labels.clone(), names)?;
    Ok(PseudoGroups {
        dataset,
        true_groups: data.groups().to_vec(),
        true_group_names: data.group_names().to_vec(),
        clustering,
    })
}
