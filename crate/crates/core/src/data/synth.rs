use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::GroupedDataset;
use crate::error::{Error, Result};

/// Generator settings for a group-labelled Gaussian dataset.
///
/// Rows of group `k` carry their class signal on `exclusive_features[k]`;
/// features outside every exclusive set are shared and carry a weaker
/// `shared_signal` plus a per-group mean shift. Exclusive features of other
/// groups are pure noise for a row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Rows per cell, indexed `[group][class]`.
    pub cell_counts: Vec<Vec<usize>>,
    pub feature_dim: usize,
    pub exclusive_features: Vec<Vec<usize>>,
    pub noise: f64,
    pub separation: f64,
    pub shared_signal: f64,
    pub group_shift: f64,
    /// Multiplier on each group's exclusive columns, for every row.
    pub exclusive_scale: Vec<f64>,
    /// Appends a one-hot group encoding after the base features.
    pub one_hot_groups: bool,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Majority/minority pair with group-exclusive predictive features; 4000 rows.
    ///
    /// The majority's exclusive columns are small in scale, so its weights are
    /// large in magnitude but not more important for the minority.
    pub fn biased(seed: u64) -> Self {
        SyntheticSpec {
            cell_counts: vec![vec![1600, 1600], vec![400, 400]],
            feature_dim: 16,
            exclusive_features: vec![(0..4).collect(), (4..8).collect()],
            noise: 1.0,
            separation: 1.0,
            shared_signal: 0.25,
            group_shift: 3.0,
            exclusive_scale: vec![0.1, 1.0],
            one_hot_groups: true,
            seed,
        }
    }

    /// Control: both groups share the same predictive features and sizes.
    pub fn unbiased(seed: u64) -> Self {
        SyntheticSpec {
            cell_counts: vec![vec![1000, 1000], vec![1000, 1000]],
            exclusive_features: vec![vec![], vec![]],
            shared_signal: 0.3,
            group_shift: 0.0,
            exclusive_scale: vec![1.0, 1.0],
            ..SyntheticSpec::biased(seed)
        }
    }

    pub fn num_groups(&self) -> usize {
        self.cell_counts.len()
    }

    pub fn num_classes(&self) -> usize {
        self.cell_counts.first().map_or(0, Vec::len)
    }

    /// Width of generated rows including the optional one-hot block.
    pub fn output_dim(&self) -> usize {
        self.feature_dim
            + if self.one_hot_groups {
                self.num_groups()
            } else {
                0
            }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_groups();
        let c = self.num_classes();
        if k == 0 || c < 2 {
            return Err(Error::Config(
                "need at least one group and two classes".into(),
            ));
        }
        if self.cell_counts.iter().any(|row| row.len() != c) {
            return Err(Error::Config(
                "cell_counts rows must all have one entry per class".into(),
            ));
        }
        if self
            .cell_counts
            .iter()
            .any(|row| row.iter().sum::<usize>() == 0)
        {
            return Err(Error::Config("every group needs at least one row".into()));
        }
        if self.exclusive_features.len() != k {
            return Err(Error::Config(format!(
                "{} exclusive feature sets for {k} groups",
                self.exclusive_features.len()
            )));
        }
        if self.exclusive_scale.len() != k {
            return Err(Error::Config(format!(
                "{} exclusive scales for {k} groups",
                self.exclusive_scale.len()
            )));
        }
        if self
            .exclusive_scale
            .iter()
            .any(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(Error::Config("exclusive scales must be positive".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        let mut owner = vec![None; self.feature_dim];
        for (g, set) in self.exclusive_features.iter().enumerate() {
            for &j in set {
                if j >= self.feature_dim {
                    return Err(Error::Config(format!(
                        "exclusive feature {j} exceeds feature_dim {}",
                        self.feature_dim
                    )));
                }
                if let Some(prev) = owner[j] {
                    return Err(Error::Config(format!(
                        "feature {j} is exclusive to both group {prev} and group {g}"
                    )));
                }
                owner[j] = Some(g);
            }
        }
        for v in [
            self.noise,
            self.separation,
            self.shared_signal,
            self.group_shift,
        ] {
            if !v.is_finite() {
                return Err(Error::Config("non-finite generator parameter".into()));
            }
        }
        if self.noise < 0.0 {
            return Err(Error::Config("noise must be non-negative".into()));
        }
        Ok(())
    }
}

/// Class prototype sign for position `p` of a signal block: mean zero over classes.
fn prototype(class: usize, p: usize, classes: usize) -> f64 {
    if p % classes == class {
        1.0
    } else {
        -1.0 / (classes as f64 - 1.0)
    }
}

pub fn synthesize_biased(spec: &SyntheticSpec) -> Result<GroupedDataset> {
    spec.validate()?;
    let groups = spec.num_groups();
    let classes = spec.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut exclusive_owner = vec![None; spec.feature_dim];
    let mut position = vec![0usize; spec.feature_dim];
    for (g, set) in spec.exclusive_features.iter().enumerate() {
        for (p, &j) in set.iter().enumerate() {
            exclusive_owner[j] = Some(g);
            position[j] = p;
        }
    }
    let shared: Vec<usize> = (0..spec.feature_dim)
        .filter(|&j| exclusive_owner[j].is_none())
        .collect();
    for (p, &j) in shared.iter().enumerate() {
        position[j] = p;
    }
    let shift_sign: Vec<Vec<f64>> = (0..groups)
        .map(|_| {
            (0..spec.feature_dim)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect()
        })
        .collect();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let dim = spec.output_dim();
    let total: usize = spec.cell_counts.iter().flatten().sum();
    let mut features = Vec::with_capacity(total * dim);
    let mut labels = Vec::with_capacity(total);
    let mut group_idx = Vec::with_capacity(total);
    for g in 0..groups {
        for c in 0..classes {
            for _ in 0..spec.cell_counts[g][c] {
                for j in 0..spec.feature_dim {
                    let mean = match exclusive_owner[j] {
                        Some(owner) if owner == g => {
                            spec.separation * prototype(c, position[j], classes)
                        }
                        Some(_) => 0.0,
                        None => {
                            spec.shared_signal * prototype(c, position[j], classes)
                                + spec.group_shift * shift_sign[g][j]
                        }
                    };
                    let eps: f64 = normal.sample(&mut rng);
                    let scale = exclusive_owner[j].map_or(1.0, |o| spec.exclusive_scale[o]);
                    features.push(scale * (mean + spec.noise * eps));
                }
                if spec.one_hot_groups {
                    features.extend((0..groups).map(|h| if h == g { 1.0 } else { 0.0 }));
                }
                labels.push(c);
                group_idx.push(g);
            }
        }
    }
    GroupedDataset::new(
        features,
        dim,
        labels,
        group_idx,
        (0..groups).map(|g| format!("group{g}")).collect(),
        (0..classes).map(|c| format!("class{c}")).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_counts() {
        let spec = SyntheticSpec::biased(0);
        let d = synthesize_biased(&spec).unwrap();
        assert_eq!(d.len(), 4000);
        assert_eq!(d.dim(), 18);
        assert_eq!(d.group_rows(1).len(), 800);
        assert_eq!(d.row(0)[16..], [1.0, 0.0]);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = synthesize_biased(&SyntheticSpec::biased(3)).unwrap();
        let b = synthesize_biased(&SyntheticSpec::biased(3)).unwrap();
        let c = synthesize_biased(&SyntheticSpec::biased(4)).unwrap();
        let bits =
            |d: &GroupedDataset| d.features().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn overlapping_exclusive_sets_rejected() {
        let mut spec = SyntheticSpec::biased(0);
        spec.exclusive_features = vec![vec![0, 1], vec![1, 2]];
        assert!(matches!(synthesize_biased(&spec), Err(Error::Config(_))));
        spec.exclusive_features = vec![vec![0], vec![99]];
        assert!(synthesize_biased(&spec).is_err());
    }

    #[test]
    fn zero_noise_signal_lives_on_owner_features() {
        let mut spec = SyntheticSpec::biased(1);
        spec.noise = 0.0;
        spec.cell_counts = vec![vec![2, 2], vec![2, 2]];
        let d = synthesize_biased(&spec).unwrap();
        for i in 0..d.len() {
            let (g, c) = (d.groups()[i], d.labels()[i]);
            let row = d.row(i);
            let own = &spec.exclusive_features[g];
            let other = &spec.exclusive_features[1 - g];
            let sign = if c == 0 { 1.0 } else { -1.0 };
            assert_eq!(
                row[own[0]],
                spec.exclusive_scale[g] * sign * spec.separation
            );
            assert!(other.iter().all(|&j| row[j] == 0.0));
        }
    }
}
