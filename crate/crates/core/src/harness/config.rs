//! Flat `key = value` experiment configuration.
//!
//! One setting per line, `#` starts a comment, keys are dotted lowercase
//! words. Lists are comma separated; nested lists (cell counts, exclusive
//! feature sets) separate rows with `;`. Unknown or repeated keys are errors.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Split, SyntheticSpec};
use crate::error::{Error, Result};
use crate::network::{AdamConfig, Architecture, ConvStage};
use crate::pruners::{GroupSource, Method, PruneConfig, TargetShares};

/// Every accepted key with its default (empty means "unset").
pub const KEYS: &[(&str, &str, &str)] = &[
    ("data.source", "synthetic", "synthetic | csv"),
    (
        "data.path",
        "",
        "CSV file with label, group, optional split and feature columns",
    ),
    (
        "data.preset",
        "biased",
        "synthetic preset: biased | unbiased",
    ),
    (
        "data.seed",
        "",
        "fixed generator seed; unset uses each trial seed",
    ),
    (
        "data.cells",
        "",
        "rows per [group][class], e.g. 1600,1600;400,400",
    ),
    ("data.feature_dim", "", "base feature count"),
    (
        "data.exclusive",
        "",
        "group-exclusive feature indices, e.g. 0,1;2,3",
    ),
    (
        "data.exclusive_scale",
        "",
        "column multiplier per group's exclusive features",
    ),
    ("data.noise", "", "Gaussian noise std"),
    ("data.separation", "", "class signal on exclusive features"),
    ("data.shared_signal", "", "class signal on shared features"),
    (
        "data.group_shift",
        "",
        "per-group mean shift on shared features",
    ),
    (
        "data.one_hot_groups",
        "",
        "append a one-hot group block: true | false",
    ),
    ("split.train", "0.5", "train fraction"),
    ("split.val", "0", "validation fraction"),
    ("split.test", "0.5", "test fraction"),
    (
        "eval.partition",
        "test",
        "partition reports are computed on: train | val | test",
    ),
    ("model.kind", "mlp", "mlp | conv"),
    ("model.hidden", "64,32", "hidden widths of the MLP"),
    ("model.channels", "1", "conv input channels"),
    ("model.height", "", "conv input height"),
    ("model.width", "", "conv input width"),
    (
        "model.stages",
        "4x3,8x3",
        "conv stages as out_channels x kernel",
    ),
    ("train.epochs", "20", "reference training epochs"),
    (
        "train.batch_size",
        "64",
        "mini-batch size for training, retraining and importance",
    ),
    ("train.lr", "0.001", "Adam learning rate"),
    (
        "prune.method",
        "fairgrape",
        "one or more of fairgrape, magnitude, snip, grasp, lottery",
    ),
    (
        "prune.sparsity",
        "0.9",
        "one or more fractions of weights removed",
    ),
    (
        "prune.step",
        "0.1",
        "fraction of remaining weights removed per iteration",
    ),
    (
        "prune.retrain_epochs",
        "5",
        "retraining epochs per iteration",
    ),
    (
        "prune.importance_fraction",
        "0.2",
        "fraction of each group's rows used for importance",
    ),
    (
        "prune.group_source",
        "true_labels",
        "true_labels | pseudo_kmeans",
    ),
    ("prune.pseudo_k", "2", "cluster count for pseudo_kmeans"),
    ("prune.kmeans_iters", "100", "k-means iteration cap"),
    ("prune.target_shares", "current", "current | original"),
    (
        "prune.importance_groups",
        "",
        "group names whose rows feed importance; unset uses all",
    ),
    ("run.seeds", "0,1,2", "trial seeds"),
    (
        "run.out",
        "",
        "output directory (the --out flag takes precedence)",
    ),
];

/// Parses `key = value` lines, rejecting malformed lines, bad keys and repeats.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        let key = key.trim();
        let valid = !key.is_empty()
            && !key.starts_with('.')
            && !key.ends_with('.')
            && !key.contains("..")
            && key
                .chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '.');
        if !valid {
            return Err(Error::Config(format!(
                "line {}: invalid key '{key}'",
                n + 1
            )));
        }
        if out
            .insert(key.to_string(), value.trim().to_string())
            .is_some()
        {
            return Err(Error::Config(format!(
                "line {}: duplicate key '{key}'",
                n + 1
            )));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum DataSource {
    Csv {
        path: PathBuf,
    },
    Synthetic {
        spec: SyntheticSpec,
        fixed_seed: Option<u64>,
    },
}

/// Layer structure without the data-dependent input and output sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ModelSpec {
    Mlp {
        hidden: Vec<usize>,
    },
    Conv {
        channels: usize,
        height: usize,
        width: usize,
        stages: Vec<ConvStage>,
    },
}

impl ModelSpec {
    pub fn architecture(&self, input: usize, classes: usize) -> Result<Architecture> {
        match self {
            ModelSpec::Mlp { hidden } => Ok(Architecture::Mlp {
                input,
                hidden: hidden.clone(),
                classes,
            }),
            ModelSpec::Conv {
                channels,
                height,
                width,
                stages,
            } => {
                if channels * height * width != input {
                    return Err(Error::Config(format!(
                        "conv input {channels}x{height}x{width} does not match {input} feature columns"
                    )));
                }
                Ok(Architecture::Conv {
                    channels: *channels,
                    height: *height,
                    width: *width,
                    stages: stages.clone(),
                    classes,
                })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub split: [f64; 3],
    pub eval_partition: Split,
    pub model: ModelSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub methods: Vec<Method>,
    pub sparsities: Vec<f64>,
    /// Template for every run; method, keep fraction and seed are filled per run.
    pub prune: PruneConfig,
    pub importance_groups: Option<Vec<String>>,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn parse_nested<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<Vec<T>>> {
    v.split(';').map(|row| parse_list(key, row)).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got '{v}'"
        ))),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_map(&parse_key_values(text)?)
    }

    pub fn from_map(given: &BTreeMap<String, String>) -> Result<Self> {
        for key in given.keys() {
            if !KEYS.iter().any(|(k, _, _)| k == key) {
                return Err(Error::Config(format!("unknown key '{key}'")));
            }
        }
        let get = |key: &str| -> String {
            given.get(key).cloned().unwrap_or_else(|| {
                KEYS.iter()
                    .find(|(k, _, _)| *k == key)
                    .map(|(_, d, _)| d.to_string())
                    .unwrap_or_default()
            })
        };
        let set = |key: &str| -> Option<String> { Some(get(key)).filter(|v| !v.is_empty()) };

        let data = match get("data.source").as_str() {
            "csv" => DataSource::Csv {
                path: set("data.path")
                    .map(PathBuf::from)
                    .ok_or_else(|| Error::Config("data.path is required for csv data".into()))?,
            },
            "synthetic" => {
                let mut spec = match get("data.preset").as_str() {
                    "biased" => SyntheticSpec::biased(0),
                    "unbiased" => SyntheticSpec::unbiased(0),
                    other => return Err(Error::Config(format!("unknown data.preset '{other}'"))),
                };
                if let Some(v) = set("data.cells") {
                    spec.cell_counts = parse_nested("data.cells", &v)?;
                }
                if let Some(v) = set("data.feature_dim") {
                    spec.feature_dim = parse_num("data.feature_dim", &v)?;
                }
                if let Some(v) = set("data.exclusive") {
                    spec.exclusive_features = parse_nested("data.exclusive", &v)?;
                }
                if let Some(v) = set("data.exclusive_scale") {
                    spec.exclusive_scale = parse_list("data.exclusive_scale", &v)?;
                }
                for (key, field) in [
                    ("data.noise", &mut spec.noise),
                    ("data.separation", &mut spec.separation),
                    ("data.shared_signal", &mut spec.shared_signal),
                    ("data.group_shift", &mut spec.group_shift),
                ] {
                    if let Some(v) = set(key) {
                        *field = parse_num(key, &v)?;
                    }
                }
                if let Some(v) = set("data.one_hot_groups") {
                    spec.one_hot_groups = parse_bool("data.one_hot_groups", &v)?;
                }
                spec.validate()?;
                let fixed_seed = set("data.seed")
                    .map(|v| parse_num("data.seed", &v))
                    .transpose()?;
                DataSource::Synthetic { spec, fixed_seed }
            }
            other => return Err(Error::Config(format!("unknown data.source '{other}'"))),
        };

        let split = [
            parse_num::<f64>("split.train", &get("split.train"))?,
            parse_num::<f64>("split.val", &get("split.val"))?,
            parse_num::<f64>("split.test", &get("split.test"))?,
        ];
        if split.iter().any(|f| !(f.is_finite() && *f >= 0.0))
            || (split.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "split fractions {split:?} must be non-negative and sum to 1"
            )));
        }
        let eval_partition = Split::parse(&get("eval.partition")).ok_or_else(|| {
            Error::Config(format!(
                "unknown eval.partition '{}'",
                get("eval.partition")
            ))
        })?;
        if split[eval_partition as usize] == 0.0 {
            return Err(Error::Config(format!(
                "eval.partition '{}' has a zero split fraction",
                eval_partition.as_str()
            )));
        }

        let model = match get("model.kind").as_str() {
            "mlp" => ModelSpec::Mlp {
                hidden: parse_list("model.hidden", &get("model.hidden"))?,
            },
            "conv" => {
                let stages = get("model.stages")
                    .split(',')
                    .map(|s| {
                        let (c, k) = s.trim().split_once('x').ok_or_else(|| {
                            Error::Config(format!("model.stages: expected CxK, got '{s}'"))
                        })?;
                        Ok(ConvStage {
                            out_channels: parse_num("model.stages", c)?,
                            kernel: parse_num("model.stages", k)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let need = |key: &str| -> Result<usize> {
                    parse_num(
                        key,
                        &set(key).ok_or_else(|| {
                            Error::Config(format!("{key} is required for conv models"))
                        })?,
                    )
                };
                ModelSpec::Conv {
                    channels: need("model.channels")?,
                    height: need("model.height")?,
                    width: need("model.width")?,
                    stages,
                }
            }
            other => return Err(Error::Config(format!("unknown model.kind '{other}'"))),
        };

        let epochs = parse_num("train.epochs", &get("train.epochs"))?;
        let batch_size: usize = parse_num("train.batch_size", &get("train.batch_size"))?;
        let lr: f64 = parse_num("train.lr", &get("train.lr"))?;
        if batch_size == 0 || !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(
                "train.batch_size and train.lr must be positive".into(),
            ));
        }

        let methods = get("prune.method")
            .split(',')
            .map(|s| {
                Method::parse(s.trim())
                    .ok_or_else(|| Error::Config(format!("unknown prune.method '{}'", s.trim())))
            })
            .collect::<Result<Vec<_>>>()?;
        let sparsities: Vec<f64> = parse_list("prune.sparsity", &get("prune.sparsity"))?;
        if methods.is_empty() || sparsities.is_empty() {
            return Err(Error::Config(
                "prune.method and prune.sparsity need at least one value".into(),
            ));
        }
        if sparsities.iter().any(|s| !(*s > 0.0 && *s < 1.0)) {
            return Err(Error::Config(format!(
                "prune.sparsity values {sparsities:?} must lie in (0, 1)"
            )));
        }
        let group_source = match get("prune.group_source").as_str() {
            "true_labels" => GroupSource::TrueLabels,
            "pseudo_kmeans" => GroupSource::PseudoKmeans {
                k: parse_num("prune.pseudo_k", &get("prune.pseudo_k"))?,
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown prune.group_source '{other}'"
                )))
            }
        };
        let target_shares = match get("prune.target_shares").as_str() {
            "current" => TargetShares::Current,
            "original" => TargetShares::Original,
            other => {
                return Err(Error::Config(format!(
                    "unknown prune.target_shares '{other}'"
                )))
            }
        };
        let prune = PruneConfig {
            method: methods[0],
            target_keep: 1.0 - sparsities[0],
            step_prune_fraction: parse_num("prune.step", &get("prune.step"))?,
            retrain_epochs: parse_num("prune.retrain_epochs", &get("prune.retrain_epochs"))?,
            importance_sample_fraction: parse_num(
                "prune.importance_fraction",
                &get("prune.importance_fraction"),
            )?,
            batch_size,
            seed: 0,
            group_source,
            target_shares,
            importance_groups: None,
            adam: AdamConfig {
                lr,
                ..AdamConfig::default()
            },
            kmeans_iters: parse_num("prune.kmeans_iters", &get("prune.kmeans_iters"))?,
        };
        prune.validate()?;
        let importance_groups = set("prune.importance_groups").map(|v| {
            v.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect::<Vec<_>>()
        });
        if importance_groups.as_ref().is_some_and(|g| g.is_empty()) {
            return Err(Error::Config("prune.importance_groups is empty".into()));
        }
        let seeds: Vec<u64> = parse_list("run.seeds", &get("run.seeds"))?;
        if seeds.is_empty() {
            return Err(Error::Config(
                "run.seeds must list at least one seed".into(),
            ));
        }
        Ok(ExperimentConfig {
            data,
            split,
            eval_partition,
            model,
            epochs,
            batch_size,
            lr,
            methods,
            sparsities,
            prune,
            importance_groups,
            seeds,
            out: set("run.out").map(PathBuf::from),
        })
    }

    /// Errors if a referenced input file is missing.
    pub fn check_paths(&self) -> Result<()> {
        if let DataSource::Csv { path } = &self.data {
            if !path.is_file() {
                return Err(Error::Data(format!(
                    "data file {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    /// The same experiment restricted to one method and sparsity.
    pub fn single(&self, method: Method, sparsity: f64) -> ExperimentConfig {
        let mut c = self.clone();
        c.methods = vec![method];
        c.sparsities = vec![sparsity];
        c.prune.method = method;
        c.prune.target_keep = 1.0 - sparsity;
        c
    }

    /// Stable JSON of everything except the output directory.
    pub fn canonical(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        serde_json::to_string(&c).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

/// Markdown table of every key, its default and meaning.
pub fn key_schema() -> String {
    let mut s = String::from("| key | default | meaning |\n|---|---|---|\n");
    for (k, d, m) in KEYS {
        let m = m.replace('|', "\\|");
        s.push_str(&format!(
            "| `{k}` | {} | {m} |\n",
            if d.is_empty() { "unset" } else { d }
        ));
    }
    s
}
