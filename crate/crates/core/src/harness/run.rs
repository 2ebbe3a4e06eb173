//! Per-seed train, prune and evaluate pipeline with an on-disk manifest.
//!
//! Layout under the run directory:
//!
//! ```text
//! manifest.json
//! checkpoints/reference_seed{s}.fgpk   (+ .json sidecar)
//! checkpoints/iter_seed{s}_{i}.fgpk
//! checkpoints/pruned_seed{s}.fgpk
//! reports/seed{s}.json
//! reports/aggregate.json
//! tables/trace_seed{s}_iter{i}.csv
//! tables/importance_{reference,pruned}_seed{s}.csv
//! tables/layer_shares_seed{s}.csv
//! tables/rate_changes_seed{s}.csv
//! tables/flat.csv, tables/aggregate.csv
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{DataSource, ExperimentConfig};
use super::layers::{layer_share_report, write_layer_shares_csv};
use crate::data::{load_csv, split, synthesize_biased, GroupedDataset, Split};
use crate::error::{Error, Result};
use crate::importance::{importance_tables, read_importance_csv, write_importance_csv};
use crate::metrics::{evaluate, write_flat_csv, write_rate_changes_csv, FairnessReport};
use crate::network::{checkpoint, train, Model, TrainConfig};
use crate::pruners::{importance_data, prune, write_trace_csv, GroupSource, Method, PruneConfig};
use crate::stats::{mean, median};

pub const MANIFEST_FORMAT: &str = "fairgrape-run/1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub reference: Artifact,
    pub iterations: Vec<Artifact>,
    pub pruned: Artifact,
    pub report: Artifact,
    pub tables: Vec<Artifact>,
}

impl SeedRecord {
    fn artifacts(&self) -> impl Iterator<Item = &Artifact> {
        [&self.reference, &self.pruned, &self.report]
            .into_iter()
            .chain(&self.iterations)
            .chain(&self.tables)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub seed: u64,
    pub error: String,
    pub exit_code: i32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WallClock {
    pub started_unix: u64,
    pub finished_unix: u64,
    pub seconds_per_seed: BTreeMap<u64, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub method: Method,
    pub sparsity: f64,
    pub seeds: Vec<SeedRecord>,
    pub failures: Vec<Failure>,
    pub aggregate: Option<Artifact>,
    pub wall_clock: WallClock,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<RunManifest> {
        let text = fs::read_to_string(dir.join("manifest.json"))?;
        let m: RunManifest = serde_json::from_str(&text)?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Data(format!(
                "unsupported manifest format '{}'",
                m.format
            )));
        }
        Ok(m)
    }

    pub fn reports(&self, dir: &Path) -> Result<Vec<FairnessReport>> {
        self.seeds
            .iter()
            .map(|s| FairnessReport::from_json(&fs::read_to_string(dir.join(&s.report.path))?))
            .collect()
    }

    fn save(&self, dir: &Path) -> Result<()> {
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(self)? + "\n",
        )?;
        Ok(())
    }
}

/// Mean and median of one flat metric across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub group: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub sparsity: f64,
    pub seeds: Vec<u64>,
    pub rows: Vec<AggregateRow>,
}

pub fn aggregate(reports: &[FairnessReport]) -> Result<Aggregate> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Contract("cannot aggregate zero reports".into()))?;
    let mut values: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in reports {
        for (g, m, v) in r.flat_rows() {
            values.entry((g, m)).or_default().push(v);
        }
    }
    Ok(Aggregate {
        method: first.method.clone(),
        sparsity: first.sparsity,
        seeds: reports.iter().map(|r| r.seed).collect(),
        rows: values
            .into_iter()
            .map(|((group, metric), v)| AggregateRow {
                group,
                metric,
                n: v.len(),
                mean: mean(&v),
                median: median(&v),
            })
            .collect(),
    })
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn write_artifact(dir: &Path, rel: String, bytes: &[u8]) -> Result<Artifact> {
    let path = dir.join(&rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, bytes)?;
    Ok(Artifact {
        path: rel,
        sha256: hex::encode(Sha256::digest(bytes)),
    })
}

fn save_checkpoint(dir: &Path, rel: String, model: &Model) -> Result<Artifact> {
    let sha256 = checkpoint::save(model, &dir.join(&rel))?;
    Ok(Artifact { path: rel, sha256 })
}

fn intact(dir: &Path, a: &Artifact) -> bool {
    sha256_file(&dir.join(&a.path)).is_ok_and(|h| h == a.sha256)
}

/// The full dataset for one trial with train/val/test tags attached.
pub fn trial_data(cfg: &ExperimentConfig, seed: u64) -> Result<GroupedDataset> {
    let data = match &cfg.data {
        DataSource::Csv { path } => load_csv(path)?,
        DataSource::Synthetic { spec, fixed_seed } => {
            let mut spec = spec.clone();
            spec.seed = fixed_seed.unwrap_or(seed);
            synthesize_biased(&spec)?
        }
    };
    if data.splits().is_some() {
        Ok(data)
    } else {
        split(&data, cfg.split, seed)
    }
}

/// The run's prune settings for one seed, with importance group names resolved.
pub fn prune_config(
    cfg: &ExperimentConfig,
    seed: u64,
    data: &GroupedDataset,
) -> Result<PruneConfig> {
    let mut pc = cfg.prune.clone();
    pc.seed = seed;
    if let Some(names) = &cfg.importance_groups {
        let known: Vec<String> = match pc.group_source {
            GroupSource::TrueLabels => data.group_names().to_vec(),
            GroupSource::PseudoKmeans { k } => (0..k).map(|c| format!("cluster{c}")).collect(),
        };
        pc.importance_groups = Some(
            names
                .iter()
                .map(|n| {
                    known.iter().position(|k| k == n).ok_or_else(|| {
                        Error::Config(format!(
                            "prune.importance_groups: unknown group '{n}' (have {known:?})"
                        ))
                    })
                })
                .collect::<Result<_>>()?,
        );
    }
    Ok(pc)
}

/// A freshly initialised model for the trial, with its initial weights snapshotted.
pub fn init_model(cfg: &ExperimentConfig, data: &GroupedDataset, seed: u64) -> Result<Model> {
    let arch = cfg.model.architecture(data.dim(), data.num_classes())?;
    let mut model = Model::new(&arch, seed)?;
    model.snapshot_init();
    Ok(model)
}

fn reference_path(seed: u64) -> String {
    format!("checkpoints/reference_seed{seed}.fgpk")
}

fn pruned_path(seed: u64) -> String {
    format!("checkpoints/pruned_seed{seed}.fgpk")
}

/// Trains the reference model and writes its checkpoint.
pub fn stage_train(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<Artifact> {
    let data = trial_data(cfg, seed)?;
    let train_set = data.partition(Split::Train)?;
    let mut model = init_model(cfg, &data, seed)?;
    let tc = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed,
        adam: cfg.prune.adam,
    };
    train(&mut model, &train_set, &tc)?;
    save_checkpoint(dir, reference_path(seed), &model)
}

fn load_reference(
    cfg: &ExperimentConfig,
    data: &GroupedDataset,
    seed: u64,
    dir: &Path,
) -> Result<Model> {
    let path = dir.join(reference_path(seed));
    if !path.is_file() {
        return Err(Error::Data(format!(
            "missing reference checkpoint {}",
            path.display()
        )));
    }
    let mut model = checkpoint::load(&path)?;
    // the initial weights are not stored; they are re-derived from the seed
    let init = init_model(cfg, data, seed)?;
    if init.architecture() != model.architecture() {
        return Err(Error::Checkpoint(format!(
            "{} was trained with a different architecture",
            path.display()
        )));
    }
    model.set_snapshot_from(&init)?;
    Ok(model)
}

/// Output of [`stage_prune`].
pub struct PruneArtifacts {
    pub iterations: Vec<Artifact>,
    pub pruned: Artifact,
    pub tables: Vec<Artifact>,
}

/// Prunes the saved reference model and writes checkpoints, traces and importance dumps.
pub fn stage_prune(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<PruneArtifacts> {
    let data = trial_data(cfg, seed)?;
    let train_set = data.partition(Split::Train)?;
    let reference = load_reference(cfg, &data, seed, dir)?;
    let pc = prune_config(cfg, seed, &train_set)?;
    let outcome = prune(&reference, &train_set, &pc)?;

    let mut iterations = Vec::new();
    for (i, m) in outcome.iteration_models.iter().enumerate() {
        iterations.push(save_checkpoint(
            dir,
            format!("checkpoints/iter_seed{seed}_{i:03}.fgpk"),
            m,
        )?);
    }
    let pruned = save_checkpoint(dir, pruned_path(seed), &outcome.model)?;

    let mut tables = Vec::new();
    for (i, t) in outcome.traces.iter().enumerate() {
        let mut buf = Vec::new();
        write_trace_csv(t, &mut buf)?;
        tables.push(write_artifact(
            dir,
            format!("tables/trace_seed{seed}_iter{i:03}.csv"),
            &buf,
        )?);
    }

    let imp_data = importance_data(&reference, &train_set, &pc)?;
    let layers: Vec<usize> = (0..reference.layers().len()).collect();
    let mut dumps = Vec::new();
    for (tag, model) in [("reference", &reference), ("pruned", &outcome.model)] {
        let t = importance_tables(model, &imp_data, &layers, &pc.importance(0))?;
        let mut buf = Vec::new();
        write_importance_csv(&t, &mut buf)?;
        tables.push(write_artifact(
            dir,
            format!("tables/importance_{tag}_seed{seed}.csv"),
            &buf,
        )?);
        dumps.push(read_importance_csv(buf.as_slice())?);
    }
    let shares = layer_share_report(&dumps[0], &dumps[1])?;
    let mut buf = Vec::new();
    write_layer_shares_csv(&shares, &mut buf)?;
    tables.push(write_artifact(
        dir,
        format!("tables/layer_shares_seed{seed}.csv"),
        &buf,
    )?);
    Ok(PruneArtifacts {
        iterations,
        pruned,
        tables,
    })
}

/// Evaluates the saved reference and pruned models and writes the seed report.
pub fn stage_eval(
    cfg: &ExperimentConfig,
    seed: u64,
    dir: &Path,
) -> Result<(Artifact, Vec<Artifact>)> {
    let data = trial_data(cfg, seed)?;
    let eval_set = data.partition(cfg.eval_partition)?;
    let mut models = Vec::new();
    for rel in [reference_path(seed), pruned_path(seed)] {
        let path = dir.join(&rel);
        if !path.is_file() {
            return Err(Error::Data(format!(
                "missing checkpoint {}",
                path.display()
            )));
        }
        models.push(checkpoint::load(&path)?);
    }
    let report = FairnessReport::new(
        cfg.prune.method.as_str(),
        1.0 - cfg.prune.target_keep,
        seed,
        evaluate(&models[0], &eval_set)?,
        evaluate(&models[1], &eval_set)?,
    )?;
    let rep = write_artifact(
        dir,
        format!("reports/seed{seed}.json"),
        (report.to_json()? + "\n").as_bytes(),
    )?;
    let mut buf = Vec::new();
    write_rate_changes_csv(&report.rate_changes, &mut buf)?;
    let rates = write_artifact(dir, format!("tables/rate_changes_seed{seed}.csv"), &buf)?;
    Ok((rep, vec![rates]))
}

fn run_seed(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<SeedRecord> {
    let reference = stage_train(cfg, seed, dir)?;
    let p = stage_prune(cfg, seed, dir)?;
    let (report, rate_tables) = stage_eval(cfg, seed, dir)?;
    let mut tables = p.tables;
    tables.extend(rate_tables);
    Ok(SeedRecord {
        seed,
        reference,
        iterations: p.iterations,
        pruned: p.pruned,
        report,
        tables,
    })
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Runs every seed of a single method and sparsity into `dir`.
///
/// Seeds already recorded in an existing manifest with intact artifacts are
/// kept as they are; a run whose every seed is intact is left untouched.
/// A failing seed is recorded and the remaining seeds still run. Duplicate
/// seeds in the config are rejected.
pub fn run(cfg: &ExperimentConfig, dir: &Path) -> Result<RunManifest> {
    if cfg.methods.len() != 1 || cfg.sparsities.len() != 1 {
        return Err(Error::Contract(
            "run takes one method and one sparsity; use run_sweep".into(),
        ));
    }
    let cfg = cfg.single(cfg.methods[0], cfg.sparsities[0]);
    cfg.check_paths()?;
    let mut uniq = cfg.seeds.clone();
    uniq.sort_unstable();
    uniq.dedup();
    if uniq.len() != cfg.seeds.len() {
        return Err(Error::Config(format!(
            "run.seeds {:?} repeats a seed",
            cfg.seeds
        )));
    }
    fs::create_dir_all(dir)?;
    let hash = cfg.hash();

    let previous = if dir.join("manifest.json").is_file() {
        let m = RunManifest::load(dir)?;
        if m.config_hash != hash {
            return Err(Error::Config(format!(
                "{} already holds a run with a different configuration",
                dir.display()
            )));
        }
        Some(m)
    } else {
        None
    };
    if let Some(m) = &previous {
        let complete = m.failures.is_empty()
            && m.seeds.iter().map(|s| s.seed).eq(cfg.seeds.iter().copied())
            && m.seeds
                .iter()
                .all(|s| s.artifacts().all(|a| intact(dir, a)))
            && m.aggregate.as_ref().is_some_and(|a| intact(dir, a));
        if complete {
            return Ok(m.clone());
        }
    }

    let mut manifest = RunManifest {
        format: MANIFEST_FORMAT.into(),
        config_hash: hash,
        config: cfg.clone(),
        method: cfg.prune.method,
        sparsity: 1.0 - cfg.prune.target_keep,
        seeds: Vec::new(),
        failures: Vec::new(),
        aggregate: None,
        wall_clock: WallClock {
            started_unix: unix_now(),
            ..WallClock::default()
        },
    };
    let reused: BTreeMap<u64, (SeedRecord, Option<f64>)> = cfg
        .seeds
        .iter()
        .filter_map(|&seed| {
            let m = previous.as_ref()?;
            let s = m
                .seeds
                .iter()
                .find(|s| s.seed == seed && s.artifacts().all(|a| intact(dir, a)))?;
            Some((
                seed,
                (s.clone(), m.wall_clock.seconds_per_seed.get(&seed).copied()),
            ))
        })
        .collect();
    // seeds write disjoint files, so they run in parallel
    let fresh: Vec<(u64, Result<SeedRecord>, f64)> = cfg
        .seeds
        .par_iter()
        .filter(|s| !reused.contains_key(s))
        .map(|&seed| {
            let t0 = Instant::now();
            let r = run_seed(&cfg, seed, dir);
            (seed, r, t0.elapsed().as_secs_f64())
        })
        .collect();
    let mut fresh: BTreeMap<u64, (Result<SeedRecord>, f64)> =
        fresh.into_iter().map(|(s, r, t)| (s, (r, t))).collect();
    for &seed in &cfg.seeds {
        let (outcome, secs) = match reused.get(&seed) {
            Some((record, secs)) => (Ok(record.clone()), *secs),
            None => {
                let (r, t) = fresh.remove(&seed).expect("every seed ran");
                (r, Some(t))
            }
        };
        if let Some(secs) = secs {
            manifest.wall_clock.seconds_per_seed.insert(seed, secs);
        }
        match outcome {
            Ok(record) => manifest.seeds.push(record),
            Err(e) => {
                log::error!("seed {seed} failed: {e}");
                manifest.failures.push(Failure {
                    seed,
                    error: e.to_string(),
                    exit_code: e.exit_code(),
                });
            }
        }
    }

    let reports = manifest.reports(dir)?;
    if !reports.is_empty() {
        let agg = aggregate(&reports)?;
        manifest.aggregate = Some(write_artifact(
            dir,
            "reports/aggregate.json".into(),
            (serde_json::to_string_pretty(&agg)? + "\n").as_bytes(),
        )?);
        let mut buf = Vec::new();
        write_flat_csv(&reports, &mut buf)?;
        write_artifact(dir, "tables/flat.csv".into(), &buf)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "method", "sparsity", "group", "metric", "n", "mean", "median",
        ])?;
        for r in &agg.rows {
            w.write_record([
                agg.method.clone(),
                agg.sparsity.to_string(),
                r.group.clone(),
                r.metric.clone(),
                r.n.to_string(),
                r.mean.to_string(),
                r.median.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        write_artifact(dir, "tables/aggregate.csv".into(), &bytes)?;
    }
    manifest.wall_clock.finished_unix = unix_now();
    manifest.save(dir)?;
    Ok(manifest)
}

/// Directory name of one sweep entry.
pub fn sweep_dir_name(method: Method, sparsity: f64) -> String {
    format!("{}_sp{sparsity}", method.as_str())
}

/// Runs every method and sparsity combination. A single combination goes
/// straight into `out`; otherwise each gets its own subdirectory.
pub fn run_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<(PathBuf, RunManifest)>> {
    cfg.check_paths()?;
    let single = cfg.methods.len() == 1 && cfg.sparsities.len() == 1;
    let mut done = Vec::new();
    for &sparsity in &cfg.sparsities {
        for &method in &cfg.methods {
            let dir = if single {
                out.to_path_buf()
            } else {
                out.join(sweep_dir_name(method, sparsity))
            };
            let m = run(&cfg.single(method, sparsity), &dir)?;
            done.push((dir, m));
        }
    }
    Ok(done)
}
