use std::fs;
use std::path::Path;

use fairgrape::harness::{
    compare_dirs, compare_runs, layer_share_report, max_share_deviation, parse_key_values, run,
    run_sweep, ExperimentConfig, RunManifest, NO_PRUNING,
};
use fairgrape::importance::read_importance_csv;

const TINY: &str = "\
data.cells = 60,60;30,30
model.hidden = 8
train.epochs = 2
prune.step = 0.5
prune.sparsity = 0.5
prune.retrain_epochs = 1
";

/// The tiny settings overlaid with `extra`.
fn cfg(extra: &str) -> ExperimentConfig {
    let mut map = parse_key_values(TINY).unwrap();
    map.extend(parse_key_values(extra).unwrap());
    ExperimentConfig::from_map(&map).unwrap()
}

fn loaded(dir: &Path) -> (RunManifest, Vec<fairgrape::metrics::FairnessReport>) {
    let m = RunManifest::load(dir).unwrap();
    let r = m.reports(dir).unwrap();
    (m, r)
}

fn shares(dir: &Path, seed: u64) -> Vec<fairgrape::harness::LayerShare> {
    let read = |tag: &str| {
        let p = dir.join(format!("tables/importance_{tag}_seed{seed}.csv"));
        read_importance_csv(fs::File::open(p).unwrap()).unwrap()
    };
    layer_share_report(&read("reference"), &read("pruned")).unwrap()
}

#[test]
fn single_run_comparison_has_reference_row() {
    let tmp = tempfile::tempdir().unwrap();
    run(&cfg("run.seeds = 0,1\n"), tmp.path()).unwrap();
    let table = compare_dirs(&[tmp.path()]).unwrap();
    assert_eq!(table.rows.len(), 2);
    assert_eq!(table.rows[0].label, NO_PRUNING);
    assert_eq!(table.rows[0].rho_delta, None);
    assert!(table.rows[1].rho_delta.is_some());
    assert_eq!(table.group_names, vec!["group0", "group1"]);
    let text = table.to_text();
    assert!(text.lines().nth(1).unwrap().starts_with("No-pruning"));
    assert!(text.lines().nth(1).unwrap().trim_end().ends_with('-'));
}

#[test]
fn comparison_rows_ignore_input_order_and_check_groups() {
    let tmp = tempfile::tempdir().unwrap();
    let c = cfg("prune.method = fairgrape,magnitude,snip\nrun.seeds = 0\n");
    let runs = run_sweep(&c, tmp.path()).unwrap();
    assert_eq!(runs.len(), 3);
    let mut loaded_runs: Vec<_> = runs.iter().map(|(d, _)| loaded(d)).collect();
    let a = compare_runs(&loaded_runs).unwrap();
    loaded_runs.reverse();
    let b = compare_runs(&loaded_runs).unwrap();
    assert_eq!(a, b);
    let labels: Vec<&str> = a.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, [NO_PRUNING, "fairgrape", "magnitude", "snip"]);

    let other = tmp.path().join("three_groups");
    run(&cfg("data.cells = 40,40;30,30;20,20\ndata.exclusive = 0,1;2,3;4,5\ndata.exclusive_scale = 1,1,1\nrun.seeds = 0\n"), &other).unwrap();
    loaded_runs.push(loaded(&other));
    assert!(compare_runs(&loaded_runs).is_err());
}

#[test]
fn sparsity_sweep_writes_one_manifest_each() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = run_sweep(
        &cfg("prune.method = magnitude\nprune.sparsity = 0.5,0.9,0.99\nrun.seeds = 0\n"),
        tmp.path(),
    )
    .unwrap();
    let sparsities: Vec<f64> = runs.iter().map(|(_, m)| m.sparsity).collect();
    assert_eq!(sparsities, vec![0.5, 0.9, 0.99]);
    for (dir, m) in &runs {
        assert!(dir.join("manifest.json").is_file());
        let r = &m.reports(dir).unwrap()[0];
        assert_eq!(r.sparsity, m.sparsity);
    }
}

#[test]
fn resume_reruns_only_damaged_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let c = cfg("run.seeds = 0,1\n");
    let first = run(&c, tmp.path()).unwrap();
    let report1 = fs::read(tmp.path().join("reports/seed1.json")).unwrap();
    fs::remove_file(tmp.path().join("reports/seed1.json")).unwrap();
    let second = run(&c, tmp.path()).unwrap();
    assert_eq!(
        fs::read(tmp.path().join("reports/seed1.json")).unwrap(),
        report1
    );
    assert_eq!(first.seeds, second.seeds);
    assert_eq!(
        first.wall_clock.seconds_per_seed[&0], second.wall_clock.seconds_per_seed[&0],
        "seed 0 was reused, not rerun"
    );
}

#[test]
fn manifest_hashes_match_files() {
    let tmp = tempfile::tempdir().unwrap();
    let m = run(&cfg("run.seeds = 2\n"), tmp.path()).unwrap();
    let s = &m.seeds[0];
    assert_eq!(s.iterations.len(), 1);
    for a in [&s.reference, &s.pruned, &s.report]
        .into_iter()
        .chain(&s.tables)
    {
        let bytes = fs::read(tmp.path().join(&a.path)).unwrap();
        use sha2::{Digest, Sha256};
        assert_eq!(hex::encode(Sha256::digest(&bytes)), a.sha256, "{}", a.path);
    }
    assert_eq!(m.config_hash, m.config.hash());
}

#[test]
fn minority_only_importance() {
    let tmp = tempfile::tempdir().unwrap();
    run(
        &cfg("prune.importance_groups = group1\nrun.seeds = 0\n"),
        tmp.path(),
    )
    .unwrap();
    let dump = read_importance_csv(
        fs::File::open(tmp.path().join("tables/importance_reference_seed0.csv")).unwrap(),
    )
    .unwrap();
    assert!(dump.iter().all(|r| r.group == 1));
    // a single group holds every layer's importance
    for row in shares(tmp.path(), 0) {
        assert_eq!(row.reference_share, Some(1.0));
    }
    let bad = run(
        &cfg("prune.importance_groups = nobody\nrun.seeds = 0\n"),
        &tmp.path().join("x"),
    )
    .unwrap();
    assert_eq!(bad.failures.len(), 1, "{:?}", bad.failures);
    assert_eq!(bad.failures[0].exit_code, 2);
}

#[test]
fn layer_shares_sum_to_one() {
    let tmp = tempfile::tempdir().unwrap();
    run(&cfg("run.seeds = 0\n"), tmp.path()).unwrap();
    let rows = shares(tmp.path(), 0);
    let layers: std::collections::BTreeSet<usize> = rows.iter().map(|r| r.layer_id).collect();
    assert_eq!(layers.len(), 2);
    for layer in layers {
        for pick in [
            |r: &fairgrape::harness::LayerShare| r.reference_share,
            |r: &fairgrape::harness::LayerShare| r.pruned_share,
        ] {
            let total: f64 = rows
                .iter()
                .filter(|r| r.layer_id == layer)
                .filter_map(pick)
                .sum();
            assert!((total - 1.0).abs() < 1e-12, "layer {layer}: {total}");
        }
    }
}

#[test]
fn fairgrape_keeps_layer_shares_closer_than_magnitude() {
    let tmp = tempfile::tempdir().unwrap();
    let full = |m: &str| {
        ExperimentConfig::parse(&format!(
            "prune.method = {m}\nrun.seeds = 0,1,2,3,4,5,6,7,8,9\n"
        ))
        .unwrap()
    };
    run(&full("fairgrape"), &tmp.path().join("fg")).unwrap();
    run(&full("magnitude"), &tmp.path().join("mag")).unwrap();
    let closer = (0..10)
        .filter(|&s| {
            max_share_deviation(&shares(&tmp.path().join("fg"), s))
                < max_share_deviation(&shares(&tmp.path().join("mag"), s))
        })
        .count();
    assert!(closer >= 8, "fairgrape closer in {closer}/10 seeds");
}
