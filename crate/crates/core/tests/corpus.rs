//! Replays the checked-in fuzz corpus through every parser.

use std::fs;
use std::path::PathBuf;

use fairgrape::data::parse_csv;
use fairgrape::harness::ExperimentConfig;
use fairgrape::network::checkpoint;
use fairgrape::pruners::parse_trace_csv;

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut files: Vec<_> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "no seeds in {}", dir.display());
    files.iter().map(|f| fs::read(f).unwrap()).collect()
}

#[test]
fn checkpoint_seeds_decode() {
    let decoded = seeds("checkpoint_decode")
        .iter()
        .filter(|b| checkpoint::decode(b).is_ok())
        .count();
    assert!(decoded >= 2);
}

#[test]
fn csv_seeds_parse() {
    for s in seeds("csv_parse") {
        parse_csv(s.as_slice()).unwrap();
    }
}

#[test]
fn config_seeds_parse() {
    for s in seeds("config_parse") {
        ExperimentConfig::parse(std::str::from_utf8(&s).unwrap()).unwrap();
    }
}

#[test]
fn trace_seeds_parse() {
    for s in seeds("trace_csv_parse") {
        parse_trace_csv(s.as_slice()).unwrap();
    }
}

#[test]
fn truncated_inputs_error_without_panicking() {
    for s in seeds("checkpoint_decode") {
        for n in 0..s.len() {
            let _ = checkpoint::decode(&s[..n]);
        }
    }
    for s in seeds("csv_parse").iter().chain(&seeds("trace_csv_parse")) {
        for n in (0..s.len()).step_by(7) {
            let _ = parse_csv(&s[..n]);
            let _ = parse_trace_csv(&s[..n]);
        }
    }
}
