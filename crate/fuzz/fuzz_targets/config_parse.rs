#![no_main]

use fairgrape::harness::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = ExperimentConfig::parse(text) {
            assert!(!cfg.seeds.is_empty());
            let _ = cfg.hash();
        }
    }
});
