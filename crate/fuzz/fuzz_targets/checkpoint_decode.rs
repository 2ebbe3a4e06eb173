#![no_main]

use fairgrape::network::checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = checkpoint::decode(data) {
        for r in &records {
            assert_eq!(r.weights.len(), r.mask.len());
            assert_eq!(r.weights.len(), r.shape.iter().product::<usize>());
        }
    }
});
