#![no_main]

use fairgrape::data::{parse_csv, write_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = parse_csv(data) {
        // anything accepted must survive a write/parse round trip
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let again = parse_csv(buf.as_slice()).unwrap();
        assert_eq!(again.len(), ds.len());
        assert_eq!(again.labels(), ds.labels());
    }
});
