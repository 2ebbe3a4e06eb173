#![no_main]

use fairgrape::pruners::parse_trace_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_trace_csv(data);
});
