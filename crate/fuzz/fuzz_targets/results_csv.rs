#![no_main]

use elscape::experiment::parse_results;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_results(data);
});
