#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(x) = elscape::io::parse_timeseries_csv(data) {
        assert!(x.matrix().iter().all(|v| v.is_finite()));
    }
});
