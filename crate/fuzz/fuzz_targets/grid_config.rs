#![no_main]

use elscape::config::GridConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(grid) = GridConfig::from_json(data) {
        let _ = grid.validate();
        let _ = grid.active_comparisons();
    }
});
