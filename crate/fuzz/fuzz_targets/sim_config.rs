#![no_main]

use elscape::config::SimConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = SimConfig::from_json(data) {
        let _ = cfg.validate();
    }
});
