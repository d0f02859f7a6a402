#![no_main]

use elscape::discrete::{IsingFit, IsingModelRecord};
use elscape::features::EnergyModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = EnergyModel::from_json(data);
    if let Ok(rec) = serde_json::from_slice::<IsingModelRecord>(data) {
        let _ = IsingFit::try_from(rec);
    }
});
