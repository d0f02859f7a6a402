//! Every checked-in fuzz seed must be accepted by its decoder.

use std::fs;
use std::path::PathBuf;

use elscape::config::{GridConfig, SimConfig};
use elscape::discrete::{IsingFit, IsingModelRecord};
use elscape::experiment::parse_results;
use elscape::features::EnergyModel;
use elscape::gcn::{decode_weight_blob, encode_weight_blob, DEFAULT_EPSILON};
use elscape::io::{decode_cache, encode_cache, parse_timeseries_csv};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            (path.display().to_string(), fs::read(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn timeseries_seeds_parse() {
    for (name, bytes) in seeds("timeseries_csv") {
        parse_timeseries_csv(bytes.as_slice()).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn cache_seeds_round_trip() {
    for (name, bytes) in seeds("elts_cache") {
        let x = decode_cache(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(encode_cache(&x), bytes, "{name}");
    }
}

#[test]
fn config_seeds_validate() {
    for (name, bytes) in seeds("sim_config") {
        SimConfig::from_json(&bytes)
            .and_then(|c| c.validate())
            .unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    for (name, bytes) in seeds("grid_config") {
        GridConfig::from_json(&bytes)
            .and_then(|g| g.validate())
            .unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn model_seeds_decode() {
    for (name, bytes) in seeds("model_json") {
        let continuous = EnergyModel::from_json(&bytes).is_ok();
        let ising = serde_json::from_slice::<IsingModelRecord>(&bytes)
            .ok()
            .and_then(|r| IsingFit::try_from(r).ok())
            .is_some();
        assert!(
            continuous ^ ising,
            "{name}: continuous {continuous}, ising {ising}"
        );
    }
}

#[test]
fn blob_seeds_round_trip() {
    for (name, bytes) in seeds("weight_blob") {
        let p =
            decode_weight_blob(&bytes, DEFAULT_EPSILON).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(encode_weight_blob(&p), bytes, "{name}");
    }
}

#[test]
fn results_seeds_parse() {
    for (name, bytes) in seeds("results_csv") {
        let rows = parse_results(bytes.as_slice()).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(!rows.is_empty(), "{name}");
    }
}
