#![no_main]

use elscape::gcn::{decode_weight_blob, encode_weight_blob, DEFAULT_EPSILON};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(params) = decode_weight_blob(data, DEFAULT_EPSILON) {
        let again = decode_weight_blob(&encode_weight_blob(&params), DEFAULT_EPSILON).expect("round trip");
        assert_eq!(params, again);
    }
});
