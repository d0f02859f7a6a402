#![no_main]

use elscape::io::{decode_cache, encode_cache};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(x) = decode_cache(data) {
        let again = decode_cache(&encode_cache(&x)).expect("re-encoded cache decodes");
        assert_eq!(x.matrix(), again.matrix());
    }
});
