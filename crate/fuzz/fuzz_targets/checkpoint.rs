#![no_main]

use jidm::models::checkpoint::{decode_checkpoint, encode_checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = decode_checkpoint(data) {
        let bytes = encode_checkpoint(&model);
        assert_eq!(encode_checkpoint(&decode_checkpoint(&bytes).expect("re-decode")), bytes);
    }
});
