#![no_main]

use jidm::dataset::{decode_header, decode_records, encode_records};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let header = decode_header(data);
    if let Ok((h, records)) = decode_records(data) {
        assert!(header.is_ok());
        assert_eq!(records.len() as u64, h.record_count);
        let bytes = encode_records(&records, h.n_joints, (h.height, h.width, h.channels)).expect("re-encode");
        let (_, again) = decode_records(&bytes).expect("re-decode");
        assert_eq!(encode_records(&again, h.n_joints, (h.height, h.width, h.channels)).unwrap(), bytes);
    }
});
