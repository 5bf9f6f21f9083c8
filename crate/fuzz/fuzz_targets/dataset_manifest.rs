#![no_main]

use jidm::dataset::DatasetManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = DatasetManifest::parse(text) {
        let back = DatasetManifest::parse(&m.to_doc().to_string()).expect("re-parse");
        assert_eq!(back.to_doc().to_string(), m.to_doc().to_string());
    }
});
