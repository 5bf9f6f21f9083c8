#![no_main]

use jidm::metrics::MetricsTable;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(t) = MetricsTable::parse(text) {
        let csv = t.to_csv().expect("parsed rows are writable");
        let back = MetricsTable::parse(&csv).expect("re-parse");
        assert_eq!(back.to_csv().unwrap(), csv);
    }
});
