#![no_main]

use jidm::config::ConfigDoc;
use jidm::experiment::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(doc) = ConfigDoc::parse(text) {
        assert_eq!(ConfigDoc::parse(&doc.to_string()).expect("re-parse").to_string(), doc.to_string());
    }
    if let Ok(cfg) = RunConfig::parse(text) {
        assert_eq!(RunConfig::parse(&cfg.to_text()).expect("re-parse").to_text(), cfg.to_text());
    }
});
