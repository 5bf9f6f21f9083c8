#![no_main]

use jidm::control::RolloutLog;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(log) = RolloutLog::parse(text) {
        let again = RolloutLog::parse(&log.to_text()).expect("re-parse");
        assert_eq!(again.to_text(), log.to_text());
    }
});
