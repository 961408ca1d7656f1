#![no_main]

use libfuzzer_sys::fuzz_target;
use upconv::experiment::ExperimentSpec;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        // parsing and static validation must never panic; resolved
        // specs must round-trip through serde
        if let Ok(spec) = ExperimentSpec::from_json(text) {
            let json = serde_json::to_string(&spec).unwrap();
            ExperimentSpec::from_json(&json).unwrap();
        }
    }
});
