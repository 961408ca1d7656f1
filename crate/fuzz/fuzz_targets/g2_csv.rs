#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(estimate) = upconv::csvio::read_g2(text) {
            // parsed estimates must serialize back and feed the
            // analysis entry points without panicking
            let mut buf = Vec::new();
            upconv::csvio::write_g2(&mut buf, &estimate).unwrap();
            let _ = upconv::analysis::classical_violation(&estimate);
            let trace = upconv::csvio::g2_trace(&estimate);
            let _ = upconv::analysis::fit_gaussian_peak(&trace);
        }
    }
});
