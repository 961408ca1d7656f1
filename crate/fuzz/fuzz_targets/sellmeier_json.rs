#![no_main]

use libfuzzer_sys::fuzz_target;
use upconv::dispersion::SellmeierModel;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(model) = SellmeierModel::from_json(text) {
            // a validated model must evaluate (or return a domain
            // error) anywhere without panicking
            let [lo, hi] = model.validity_nm;
            for lambda in [lo, 0.5 * (lo + hi), hi, lo - 1.0, hi + 1.0, 1064.0] {
                let _ = model.refractive_index(lambda, 25.0);
                let _ = model.group_index(lambda, 25.0);
            }
        }
    }
});
