#![no_main]

use libfuzzer_sys::fuzz_target;
use sharpflow::coeffs::{check_hypotheses, CoefficientSet};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = CoefficientSet::from_json_str(text) {
        let again = CoefficientSet::from_config(c.to_config()).expect("own config re-parses");
        assert_eq!(again.config_hash(), c.config_hash());
        let _ = check_hypotheses(&c, 11);
    }
});
