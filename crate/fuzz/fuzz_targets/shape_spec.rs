#![no_main]

use libfuzzer_sys::fuzz_target;
use sharpflow::flow::ShapeSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(s) = text.parse::<ShapeSpec>() {
        let back: ShapeSpec = s.to_string().parse().expect("display re-parses");
        assert_eq!(back, s);
        let pts = s.sample(32);
        assert_eq!(pts.len(), 32);
    }
});
