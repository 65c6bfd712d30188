#![no_main]

use libfuzzer_sys::fuzz_target;
use sharpflow::symbol::LawId;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(id) = text.parse::<LawId>() {
        assert_eq!(id.to_string().parse::<LawId>().expect("display re-parses"), id);
    }
});
