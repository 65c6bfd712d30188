#![no_main]

use libfuzzer_sys::fuzz_target;
use sharpflow::symbol::SymbolTable;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = SymbolTable::read_csv(data) {
        assert!(!t.rows.is_empty());
        assert!(t.rows.windows(2).all(|w| w[0].lambda < w[1].lambda));
        let first = t.rows[0].lambda;
        let _ = t.interpolate(first);
        let _ = t.interpolate(first * 3.0 + 1.0);
        let again = SymbolTable::from_csv_str(&t.to_csv()).expect("own output re-parses");
        assert_eq!(again.rows.len(), t.rows.len());
    }
});
