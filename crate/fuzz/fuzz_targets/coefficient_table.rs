#![no_main]

use libfuzzer_sys::fuzz_target;
use saddle_exit::normal_form::{coefficient_table, parse_coefficient_table};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(field) = parse_coefficient_table(text) {
        // Whatever parses must survive a round trip unchanged.
        let records = coefficient_table(&field);
        let again = serde_json::to_string(&records).unwrap();
        assert_eq!(parse_coefficient_table(&again).unwrap(), field);
    }
});
