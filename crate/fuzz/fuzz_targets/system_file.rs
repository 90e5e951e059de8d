#![no_main]

use libfuzzer_sys::fuzz_target;
use saddle_exit::system::validate_system;
use saddle_exit::system_file::parse_system;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(system) = parse_system(text) {
        let _ = validate_system(&system);
    }
});
