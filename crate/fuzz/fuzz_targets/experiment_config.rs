#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use saddle_exit::experiment::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // Parsing only; preparing would read the referenced system file.
    let _ = ExperimentConfig::parse(text, Path::new("."));
});
