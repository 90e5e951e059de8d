#![no_main]

use libfuzzer_sys::fuzz_target;
use saddle_exit::sde::{read_samples_csv, write_samples_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(samples) = read_samples_csv(data) {
        let mut out = Vec::new();
        write_samples_csv(&mut out, &samples).unwrap();
        let again = read_samples_csv(out.as_slice()).unwrap();
        assert_eq!(again.len(), samples.len());
    }
});
