#![no_main]

use libfuzzer_sys::fuzz_target;
use qforge::tomo::{read_samples_csv, write_samples_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(samples) = read_samples_csv(data) {
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, &samples, &[]).expect("writing to memory");
        assert_eq!(read_samples_csv(buf.as_slice()).expect("written samples parse"), samples);
    }
});
