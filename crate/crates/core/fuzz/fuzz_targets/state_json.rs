#![no_main]

use libfuzzer_sys::fuzz_target;
use qforge::fock::StateVector;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(value) = StateVector::from_json(text) {
        let again = StateVector::from_json(&value.to_json()).expect("serialized value parses");
        assert_eq!(again, value);
    }
});
