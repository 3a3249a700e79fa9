#![no_main]

use dephasing::NoiseModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(m) = serde_json::from_slice::<NoiseModel>(data) else { return };
    if m.validate().is_ok() {
        let json = serde_json::to_string(&m).expect("serialize model");
        assert_eq!(serde_json::from_str::<NoiseModel>(&json).expect("reparse model"), m);
    }
});
