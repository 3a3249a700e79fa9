#![no_main]

use dephasing::sim::Sidecar;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(side) = serde_json::from_slice::<Sidecar>(data) else { return };
    if let Some(m) = side.model_truth {
        let _ = m.validate();
    }
});
