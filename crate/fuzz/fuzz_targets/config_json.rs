#![no_main]

use dephasing::bayes::ProtocolConfig;
use dephasing::frequentist::FitConfig;
use dephasing::harness::ComparisonSpec;
use dephasing::Family;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(spec) = serde_json::from_slice::<ComparisonSpec>(data) {
        if spec.validate().is_ok() {
            let _ = spec.frequentist_schedule();
            let _ = spec.protocol_config(0).validate();
        }
    }
    if let Ok(cfg) = serde_json::from_slice::<ProtocolConfig>(data) {
        let _ = cfg.validate();
    }
    if let Ok(cfg) = serde_json::from_slice::<FitConfig>(data) {
        for family in Family::ALL {
            let _ = cfg.validate(family);
        }
    }
});
