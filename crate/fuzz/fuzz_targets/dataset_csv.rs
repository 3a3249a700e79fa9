#![no_main]

use dephasing::DataSet;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    let Ok(ds) = DataSet::from_csv_str(s) else { return };
    let text = ds.to_csv_string().expect("serialize parsed dataset");
    let again = DataSet::from_csv_str(&text).expect("reparse own output");
    assert_eq!(ds, again);
});
