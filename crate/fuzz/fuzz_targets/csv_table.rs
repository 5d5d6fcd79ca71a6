#![no_main]
use libfuzzer_sys::fuzz_target;
use taborder::Table;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = Table::from_csv_bytes(data) {
        let again = Table::from_csv_bytes(t.to_csv_string().as_bytes()).expect("own output parses");
        assert_eq!(again, t);
    }
});
