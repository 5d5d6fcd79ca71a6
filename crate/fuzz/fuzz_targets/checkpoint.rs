#![no_main]
use libfuzzer_sys::fuzz_target;
use taborder::training::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::<f32>::from_bytes(data) {
        let bytes = ck.to_bytes();
        assert_eq!(Checkpoint::<f32>::from_bytes(&bytes).expect("own output parses"), ck);
    }
    if let Ok(ck) = Checkpoint::<f64>::from_bytes(data) {
        let bytes = ck.to_bytes();
        assert_eq!(Checkpoint::<f64>::from_bytes(&bytes).expect("own output parses"), ck);
    }
});
