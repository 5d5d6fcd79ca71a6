#![no_main]
use libfuzzer_sys::fuzz_target;
use taborder::dag::is_permutation;
use taborder::rng::{substream, Stream};
use taborder_cli::order_spec::OrderSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(spec) = text.parse::<OrderSpec>() else { return };
    assert_eq!(spec.to_string().parse::<OrderSpec>().expect("display parses"), spec);
    if let OrderSpec::Explicit(o) = &spec {
        let d = o.len();
        let orders = spec.resolve(None, d, &mut substream(0, Stream::Eval, 0)).expect("explicit resolves");
        assert!(orders.iter().all(|l| is_permutation(&l.order, d)));
    }
});
