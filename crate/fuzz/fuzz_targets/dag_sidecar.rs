#![no_main]
use libfuzzer_sys::fuzz_target;
use taborder_cli::sidecar::DagSidecar;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(s) = DagSidecar::from_json(text) {
        let dag = s.dag().expect("validated on parse");
        assert!(dag.is_topological(dag.topo_order()));
        assert_eq!(DagSidecar::from_json(&s.to_json()).expect("own output parses"), s);
    }
});
