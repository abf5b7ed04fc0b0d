#![no_main]
use libfuzzer_sys::fuzz_target;
use musmse::config::parse_snr_list;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(values) = parse_snr_list(text) {
        assert!(!values.is_empty());
        assert!(values.iter().all(|v| v.is_finite()));
        let joined = values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        assert_eq!(parse_snr_list(&joined).expect("formatted list parses"), values);
    }
});
