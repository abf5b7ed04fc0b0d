#![no_main]
use libfuzzer_sys::fuzz_target;
use musmse::energy::{parse_policy_list, AllocationPolicy};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(policies) = parse_policy_list(text) {
        for p in &policies {
            if let AllocationPolicy::FixedTraining(e) = p {
                assert!(e.is_finite() && *e >= 0.0);
            }
            assert_eq!(p.to_string().parse::<AllocationPolicy>().expect("display parses"), *p);
        }
    }
});
