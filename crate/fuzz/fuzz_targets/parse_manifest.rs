#![no_main]
use libfuzzer_sys::fuzz_target;
use musmse_cli::manifest::parse_manifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(manifest) = parse_manifest(text) {
        let again = parse_manifest(&manifest.to_json()).expect("serialized manifest parses");
        assert_eq!(again, manifest);
    }
});
