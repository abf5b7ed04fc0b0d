#![no_main]
use libfuzzer_sys::fuzz_target;
use musmse::config::ConfigFile;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(file) = ConfigFile::parse(text) else { return };
    if let Ok(cfg) = file.resolve() {
        let again = ConfigFile::parse(&file.to_toml()).expect("serialized config parses");
        assert_eq!(again.resolve().expect("round trip resolves"), cfg);
    }
});
