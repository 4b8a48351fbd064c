#![no_main]

use libfuzzer_sys::fuzz_target;
use povi::io::config::parse_run_config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = parse_run_config(text) {
        // anything accepted must survive its own serialization
        let again = parse_run_config(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }
});
