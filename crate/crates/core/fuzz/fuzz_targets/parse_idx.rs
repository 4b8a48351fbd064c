#![no_main]

use libfuzzer_sys::fuzz_target;
use povi::io::idx::{encode_idx, parse_idx};

fuzz_target!(|data: &[u8]| {
    match parse_idx(data) {
        Ok(t) => assert_eq!(encode_idx(&t), data),
        Err(e) => assert!(e.offset <= data.len()),
    }
});
