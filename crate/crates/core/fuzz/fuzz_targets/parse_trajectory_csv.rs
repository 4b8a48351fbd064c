#![no_main]

use libfuzzer_sys::fuzz_target;
use povi::io::report::{parse_trajectory_csv, trajectory_csv};

fuzz_target!(|data: &[u8]| {
    match parse_trajectory_csv(data) {
        Ok(t) => {
            let back = parse_trajectory_csv(trajectory_csv(&t).as_bytes()).unwrap();
            assert_eq!(back.snapshots.len(), t.snapshots.len());
        }
        Err(e) => assert!(e.offset <= data.len()),
    }
});
