#![no_main]

use libfuzzer_sys::fuzz_target;
use seesaw_cli::output::read_trajectory_csv;

fuzz_target!(|data: &str| {
    if let Ok(points) = read_trajectory_csv(data) {
        assert!(!points.is_empty());
    }
});
