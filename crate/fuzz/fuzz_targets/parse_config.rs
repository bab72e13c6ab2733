#![no_main]

use libfuzzer_sys::fuzz_target;
use seesaw_cli::config::parse_config;

fuzz_target!(|data: &str| {
    // Anything that validates must also build its problem and schedules.
    if let Ok(config) = parse_config(data) {
        config.build_problem().expect("validated problem builds");
        for name in config.selected_schedules() {
            config.build_schedule(&name).expect("validated schedule builds");
        }
    }
});
