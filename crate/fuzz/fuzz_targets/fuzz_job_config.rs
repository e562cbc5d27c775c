//! Job-config parsing must never panic, and accepted configs must survive
//! a serialize/reparse round trip.

#![no_main]

use libfuzzer_sys::fuzz_target;
use srs_qmetro::config::JobConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = JobConfig::from_toml_str(text) {
        let serialized = cfg.to_toml_string().expect("accepted config must serialize");
        let reparsed =
            JobConfig::from_toml_str(&serialized).expect("serialized config must reparse");
        assert_eq!(reparsed.command, cfg.command);
        assert_eq!(reparsed.seed, cfg.seed);
    }
});
