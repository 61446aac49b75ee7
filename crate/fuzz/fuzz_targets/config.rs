#![no_main]

use libfuzzer_sys::fuzz_target;
use mffilter::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = ExperimentConfig::parse(text) {
        // the resolved form must parse back to itself
        let resolved = config.resolved_toml();
        let again = ExperimentConfig::parse(&resolved).expect("resolved config parses");
        assert_eq!(again.resolved_toml(), resolved);
    }
});
