#![no_main]

use fastfca::io::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = RunConfig::parse(text) {
        // anything that parses must survive a round trip
        let again = RunConfig::parse(&config.to_config_string()).expect("printed config parses");
        assert_eq!(again, config);
    }
});
