#![no_main]

use libfuzzer_sys::fuzz_target;
use perceiver_dla::cli::Config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // any accepted config must survive its own canonical form
    if let Ok(cfg) = Config::parse(text) {
        let again = Config::parse(&cfg.to_text()).expect("canonical text parses");
        assert_eq!(again, cfg);
    }
});
