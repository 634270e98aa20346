#![no_main]

use libfuzzer_sys::fuzz_target;
use rodiac::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = RunConfig::parse(text, "") else { return };
    let _ = cfg.validate();
    let _ = RunConfig::parse(&cfg.to_text(), "").unwrap();
});
