#![no_main]

use libfuzzer_sys::fuzz_target;
use rodiac::model::Checkpoint;

fuzz_target!(|data: &[u8]| {
    let Ok(ck) = Checkpoint::read(data) else { return };
    let mut once = Vec::new();
    ck.write(&mut once).unwrap();
    let mut twice = Vec::new();
    Checkpoint::read(once.as_slice()).unwrap().write(&mut twice).unwrap();
    assert_eq!(once, twice);
});
