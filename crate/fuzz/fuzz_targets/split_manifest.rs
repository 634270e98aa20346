#![no_main]

use libfuzzer_sys::fuzz_target;
use rodiac::dataset::{read_manifest, write_manifest};

fuzz_target!(|data: &[u8]| {
    let Ok(splits) = read_manifest(data) else { return };
    let mut out = Vec::new();
    write_manifest(&mut out, &splits).unwrap();
    assert_eq!(read_manifest(out.as_slice()).unwrap(), splits);
});
