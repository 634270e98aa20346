#![no_main]

use libfuzzer_sys::fuzz_target;
use rodiac::embeddings::EmbeddingTable;

fuzz_target!(|data: &[u8]| {
    let Ok(table) = EmbeddingTable::read_cache(data) else { return };
    let mut once = Vec::new();
    table.write_cache(&mut once).unwrap();
    let mut twice = Vec::new();
    EmbeddingTable::read_cache(once.as_slice()).unwrap().write_cache(&mut twice).unwrap();
    assert_eq!(once, twice);
});
