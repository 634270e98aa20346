#![no_main]

use libfuzzer_sys::fuzz_target;
use rodiac::embeddings::{build_stripped_table, read_vectors, EmbeddingTable};

fuzz_target!(|data: &[u8]| {
    let Ok(raw) = read_vectors(data) else { return };
    let table = build_stripped_table(&raw);
    assert_eq!(table.dim(), raw.dim());
    let mut bytes = Vec::new();
    table.write_cache(&mut bytes).unwrap();
    let back = EmbeddingTable::read_cache(bytes.as_slice()).unwrap();
    assert_eq!(back.keys(), table.keys());
});
