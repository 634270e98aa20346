#![no_main]

use libfuzzer_sys::fuzz_target;
use rodiac::dataset::{build_char_vocab, featurize, ExampleShape};
use rodiac::embeddings::EmbeddingTable;
use rodiac::textnorm::{normalize_bytes, split_sentences};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = normalize_bytes(data) else { return };
    let sentences = split_sentences(&text);
    let Ok(vocab) = build_char_vocab(&sentences, 1) else { return };
    let shape = ExampleShape::default();
    let f = featurize(&sentences, &vocab, &EmbeddingTable::empty(4), shape);
    assert_eq!(f.targets.len(), f.examples.len());
    for ex in &f.examples {
        assert_eq!(ex.window_ids.len(), shape.window);
        assert!(ex.word_pos < ex.sent_rows.len() && ex.sent_rows.len() <= shape.max_sent);
    }
});
