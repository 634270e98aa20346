//! From normalized sentences to labeled examples.
//!
//! Every occurrence of a target letter becomes one example: a window of
//! character ids around it (taken over the diacritic-free sentence), the
//! embedding row of the word containing it, and the embedding rows of the
//! sentence's words. Labels come from the diacritics present in the input.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::textnorm::{apply_mark, classify_char, strip_char, DiacriticClass, Sentence, TargetLetter, LETTERS};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;

pub const DEFAULT_WINDOW: usize = 13;
pub const DEFAULT_MAX_SENT: usize = 31;

/// Character vocabulary over diacritic-free text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharVocab {
    /// Characters with their own id; `chars[i]` has id `i + 2`.
    chars: Vec<char>,
    id_of: HashMap<char, u32>,
}

impl CharVocab {
    pub fn from_chars(chars: Vec<char>) -> Result<CharVocab> {
        let mut id_of = HashMap::with_capacity(chars.len());
        for (i, &c) in chars.iter().enumerate() {
            if id_of.insert(c, i as u32 + 2).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary character {c:?}")));
            }
        }
        Ok(CharVocab { chars, id_of })
    }

    pub fn size(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn id(&self, c: char) -> u32 {
        self.id_of.get(&c).copied().unwrap_or(UNK)
    }

    pub fn char_of(&self, id: u32) -> Option<char> {
        id.checked_sub(2).and_then(|i| self.chars.get(i as usize)).copied()
    }

    /// Characters in id order, excluding PAD and UNK.
    pub fn chars(&self) -> &[char] {
        &self.chars
    }
}

/// Counts characters of the stripped sentences; characters seen at least
/// `min_freq` times get ids ordered by (frequency desc, code point asc).
pub fn build_char_vocab<'a>(sentences: impl IntoIterator<Item = &'a Sentence>, min_freq: usize) -> Result<CharVocab> {
    let mut counts: HashMap<char, usize> = HashMap::new();
    for s in sentences {
        for c in s.raw_text.chars() {
            *counts.entry(strip_char(c)).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::Data("cannot build a character vocabulary from an empty corpus".into()));
    }
    let mut kept: Vec<(char, usize)> = counts.into_iter().filter(|&(_, n)| n >= min_freq.max(1)).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    CharVocab::from_chars(kept.into_iter().map(|(c, _)| c).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TargetInstance {
    pub sentence_index: usize,
    /// Code-point index into the stripped sentence.
    pub char_pos: usize,
    pub token_index: usize,
    pub base: TargetLetter,
    pub gold: DiacriticClass,
}

/// All target letters of `sentence`, left to right.
pub fn extract_targets(sentence: &Sentence, sentence_index: usize) -> Vec<TargetInstance> {
    sentence
        .raw_text
        .chars()
        .enumerate()
        .filter_map(|(pos, c)| {
            let (base, gold) = classify_char(c)?;
            let token_index = sentence.token_at(pos)?;
            Some(TargetInstance { sentence_index, char_pos: pos, token_index, base, gold })
        })
        .collect()
}

/// Window and sentence-length limits of the model input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExampleShape {
    pub window: usize,
    pub max_sent: usize,
}

impl Default for ExampleShape {
    fn default() -> Self {
        ExampleShape { window: DEFAULT_WINDOW, max_sent: DEFAULT_MAX_SENT }
    }
}

/// Model input for one target letter. Word vectors are referenced by row
/// in the [`EmbeddingTable`] the example was built against.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub window_ids: Box<[u32]>,
    pub word_row: u32,
    /// Embedding rows of the (possibly truncated) sentence, at least one.
    pub sent_rows: Arc<[u32]>,
    /// Position of the current word inside `sent_rows`.
    pub word_pos: usize,
    pub base: TargetLetter,
    pub gold: DiacriticClass,
}

/// `[start, end)` of the at most `max_sent` tokens kept around `token_index`.
/// The window is centered on the current token (an even window leans
/// left) and shifted inward at the sentence edges.
pub fn sentence_window(n_tokens: usize, token_index: usize, max_sent: usize) -> (usize, usize) {
    if n_tokens <= max_sent {
        return (0, n_tokens);
    }
    let left = max_sent / 2;
    let start = token_index.saturating_sub(left).min(n_tokens - max_sent);
    (start, start + max_sent)
}

/// Character ids of `stripped[pos - w/2 ..= pos + w/2]`, PAD outside.
pub fn char_window(stripped: &[char], pos: usize, window: usize, vocab: &CharVocab) -> Box<[u32]> {
    let half = window / 2;
    (0..window)
        .map(|k| {
            (pos + k).checked_sub(half).and_then(|i| stripped.get(i)).map_or(PAD, |&c| vocab.id(c))
        })
        .collect()
}

pub fn make_example(
    sentence: &Sentence,
    target: &TargetInstance,
    vocab: &CharVocab,
    emb: &EmbeddingTable,
    shape: ExampleShape,
) -> Example {
    let rows: Vec<u32> = sentence.tokens.iter().map(|t| emb.row_of(&t.stripped_lower)).collect();
    let (start, end) = sentence_window(rows.len(), target.token_index, shape.max_sent);
    let stripped = sentence.stripped_chars();
    Example {
        window_ids: char_window(&stripped, target.char_pos, shape.window, vocab),
        word_row: rows[target.token_index],
        sent_rows: rows[start..end].into(),
        word_pos: target.token_index - start,
        base: target.base,
        gold: target.gold,
    }
}

/// Examples for every target of one sentence. Targets sharing the same
/// sentence window share one `sent_rows` allocation.
pub fn featurize_sentence(
    sentence: &Sentence,
    targets: &[TargetInstance],
    vocab: &CharVocab,
    emb: &EmbeddingTable,
    shape: ExampleShape,
) -> Vec<Example> {
    let rows: Vec<u32> = sentence.tokens.iter().map(|t| emb.row_of(&t.stripped_lower)).collect();
    let stripped = sentence.stripped_chars();
    let mut shared: HashMap<usize, Arc<[u32]>> = HashMap::new();
    targets
        .iter()
        .map(|t| {
            let (start, end) = sentence_window(rows.len(), t.token_index, shape.max_sent);
            let sent_rows = shared.entry(start).or_insert_with(|| rows[start..end].into()).clone();
            Example {
                window_ids: char_window(&stripped, t.char_pos, shape.window, vocab),
                word_row: rows[t.token_index],
                sent_rows,
                word_pos: t.token_index - start,
                base: t.base,
                gold: t.gold,
            }
        })
        .collect()
}

/// Targets and examples for a whole corpus, in sentence order.
#[derive(Debug, Clone, Default)]
pub struct Featurized {
    pub targets: Vec<TargetInstance>,
    pub examples: Vec<Example>,
}

pub fn featurize(sentences: &[Sentence], vocab: &CharVocab, emb: &EmbeddingTable, shape: ExampleShape) -> Featurized {
    let mut out = Featurized::default();
    for (i, s) in sentences.iter().enumerate() {
        let targets = extract_targets(s, i);
        out.examples.extend(featurize_sentence(s, &targets, vocab, emb, shape));
        out.targets.extend(targets);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, dev: f64, test: f64, seed: u64) -> Result<SplitSpec> {
        let spec = SplitSpec { train, dev, test, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.dev, self.test];
        if r.iter().any(|x| !(0.0..=1.0).contains(x)) || ((r[0] + r[1] + r[2]) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios {r:?} must lie in [0, 1] and sum to 1")));
        }
        Ok(())
    }

    /// Parses `train,dev,test`, e.g. `0.8,0.1,0.1`.
    pub fn parse(ratios: &str, seed: u64) -> Result<SplitSpec> {
        let parts: Vec<f64> = ratios
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("bad split ratios {ratios:?}")))?;
        match parts[..] {
            [a, b, c] => SplitSpec::new(a, b, c, seed),
            _ => Err(Error::Config(format!("expected three split ratios, got {ratios:?}"))),
        }
    }

    pub fn assign(&self, index: usize) -> Split {
        let u = unit_hash(self.seed, index as u64);
        if u < self.train {
            Split::Train
        } else if u < self.train + self.dev {
            Split::Dev
        } else {
            Split::Test
        }
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train: 0.8, dev: 0.1, test: 0.1, seed: 0 }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic pseudo-uniform value in [0, 1) for `(seed, index)`.
fn unit_hash(seed: u64, index: u64) -> f64 {
    let h = splitmix64(seed ^ splitmix64(index));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Partitions sentence indices `0..n` into (train, dev, test).
pub fn split_corpus(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    spec.validate()?;
    let (mut train, mut dev, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        match spec.assign(i) {
            Split::Train => train.push(i),
            Split::Dev => dev.push(i),
            Split::Test => test.push(i),
        }
    }
    Ok((train, dev, test))
}

/// Shuffled index batches over `0..n`; all full except possibly the last.
pub fn batches(n: usize, batch_size: usize, shuffle_seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Fraction of target letters carrying a diacritic, `None` when the
/// sentence has no target letters.
pub fn diacritic_ratio(sentence: &str) -> Option<f64> {
    let (mut marked, mut total) = (0usize, 0usize);
    for c in sentence.chars() {
        if let Some((_, class)) = classify_char(c) {
            total += 1;
            marked += usize::from(class != DiacriticClass::None);
        }
    }
    (total > 0).then(|| marked as f64 / total as f64)
}

/// Occurrences of each of the nine letters (case-insensitive), in
/// [`LETTERS`] order.
pub fn letter_histogram<'a>(texts: impl IntoIterator<Item = &'a str>) -> [usize; 9] {
    let mut hist = [0usize; 9];
    for t in texts {
        for c in t.chars() {
            if let Some((base, class)) = classify_char(c) {
                hist[crate::textnorm::letter_index(base, class).expect("classified pairs are valid")] += 1;
            }
        }
    }
    hist
}

/// Re-applies gold labels to the stripped text of a sentence.
pub fn restore_gold(sentence: &Sentence, targets: &[TargetInstance]) -> Result<String> {
    let mut chars = sentence.stripped_chars();
    for t in targets {
        chars[t.char_pos] = apply_mark(chars[t.char_pos], t.gold)?;
    }
    Ok(chars.into_iter().collect())
}

pub const SENTENCES_FILE: &str = "sentences.txt";
pub const MANIFEST_FILE: &str = "split.tsv";

pub fn write_manifest<W: Write>(mut w: W, splits: &[Split]) -> Result<()> {
    for (i, s) in splits.iter().enumerate() {
        writeln!(w, "{}\t{}", i + 1, s)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses `<line_number>\t<split>` lines (1-based). Every line number in
/// `1..=n` must appear exactly once, in any order.
pub fn read_manifest<R: BufRead>(reader: R) -> Result<Vec<Split>> {
    let mut entries: Vec<(usize, Split)> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let (num, split) =
            line.split_once('\t').ok_or_else(|| Error::Parse { line: i + 1, msg: "expected <line>\\t<split>".into() })?;
        let num: usize = num
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Parse { line: i + 1, msg: format!("bad line number {num:?}") })?;
        let split = split.parse().map_err(|e: Error| Error::Parse { line: i + 1, msg: e.to_string() })?;
        entries.push((num, split));
    }
    let mut out = vec![None; entries.len()];
    for (num, split) in entries {
        match out.get_mut(num - 1) {
            Some(slot @ None) => *slot = Some(split),
            Some(Some(_)) => return Err(Error::Data(format!("split manifest lists line {num} twice"))),
            None => return Err(Error::Data(format!("split manifest line number {num} out of range"))),
        }
    }
    Ok(out.into_iter().map(|s| s.expect("every slot filled")).collect())
}

/// Prepared corpus: one normalized sentence per line plus its split.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub sentences: Vec<Sentence>,
    pub splits: Vec<Split>,
}

impl PreparedData {
    pub fn load(dir: impl AsRef<Path>) -> Result<PreparedData> {
        let dir = dir.as_ref();
        let text_path = dir.join(SENTENCES_FILE);
        let text = fs::read(&text_path).map_err(|e| Error::io(&text_path, e))?;
        let text = String::from_utf8(text).map_err(|e| Error::Utf8 { offset: e.utf8_error().valid_up_to() })?;
        let sentences: Vec<Sentence> = text.lines().map(Sentence::new).collect();
        let manifest_path = dir.join(MANIFEST_FILE);
        let file = fs::File::open(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let splits = read_manifest(std::io::BufReader::new(file))?;
        if splits.len() != sentences.len() {
            return Err(Error::Data(format!(
                "{} lists {} lines but {} has {}",
                manifest_path.display(),
                splits.len(),
                text_path.display(),
                sentences.len()
            )));
        }
        Ok(PreparedData { sentences, splits })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let text_path = dir.join(SENTENCES_FILE);
        let mut text = String::new();
        for s in &self.sentences {
            text.push_str(&s.raw_text);
            text.push('\n');
        }
        fs::write(&text_path, text).map_err(|e| Error::io(&text_path, e))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        let file = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        write_manifest(std::io::BufWriter::new(file), &self.splits)
    }

    pub fn subset(&self, split: Split) -> Vec<Sentence> {
        self.sentences.iter().zip(&self.splits).filter(|(_, &s)| s == split).map(|(s, _)| s.clone()).collect()
    }
}

/// Letter of `LETTERS` for a target, lowercase.
pub fn letter_of(base: TargetLetter, class: DiacriticClass) -> char {
    LETTERS[crate::textnorm::letter_index(base, class).expect("valid class for base")]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::{build_stripped_table, RawVectorTable};
    use crate::textnorm::split_sentences;
    use proptest::prelude::*;

    fn sentences(text: &str) -> Vec<Sentence> {
        split_sentences(text)
    }

    #[test]
    fn vocab_examples() {
        let s = [Sentence::new("aa b")];
        let v = build_char_vocab(&s, 1).unwrap();
        assert_eq!(v.size(), 5);
        assert_eq!(v.chars(), &['a', ' ', 'b']);
        assert_eq!(v.id('a'), 2);
        let v = build_char_vocab(&s, 2).unwrap();
        assert_eq!(v.size(), 3);
        assert_eq!(v.id('b'), UNK);
        assert_eq!(v.id(' '), UNK);
        assert!(build_char_vocab(&[Sentence::new("")], 1).is_err());
        assert!(build_char_vocab(&[], 1).is_err());
    }

    #[test]
    fn vocab_is_built_on_stripped_text() {
        let v = build_char_vocab(&[Sentence::new("ăa")], 1).unwrap();
        assert_eq!(v.chars(), &['a']);
    }

    #[test]
    fn extract_examples() {
        use DiacriticClass::*;
        let t = extract_targets(&Sentence::new("față"), 0);
        let got: Vec<_> = t.iter().map(|t| (t.char_pos, t.base, t.gold)).collect();
        assert_eq!(got, vec![(1, TargetLetter::A, None), (2, TargetLetter::T, CommaBelow), (3, TargetLetter::A, Breve)]);
        assert!(extract_targets(&Sentence::new("xyz"), 0).is_empty());
        let t = extract_targets(&Sentence::new("Î"), 4);
        assert_eq!((t[0].sentence_index, t[0].char_pos, t[0].base, t[0].gold), (4, 0, TargetLetter::I, Circumflex));
    }

    #[test]
    fn window_is_centered_with_padding() {
        let s = Sentence::new("o cana");
        let vocab = build_char_vocab(&[s.clone()], 1).unwrap();
        let emb = EmbeddingTable::empty(2);
        let t = extract_targets(&s, 0);
        let target = t.iter().find(|t| t.char_pos == 3).unwrap();
        let ex = make_example(&s, target, &vocab, &emb, ExampleShape::default());
        let decoded: Vec<Option<char>> = ex.window_ids.iter().map(|&id| vocab.char_of(id)).collect();
        let expected = [None, None, None, Some('o'), Some(' '), Some('c'), Some('a'), Some('n'), Some('a'), None, None, None, None];
        assert_eq!(decoded, expected);
        assert!(ex.window_ids.iter().zip(expected).all(|(&id, e)| e.is_some() || id == PAD));

        let s = Sentence::new("a");
        let vocab = build_char_vocab(&[s.clone()], 1).unwrap();
        let ex = make_example(&s, &extract_targets(&s, 0)[0], &vocab, &emb, ExampleShape::default());
        let mut want = vec![PAD; 13];
        want[6] = vocab.id('a');
        assert_eq!(&*ex.window_ids, &want[..]);
    }

    #[test]
    fn sentence_truncation_centers_on_word() {
        assert_eq!(sentence_window(40, 0, 31), (0, 31));
        assert_eq!(sentence_window(40, 39, 31), (9, 40));
        assert_eq!(sentence_window(40, 20, 31), (5, 36));
        assert_eq!(sentence_window(10, 3, 31), (0, 10));
        // even window: 4 left, 3 right
        assert_eq!(sentence_window(20, 10, 8), (6, 14));

        let words: Vec<String> = (0..40).map(|i| format!("w{}", "a".repeat(i % 7 + 1))).collect();
        let s = Sentence::new(words.join(" "));
        let mut raw = RawVectorTable::new(1);
        for (i, w) in words.iter().enumerate() {
            raw.insert(w, &[i as f32]).unwrap();
        }
        let emb = build_stripped_table(&raw);
        let vocab = build_char_vocab(&[s.clone()], 1).unwrap();
        let targets = extract_targets(&s, 0);
        let first = make_example(&s, &targets[0], &vocab, &emb, ExampleShape::default());
        let expected: Vec<u32> = s.tokens[..31].iter().map(|t| emb.row_of(&t.stripped_lower)).collect();
        assert_eq!(&*first.sent_rows, &expected[..]);
        assert_eq!(first.word_pos, 0);
    }

    #[test]
    fn featurize_shares_sentence_rows() {
        let s = Sentence::new("Ana are mere și pâine.");
        let vocab = build_char_vocab(&[s.clone()], 1).unwrap();
        let emb = EmbeddingTable::empty(3);
        let targets = extract_targets(&s, 0);
        let ex = featurize_sentence(&s, &targets, &vocab, &emb, ExampleShape::default());
        assert_eq!(ex.len(), targets.len());
        assert!(ex.windows(2).all(|w| Arc::ptr_eq(&w[0].sent_rows, &w[1].sent_rows)));
        for (e, t) in ex.iter().zip(&targets) {
            assert_eq!(*e, make_example(&s, t, &vocab, &emb, ExampleShape::default()));
        }
    }

    #[test]
    fn split_examples() {
        let spec = SplitSpec::new(0.8, 0.1, 0.1, 7).unwrap();
        let (a, b, c) = split_corpus(10, &spec).unwrap();
        let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split_corpus(10, &spec).unwrap(), (a, b, c));

        let (_, _, test) = split_corpus(100, &SplitSpec::new(0.5, 0.5, 0.0, 1).unwrap()).unwrap();
        assert!(test.is_empty());
        assert!(SplitSpec::new(0.8, 0.05, 0.05, 0).is_err());
        assert!(SplitSpec::parse("0.8,0.1", 0).is_err());
        assert!(SplitSpec::parse("0.8,0.1,0.1", 0).is_ok());
    }

    #[test]
    fn split_proportions_are_roughly_right() {
        let (a, b, c) = split_corpus(20_000, &SplitSpec::default()).unwrap();
        assert!((a.len() as f64 / 20_000.0 - 0.8).abs() < 0.02);
        assert!((b.len() as f64 / 20_000.0 - 0.1).abs() < 0.02);
        assert!((c.len() as f64 / 20_000.0 - 0.1).abs() < 0.02);
    }

    #[test]
    fn batch_examples() {
        let sizes: Vec<usize> = batches(600, 256, 1).unwrap().iter().map(Vec::len).collect();
        assert_eq!(sizes, [256, 256, 88]);
        assert_eq!(batches(10, 256, 1).unwrap().len(), 1);
        assert_eq!(batches(600, 256, 3).unwrap(), batches(600, 256, 3).unwrap());
        assert_ne!(batches(600, 256, 3).unwrap(), batches(600, 256, 4).unwrap());
        assert!(batches(5, 0, 0).is_err());
    }

    #[test]
    fn manifest_round_trip_and_validation() {
        let splits = vec![Split::Train, Split::Test, Split::Dev];
        let mut buf = Vec::new();
        write_manifest(&mut buf, &splits).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "1\ttrain\n2\ttest\n3\tdev\n");
        assert_eq!(read_manifest(buf.as_slice()).unwrap(), splits);
        assert!(read_manifest("1\ttrain\n1\tdev\n".as_bytes()).is_err());
        assert!(read_manifest("2\ttrain\n".as_bytes()).is_err());
        assert!(read_manifest("1 train\n".as_bytes()).is_err());
        assert!(read_manifest("0\ttrain\n".as_bytes()).is_err());
        assert!(read_manifest("1\tvalid\n".as_bytes()).is_err());
    }

    #[test]
    fn ratio_and_histogram() {
        assert_eq!(diacritic_ratio("xyz"), None);
        assert_eq!(diacritic_ratio("față"), Some(2.0 / 3.0));
        assert_eq!(letter_histogram(["ăĂa", "țst"]), [1, 2, 0, 0, 0, 1, 0, 1, 1]);
    }

    #[test]
    fn gold_restoration_round_trips_corpus() {
        let text = "Învățământul românesc își schimbă structura. Ştiinţa şi tehnica avansează! Țara are nevoie de oameni.";
        for (i, s) in sentences(&crate::textnorm::normalize(text)).iter().enumerate() {
            let targets = extract_targets(s, i);
            assert_eq!(restore_gold(s, &targets).unwrap(), s.raw_text);
        }
    }

    proptest! {
        #[test]
        fn target_count_matches_brute_force(text in "[a-zA-ZăâîșțĂÂÎȘȚ ,\\.\\-]{0,80}") {
            let s = Sentence::new(text.clone());
            let brute = text.chars().filter(|c| "aăâiîsștțAĂÂIÎSȘTȚ".contains(*c)).count();
            let targets = extract_targets(&s, 0);
            prop_assert_eq!(targets.len(), brute);
            prop_assert_eq!(restore_gold(&s, &targets).unwrap(), text);
        }

        #[test]
        fn windows_decode_to_slices(text in "[a-zăâîșț \\.]{1,40}", min_freq in 1usize..3) {
            let s = Sentence::new(text);
            let vocab = build_char_vocab(&[s.clone()], min_freq).unwrap();
            let stripped = s.stripped_chars();
            let emb = EmbeddingTable::empty(1);
            for t in extract_targets(&s, 0) {
                let ex = make_example(&s, &t, &vocab, &emb, ExampleShape::default());
                prop_assert_eq!(ex.window_ids.len(), 13);
                for (k, &id) in ex.window_ids.iter().enumerate() {
                    match (t.char_pos + k).checked_sub(6).and_then(|i| stripped.get(i)) {
                        Some(&c) => prop_assert_eq!(id, vocab.id(c)),
                        None => prop_assert_eq!(id, PAD),
                    }
                }
                prop_assert!(!ex.sent_rows.is_empty() && ex.sent_rows.len() <= 31);
            }
        }

        #[test]
        fn splits_partition(n in 0usize..300, seed in any::<u64>()) {
            let (a, b, c) = split_corpus(n, &SplitSpec { seed, ..SplitSpec::default() }).unwrap();
            let mut all: Vec<usize> = a.into_iter().chain(b).chain(c).collect();
            all.sort();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn batches_cover_input(n in 0usize..1000, size in 1usize..300, seed in any::<u64>()) {
            let bs = batches(n, size, seed).unwrap();
            prop_assert!(bs.iter().rev().skip(1).all(|b| b.len() == size));
            let mut all: Vec<usize> = bs.into_iter().flatten().collect();
            all.sort();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
