//! Romanian text handling: normalization, diacritic stripping and
//! classification, sentence splitting and tokenization.
//!
//! The nine target characters are `a ă â i î s ș t ț` (plus uppercase).
//! Every one of them decomposes into a [`TargetLetter`] and a
//! [`DiacriticClass`]; [`apply_mark`] is the inverse.

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Base letter at which a restoration decision is made.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TargetLetter {
    A,
    I,
    S,
    T,
}

impl TargetLetter {
    pub const ALL: [TargetLetter; 4] = [TargetLetter::A, TargetLetter::I, TargetLetter::S, TargetLetter::T];

    pub fn lower(self) -> char {
        match self {
            TargetLetter::A => 'a',
            TargetLetter::I => 'i',
            TargetLetter::S => 's',
            TargetLetter::T => 't',
        }
    }

    pub fn from_char(c: char) -> Option<TargetLetter> {
        match c {
            'a' | 'A' => Some(TargetLetter::A),
            'i' | 'I' => Some(TargetLetter::I),
            's' | 'S' => Some(TargetLetter::S),
            't' | 'T' => Some(TargetLetter::T),
            _ => None,
        }
    }

    pub fn valid_classes(self) -> &'static [DiacriticClass] {
        use DiacriticClass::*;
        match self {
            TargetLetter::A => &[None, Breve, Circumflex],
            TargetLetter::I => &[None, Circumflex],
            TargetLetter::S | TargetLetter::T => &[None, CommaBelow],
        }
    }

    /// Validity of each class, indexed by [`DiacriticClass::index`].
    pub fn class_mask(self) -> [bool; 4] {
        let mut mask = [false; 4];
        for class in self.valid_classes() {
            mask[class.index()] = true;
        }
        mask
    }

    pub fn accepts(self, class: DiacriticClass) -> bool {
        self.valid_classes().contains(&class)
    }
}

/// Shared four-way label space. The ordering is also the prediction
/// tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DiacriticClass {
    None,
    Breve,
    Circumflex,
    CommaBelow,
}

impl DiacriticClass {
    pub const ALL: [DiacriticClass; 4] = [
        DiacriticClass::None,
        DiacriticClass::Breve,
        DiacriticClass::Circumflex,
        DiacriticClass::CommaBelow,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<DiacriticClass> {
        Self::ALL.get(i).copied()
    }
}

/// The nine target letters in report order.
pub const LETTERS: [char; 9] = ['a', 'ă', 'â', 'i', 'î', 's', 'ș', 't', 'ț'];

/// Position of `(base, class)` in [`LETTERS`], if the pair is valid.
pub fn letter_index(base: TargetLetter, class: DiacriticClass) -> Option<usize> {
    use DiacriticClass as K;
    use TargetLetter as L;
    Some(match (base, class) {
        (L::A, K::None) => 0,
        (L::A, K::Breve) => 1,
        (L::A, K::Circumflex) => 2,
        (L::I, K::None) => 3,
        (L::I, K::Circumflex) => 4,
        (L::S, K::None) => 5,
        (L::S, K::CommaBelow) => 6,
        (L::T, K::None) => 7,
        (L::T, K::CommaBelow) => 8,
        _ => return None,
    })
}

/// NFC composition followed by folding the legacy cedilla letters
/// (ş ţ Ş Ţ) into their comma-below forms.
pub fn normalize(text: &str) -> String {
    text.nfc().map(fold_cedilla).collect()
}

/// [`normalize`] for raw bytes; rejects invalid UTF-8 with the offending
/// byte offset.
pub fn normalize_bytes(bytes: &[u8]) -> Result<String> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Utf8 { offset: e.valid_up_to() })?;
    Ok(normalize(text))
}

pub fn fold_cedilla(c: char) -> char {
    match c {
        '\u{015F}' => 'ș',
        '\u{015E}' => 'Ș',
        '\u{0163}' => 'ț',
        '\u{0162}' => 'Ț',
        other => other,
    }
}

pub fn strip_char(c: char) -> char {
    match c {
        'ă' | 'â' => 'a',
        'Ă' | 'Â' => 'A',
        'î' => 'i',
        'Î' => 'I',
        'ș' => 's',
        'Ș' => 'S',
        'ț' => 't',
        'Ț' => 'T',
        other => other,
    }
}

/// Removes Romanian diacritics; code-point count is preserved.
pub fn strip_diacritics(text: &str) -> String {
    text.chars().map(strip_char).collect()
}

/// Single-character lowercase. Characters whose lowercase expands to more
/// than one code point are left alone, so lengths stay aligned.
pub fn lower_char(c: char) -> char {
    let mut it = c.to_lowercase();
    match (it.next(), it.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

pub fn strip_lower(text: &str) -> String {
    text.chars().map(|c| strip_char(lower_char(c))).collect()
}

pub fn classify_char(c: char) -> Option<(TargetLetter, DiacriticClass)> {
    use DiacriticClass as K;
    use TargetLetter as L;
    Some(match c {
        'a' | 'A' => (L::A, K::None),
        'ă' | 'Ă' => (L::A, K::Breve),
        'â' | 'Â' => (L::A, K::Circumflex),
        'i' | 'I' => (L::I, K::None),
        'î' | 'Î' => (L::I, K::Circumflex),
        's' | 'S' => (L::S, K::None),
        'ș' | 'Ș' => (L::S, K::CommaBelow),
        't' | 'T' => (L::T, K::None),
        'ț' | 'Ț' => (L::T, K::CommaBelow),
        _ => return None,
    })
}

/// Puts mark `class` on the plain letter `c`, keeping its case.
pub fn apply_mark(c: char, class: DiacriticClass) -> Result<char> {
    use DiacriticClass as K;
    let marked = match (c, class) {
        ('a' | 'A' | 'i' | 'I' | 's' | 'S' | 't' | 'T', K::None) => c,
        ('a', K::Breve) => 'ă',
        ('A', K::Breve) => 'Ă',
        ('a', K::Circumflex) => 'â',
        ('A', K::Circumflex) => 'Â',
        ('i', K::Circumflex) => 'î',
        ('I', K::Circumflex) => 'Î',
        ('s', K::CommaBelow) => 'ș',
        ('S', K::CommaBelow) => 'Ș',
        ('t', K::CommaBelow) => 'ț',
        ('T', K::CommaBelow) => 'Ț',
        _ => return Err(Error::InvalidMark { ch: c, class }),
    };
    Ok(marked)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub stripped_lower: String,
}

impl Token {
    pub fn new(surface: &str) -> Token {
        Token { surface: surface.to_owned(), stripped_lower: strip_lower(surface) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub raw_text: String,
    pub tokens: Vec<Token>,
    /// Per-token `[start, end)` in code points of `raw_text`.
    pub char_offsets: Vec<(usize, usize)>,
    /// Code-point range of `raw_text` within the text it was split from.
    pub span: (usize, usize),
}

impl Sentence {
    pub fn new(raw_text: impl Into<String>) -> Sentence {
        let raw_text = raw_text.into();
        let len = raw_text.chars().count();
        Sentence::with_span(raw_text, (0, len))
    }

    fn with_span(raw_text: String, span: (usize, usize)) -> Sentence {
        let (tokens, char_offsets) = tokenize_with_offsets(&raw_text);
        Sentence { raw_text, tokens, char_offsets, span }
    }

    /// The diacritic-free text the model sees.
    pub fn stripped_chars(&self) -> Vec<char> {
        self.raw_text.chars().map(strip_char).collect()
    }

    /// Index of the token covering code point `pos`.
    pub fn token_at(&self, pos: usize) -> Option<usize> {
        let i = self.char_offsets.partition_point(|&(_, end)| end <= pos);
        match self.char_offsets.get(i) {
            Some(&(start, _)) if start <= pos => Some(i),
            _ => None,
        }
    }
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Splits after `.`, `!` or `?` when followed by whitespace or the end of
/// the text. Abbreviations are not special-cased.
pub fn split_sentences(text: &str) -> Vec<Sentence> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    for i in 0..chars.len() {
        let boundary = is_terminator(chars[i]) && chars.get(i + 1).map_or(true, |c| c.is_whitespace());
        if boundary {
            push_trimmed(&chars, start, i + 1, &mut out);
            start = i + 1;
        }
    }
    push_trimmed(&chars, start, chars.len(), &mut out);
    out
}

fn push_trimmed(chars: &[char], mut start: usize, mut end: usize, out: &mut Vec<Sentence>) {
    while start < end && chars[start].is_whitespace() {
        start += 1;
    }
    while end > start && chars[end - 1].is_whitespace() {
        end -= 1;
    }
    if start < end {
        let raw: String = chars[start..end].iter().collect();
        out.push(Sentence::with_span(raw, (start, end)));
    }
}

/// Maximal runs of alphabetic characters.
pub fn tokenize(text: &str) -> Vec<Token> {
    tokenize_with_offsets(text).0
}

pub fn tokenize_with_offsets(text: &str) -> (Vec<Token>, Vec<(usize, usize)>) {
    let mut tokens = Vec::new();
    let mut offsets = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let mut n = 0;
    for (i, c) in text.chars().enumerate() {
        if c.is_alphabetic() {
            if current.is_empty() {
                start = i;
            }
            current.push(c);
        } else if !current.is_empty() {
            tokens.push(Token::new(&current));
            offsets.push((start, i));
            current.clear();
        }
        n = i + 1;
    }
    if !current.is_empty() {
        tokens.push(Token::new(&current));
        offsets.push((start, n));
    }
    (tokens, offsets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const CASED_TARGETS: [char; 18] =
        ['a', 'ă', 'â', 'i', 'î', 's', 'ș', 't', 'ț', 'A', 'Ă', 'Â', 'I', 'Î', 'S', 'Ș', 'T', 'Ț'];

    #[test]
    fn normalize_folds_cedilla() {
        assert_eq!(normalize("ţară"), "țară");
        assert_eq!(normalize("abc"), "abc");
        assert_eq!(normalize("Şi"), "Și");
        assert_eq!(normalize("\u{0162}\u{015E}"), "ȚȘ");
    }

    #[test]
    fn normalize_composes() {
        // a + combining breve, s + combining comma below, t + combining cedilla
        assert_eq!(normalize("a\u{0306}s\u{0326}t\u{0327}"), "ășț");
    }

    #[test]
    fn normalize_bytes_reports_offset() {
        let err = normalize_bytes(b"ab\xffcd").unwrap_err();
        assert!(matches!(err, Error::Utf8 { offset: 2 }));
        assert_eq!(normalize_bytes("ţ".as_bytes()).unwrap(), "ț");
    }

    #[test]
    fn strip_examples() {
        assert_eq!(strip_diacritics("față"), "fata");
        assert_eq!(strip_diacritics("cană"), "cana");
        assert_eq!(strip_diacritics("xyz"), "xyz");
        assert_eq!(strip_diacritics("ÎNȚELEGÂND"), "INTELEGAND");
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_char('â'), Some((TargetLetter::A, DiacriticClass::Circumflex)));
        assert_eq!(classify_char('Ț'), Some((TargetLetter::T, DiacriticClass::CommaBelow)));
        assert_eq!(classify_char('b'), None);
        assert_eq!(classify_char('ş'), None);
    }

    #[test]
    fn apply_mark_examples() {
        assert_eq!(apply_mark('a', DiacriticClass::Breve).unwrap(), 'ă');
        assert_eq!(apply_mark('T', DiacriticClass::CommaBelow).unwrap(), 'Ț');
        assert!(matches!(
            apply_mark('s', DiacriticClass::Breve),
            Err(Error::InvalidMark { ch: 's', class: DiacriticClass::Breve })
        ));
        assert!(apply_mark('b', DiacriticClass::None).is_err());
    }

    #[test]
    fn mark_round_trip_all_cased_targets() {
        for c in CASED_TARGETS {
            let (base, class) = classify_char(c).unwrap();
            let plain = strip_char(c);
            assert_eq!(TargetLetter::from_char(plain), Some(base));
            assert_eq!(apply_mark(plain, class).unwrap(), c);
            assert!(base.accepts(class));
        }
    }

    #[test]
    fn valid_pairs_biject_onto_letters() {
        let mut seen = Vec::new();
        for base in TargetLetter::ALL {
            for &class in base.valid_classes() {
                let c = apply_mark(base.lower(), class).unwrap();
                assert_eq!(LETTERS[letter_index(base, class).unwrap()], c);
                seen.push(c);
            }
        }
        seen.sort();
        let mut expected = LETTERS.to_vec();
        expected.sort();
        assert_eq!(seen, expected);
    }

    #[test]
    fn split_examples() {
        let s = split_sentences("Ana are mere. Ion vine.");
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].raw_text, "Ana are mere.");
        assert_eq!(s[1].raw_text, "Ion vine.");
        assert_eq!(s[1].span, (14, 23));
        assert!(split_sentences("").is_empty());
        assert!(split_sentences("  \n ").is_empty());
        assert_eq!(split_sentences("fără punct final").len(), 1);
        // no whitespace after the dot: no split
        assert_eq!(split_sentences("3.14 e pi. Da").len(), 2);
        assert_eq!(split_sentences("Ce?! Da.").len(), 2);
    }

    #[test]
    fn tokenize_examples() {
        let surfaces: Vec<_> = tokenize("s-a dus").into_iter().map(|t| t.surface).collect();
        assert_eq!(surfaces, ["s", "a", "dus"]);
        let t = tokenize("Față!");
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].surface, "Față");
        assert_eq!(t[0].stripped_lower, "fata");
        assert!(tokenize("123").is_empty());
        assert_eq!(tokenize("l'am").len(), 2);
    }

    #[test]
    fn token_offsets_and_lookup() {
        let s = Sentence::new("Îmi  place, ţie?");
        assert_eq!(s.char_offsets, vec![(0, 3), (5, 10), (12, 15)]);
        assert_eq!(s.token_at(0), Some(0));
        assert_eq!(s.token_at(3), None);
        assert_eq!(s.token_at(9), Some(1));
        assert_eq!(s.token_at(10), None);
        assert_eq!(s.token_at(14), Some(2));
    }

    proptest! {
        #[test]
        fn strip_idempotent_and_length_preserving(s in "\\PC{0,40}") {
            let t = normalize(&s);
            let once = strip_diacritics(&t);
            prop_assert_eq!(strip_diacritics(&once), once.clone());
            prop_assert_eq!(once.chars().count(), t.chars().count());
            for (a, b) in t.chars().zip(once.chars()) {
                if a != b {
                    prop_assert!(classify_char(a).is_some());
                }
            }
        }

        #[test]
        fn strip_changes_only_targets(s in "[a-zăâîșțĂÂÎȘȚ \\.,!0-9\u{0400}-\u{04ff}]{0,40}") {
            let stripped = strip_diacritics(&s);
            for (a, b) in s.chars().zip(stripped.chars()) {
                if a != b {
                    prop_assert!(matches!(a, 'ă' | 'â' | 'î' | 'ș' | 'ț' | 'Ă' | 'Â' | 'Î' | 'Ș' | 'Ț'));
                }
            }
        }

        #[test]
        fn normalize_idempotent(s in "\\PC{0,40}") {
            let once = normalize(&s);
            prop_assert_eq!(normalize(&once), once);
        }

        #[test]
        fn token_slices_match_surface(s in "[a-zA-Zăâîșț \\-'\\.0-9]{0,60}") {
            let sent = Sentence::new(s.clone());
            let chars: Vec<char> = s.chars().collect();
            let mut last_end = 0;
            for (tok, &(a, b)) in sent.tokens.iter().zip(&sent.char_offsets) {
                prop_assert!(a >= last_end && a < b);
                let slice: String = chars[a..b].iter().collect();
                prop_assert_eq!(&slice, &tok.surface);
                prop_assert_eq!(strip_lower(&tok.surface), tok.stripped_lower.clone());
                last_end = b;
            }
        }
    }
}
