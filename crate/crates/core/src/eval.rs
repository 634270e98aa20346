//! Accuracy, per-letter scores, error analysis and the unigram baseline.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::dataset::{extract_targets, TargetInstance};
use crate::error::{Error, Result};
use crate::textnorm::{apply_mark, classify_char, letter_index, lower_char, DiacriticClass, Sentence, LETTERS};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LetterScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub predicted: u64,
    pub gold: u64,
    pub correct: u64,
}

impl LetterScore {
    fn from_counts(correct: u64, predicted: u64, gold: u64) -> LetterScore {
        let precision = ratio(correct, predicted);
        let recall = ratio(correct, gold);
        LetterScore { precision, recall, f1: f1(precision, recall), predicted, gold, correct }
    }

    /// Neither predicted nor present in the gold data.
    pub fn is_empty(&self) -> bool {
        self.predicted == 0 && self.gold == 0
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub targets: u64,
    pub correct: u64,
    pub char_acc: f64,
    /// Words with at least one target letter.
    pub ambiguous_words: u64,
    pub ambiguous_words_correct: u64,
    pub word_acc_ambiguous: f64,
    pub all_words: u64,
    pub all_words_correct: u64,
    pub word_acc_all: f64,
    /// `confusion[predicted][gold]` over [`LETTERS`].
    pub confusion: [[u64; 9]; 9],
    pub per_letter: [LetterScore; 9],
}

impl Metrics {
    /// Character accuracy recomputed from the confusion matrix.
    pub fn confusion_char_acc(&self) -> f64 {
        let trace: u64 = (0..9).map(|i| self.confusion[i][i]).sum();
        let total: u64 = self.confusion.iter().flatten().sum();
        ratio(trace, total)
    }

    /// Tab-separated dump. Header `metric\tletter\tvalue`; corpus-level
    /// rows use `-` as the letter.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tletter\tvalue\n");
        let global = [
            ("targets", self.targets as f64),
            ("char_acc", self.char_acc),
            ("ambiguous_words", self.ambiguous_words as f64),
            ("word_acc_ambiguous", self.word_acc_ambiguous),
            ("all_words", self.all_words as f64),
            ("word_acc_all", self.word_acc_all),
        ];
        for (k, v) in global {
            let _ = writeln!(out, "{k}\t-\t{v}");
        }
        for (letter, s) in LETTERS.iter().zip(&self.per_letter) {
            for (k, v) in [
                ("precision", s.precision),
                ("recall", s.recall),
                ("f1", s.f1),
                ("predicted", s.predicted as f64),
                ("gold", s.gold as f64),
            ] {
                let _ = writeln!(out, "{k}\t{letter}\t{v}");
            }
        }
        out
    }
}

fn position_key(t: &TargetInstance) -> (usize, usize) {
    (t.sentence_index, t.char_pos)
}

/// Pairs every target of `sentences` with its prediction. Predictions are
/// matched by sentence index and character position.
fn align<'a>(
    predictions: &'a [(TargetInstance, DiacriticClass)],
    sentences: &[Sentence],
) -> Result<Vec<(TargetInstance, DiacriticClass)>> {
    let mut by_pos: HashMap<(usize, usize), &'a (TargetInstance, DiacriticClass)> = HashMap::new();
    for p in predictions {
        if by_pos.insert(position_key(&p.0), p).is_some() {
            return Err(Error::Data(format!(
                "duplicate prediction for sentence {} position {}",
                p.0.sentence_index, p.0.char_pos
            )));
        }
    }
    let mut out = Vec::with_capacity(predictions.len());
    for (i, s) in sentences.iter().enumerate() {
        for t in extract_targets(s, i) {
            let Some(&(_, class)) = by_pos.remove(&position_key(&t)) else {
                return Err(Error::Data(format!("missing prediction for sentence {i} position {}", t.char_pos)));
            };
            if !t.base.accepts(class) {
                return Err(Error::Data(format!("prediction {class:?} is invalid for {:?}", t.base)));
            }
            out.push((t, class));
        }
    }
    if let Some(((s, p), _)) = by_pos.into_iter().min_by_key(|(k, _)| *k) {
        return Err(Error::Data(format!("prediction for sentence {s} position {p} matches no target")));
    }
    if out.is_empty() {
        return Err(Error::Data("nothing to evaluate: no target letters".into()));
    }
    Ok(out)
}

/// Scores `predictions` against the gold labels of `sentences`. Every
/// target must have exactly one prediction.
pub fn compute_metrics(predictions: &[(TargetInstance, DiacriticClass)], sentences: &[Sentence]) -> Result<Metrics> {
    let aligned = align(predictions, sentences)?;
    let mut confusion = [[0u64; 9]; 9];
    let mut correct = 0u64;
    // (sentence, token) -> all targets right
    let mut words: BTreeMap<(usize, usize), bool> = BTreeMap::new();
    for (t, p) in &aligned {
        let gi = letter_index(t.base, t.gold).expect("gold labels are valid");
        let pi = letter_index(t.base, *p).expect("checked in align");
        confusion[pi][gi] += 1;
        let ok = *p == t.gold;
        correct += u64::from(ok);
        *words.entry((t.sentence_index, t.token_index)).or_insert(true) &= ok;
    }
    let ambiguous_words = words.len() as u64;
    let ambiguous_words_correct = words.values().filter(|&&ok| ok).count() as u64;
    let all_words: u64 = sentences.iter().map(|s| s.tokens.len() as u64).sum();
    let all_words_correct = all_words - (ambiguous_words - ambiguous_words_correct);

    let mut per_letter = [LetterScore::default(); 9];
    for (l, score) in per_letter.iter_mut().enumerate() {
        let predicted = confusion[l].iter().sum();
        let gold = (0..9).map(|p| confusion[p][l]).sum();
        *score = LetterScore::from_counts(confusion[l][l], predicted, gold);
    }
    let targets = aligned.len() as u64;
    Ok(Metrics {
        targets,
        correct,
        char_acc: ratio(correct, targets),
        ambiguous_words,
        ambiguous_words_correct,
        word_acc_ambiguous: ratio(ambiguous_words_correct, ambiguous_words),
        all_words,
        all_words_correct,
        word_acc_all: ratio(all_words_correct, all_words),
        confusion,
        per_letter,
    })
}

/// Nine-row precision/recall/F-score table in percent. Letters that were
/// neither predicted nor seen are marked with a dash.
pub fn per_letter_report(m: &Metrics) -> String {
    let mut out = String::from("Letter  Precision  Recall   F-Score\n");
    for (letter, s) in LETTERS.iter().zip(&m.per_letter) {
        let _ = write!(
            out,
            "{letter:<6}  {:>9.2}  {:>6.2}   {:>7.2}",
            100.0 * s.precision,
            100.0 * s.recall,
            100.0 * s.f1
        );
        if s.is_empty() {
            out.push_str("  -");
        }
        out.push('\n');
    }
    out
}

pub fn summary(m: &Metrics) -> String {
    format!(
        "char accuracy {:.3}% ({} / {} targets)\nword accuracy {:.3}% over words with targets ({} / {}), {:.3}% over all words ({} / {})\n",
        100.0 * m.char_acc,
        m.correct,
        m.targets,
        100.0 * m.word_acc_ambiguous,
        m.ambiguous_words_correct,
        m.ambiguous_words,
        100.0 * m.word_acc_all,
        m.all_words_correct,
        m.all_words,
    )
}

/// Stripped text of `sentence` with `classes` applied at the given
/// positions.
pub fn render(sentence: &Sentence, marks: impl IntoIterator<Item = (usize, DiacriticClass)>) -> Result<String> {
    let mut chars = sentence.stripped_chars();
    for (pos, class) in marks {
        let c = chars.get_mut(pos).ok_or_else(|| Error::Data(format!("position {pos} outside sentence")))?;
        *c = apply_mark(*c, class)?;
    }
    Ok(chars.into_iter().collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardWord {
    /// Gold form, lowercased.
    pub word: String,
    pub errors: usize,
    pub occurrences: usize,
    /// Distinct wrong restorations, lowercased, first seen first (at most 3).
    pub examples: Vec<String>,
}

/// The `k` gold word forms restored wrongly most often. Ties go to the more
/// frequent word, then to the lexicographically smaller one.
pub fn hardest_words(
    predictions: &[(TargetInstance, DiacriticClass)],
    sentences: &[Sentence],
    k: usize,
) -> Result<Vec<HardWord>> {
    let aligned = align(predictions, sentences)?;
    let mut per_word: BTreeMap<(usize, usize), Vec<(usize, DiacriticClass, DiacriticClass)>> = BTreeMap::new();
    for (t, p) in &aligned {
        per_word.entry((t.sentence_index, t.token_index)).or_default().push((t.char_pos, t.gold, *p));
    }
    let mut stats: HashMap<String, HardWord> = HashMap::new();
    for ((si, ti), marks) in per_word {
        let sentence = &sentences[si];
        let (start, end) = sentence.char_offsets[ti];
        let gold: String = sentence.raw_text.chars().skip(start).take(end - start).map(lower_char).collect();
        let entry = stats.entry(gold.clone()).or_insert_with(|| HardWord {
            word: gold,
            errors: 0,
            occurrences: 0,
            examples: Vec::new(),
        });
        entry.occurrences += 1;
        if marks.iter().any(|(_, g, p)| g != p) {
            entry.errors += 1;
            let mut chars: Vec<char> = sentence.stripped_chars()[start..end].to_vec();
            for &(pos, _, p) in &marks {
                chars[pos - start] = apply_mark(chars[pos - start], p)?;
            }
            let wrong: String = chars.into_iter().map(lower_char).collect();
            if entry.examples.len() < 3 && !entry.examples.contains(&wrong) {
                entry.examples.push(wrong);
            }
        }
    }
    let mut ranked: Vec<HardWord> = stats.into_values().filter(|w| w.errors > 0).collect();
    ranked.sort_by(|a, b| b.errors.cmp(&a.errors).then(b.occurrences.cmp(&a.occurrences)).then(a.word.cmp(&b.word)));
    ranked.truncate(k);
    Ok(ranked)
}

pub fn hardest_words_report(words: &[HardWord]) -> String {
    let mut out = String::new();
    for w in words {
        let _ = writeln!(out, "{}\t{} errors / {}\t{}", w.word, w.errors, w.occurrences, w.examples.join(", "));
    }
    out
}

/// Most frequent lowercased diacritized form of every stripped word seen in
/// training. Ties go to the lexicographically smaller form.
#[derive(Debug, Clone, Default)]
pub struct UnigramBaseline {
    forms: HashMap<String, Vec<char>>,
}

impl UnigramBaseline {
    pub fn fit(train: &[Sentence]) -> UnigramBaseline {
        let mut counts: HashMap<String, HashMap<String, usize>> = HashMap::new();
        for s in train {
            for t in &s.tokens {
                let form: String = t.surface.chars().map(lower_char).collect();
                *counts.entry(t.stripped_lower.clone()).or_default().entry(form).or_default() += 1;
            }
        }
        let forms = counts
            .into_iter()
            .map(|(key, c)| {
                let best = c
                    .into_iter()
                    .max_by(|(fa, na), (fb, nb)| na.cmp(nb).then(fb.cmp(fa)))
                    .map(|(f, _)| f.chars().collect())
                    .expect("every key has a form");
                (key, best)
            })
            .collect();
        UnigramBaseline { forms }
    }

    /// Predicted form for a stripped lowercase word, if it was seen.
    pub fn form(&self, stripped_lower: &str) -> Option<String> {
        self.forms.get(stripped_lower).map(|f| f.iter().collect())
    }

    pub fn predict(&self, sentence: &Sentence, t: &TargetInstance) -> DiacriticClass {
        let token = &sentence.tokens[t.token_index];
        let offset = t.char_pos - sentence.char_offsets[t.token_index].0;
        self.forms
            .get(&token.stripped_lower)
            .and_then(|f| f.get(offset))
            .and_then(|&c| classify_char(c))
            .filter(|&(base, _)| base == t.base)
            .map_or(DiacriticClass::None, |(_, class)| class)
    }

    pub fn predict_all(&self, sentences: &[Sentence]) -> Vec<(TargetInstance, DiacriticClass)> {
        sentences
            .iter()
            .enumerate()
            .flat_map(|(i, s)| extract_targets(s, i).into_iter().map(move |t| (t, self.predict(s, &t))))
            .collect()
    }
}

/// Majority-form baseline trained on `train` and scored on `test`.
pub fn unigram_baseline(train: &[Sentence], test: &[Sentence]) -> Result<Metrics> {
    let model = UnigramBaseline::fit(train);
    compute_metrics(&model.predict_all(test), test)
}
