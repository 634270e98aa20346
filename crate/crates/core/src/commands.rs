//! The pipeline steps behind each CLI subcommand.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::dataset::{
    build_char_vocab, diacritic_ratio, letter_histogram, Example, PreparedData, Split, SplitSpec, TargetInstance,
};
use crate::embeddings::{build_stripped_table, load_vectors, EmbeddingTable, RawVectorTable};
use crate::error::{Error, Result};
use crate::eval::{
    compute_metrics, hardest_words, hardest_words_report, per_letter_report, summary, unigram_baseline,
};
use crate::model::{Activation, Checkpoint, Model, ModelConfig};
use crate::nn::gradcheck::{grad_check, GradCheckReport, Objective};
use crate::nn::tape::{Gradients, ParamSet, Tape};
use crate::textnorm::{
    apply_mark, classify_char, fold_cedilla, normalize_bytes, split_sentences, strip_char, DiacriticClass,
    Sentence, LETTERS,
};
use crate::train::{predict_sentences, train, EpochRecord, TrainLog};

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareSummary {
    pub sentences: usize,
    pub dropped: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub histogram: [usize; 9],
}

impl fmt::Display for PrepareSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} sentences kept, {} dropped", self.sentences, self.dropped)?;
        writeln!(f, "train {} / dev {} / test {}", self.train, self.dev, self.test)?;
        for (letter, n) in LETTERS.iter().zip(self.histogram) {
            writeln!(f, "{letter}\t{n}")?;
        }
        Ok(())
    }
}

/// Normalizes `corpus`, splits it into one sentence per line and assigns
/// each sentence to a split. Line breaks in the corpus always end a
/// sentence. With `min_ratio`, sentences whose share of marked target
/// letters is below it are dropped (no target letters counts as 0).
pub fn prepare(corpus: &Path, out_dir: &Path, spec: &SplitSpec, min_ratio: Option<f64>) -> Result<PrepareSummary> {
    spec.validate()?;
    if let Some(r) = min_ratio {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Config(format!("min diacritic ratio {r} outside [0, 1]")));
        }
    }
    let bytes = fs::read(corpus).map_err(|e| Error::io(corpus, e))?;
    let text = normalize_bytes(&bytes)?;
    let mut sentences = Vec::new();
    let mut dropped = 0;
    for line in text.lines() {
        for s in split_sentences(line) {
            let keep = min_ratio.map_or(true, |r| diacritic_ratio(&s.raw_text).unwrap_or(0.0) >= r);
            if keep {
                sentences.push(Sentence::new(s.raw_text));
            } else {
                dropped += 1;
            }
        }
    }
    if sentences.is_empty() {
        return Err(Error::Data(format!("no sentences left from {} ({dropped} dropped by the filter)", corpus.display())));
    }
    let splits: Vec<Split> = (0..sentences.len()).map(|i| spec.assign(i)).collect();
    let count = |s: Split| splits.iter().filter(|&&x| x == s).count();
    let summary = PrepareSummary {
        sentences: sentences.len(),
        dropped,
        train: count(Split::Train),
        dev: count(Split::Dev),
        test: count(Split::Test),
        histogram: letter_histogram(sentences.iter().map(|s| s.raw_text.as_str())),
    };
    PreparedData { sentences, splits }.save(out_dir)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedSummary {
    pub dim: usize,
    pub raw_words: usize,
    pub duplicates: usize,
    pub keys: usize,
}

impl fmt::Display for EmbedSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} words of dimension {} ({} duplicates replaced)", self.raw_words, self.dim, self.duplicates)?;
        writeln!(f, "{} diacritic-free keys after merging", self.keys)
    }
}

pub fn embed(vectors: &Path, out: &Path) -> Result<EmbedSummary> {
    let raw = load_vectors(vectors)?;
    let table = build_stripped_table(&raw);
    table.save(out)?;
    Ok(EmbedSummary { dim: raw.dim(), raw_words: raw.len(), duplicates: raw.duplicates, keys: table.len() })
}

/// The embedding table a model needs, or an empty one of the right width
/// when it uses neither word path.
pub fn embeddings_for(config: &ModelConfig, path: Option<&Path>) -> Result<EmbeddingTable> {
    if !config.needs_embeddings() {
        return Ok(EmbeddingTable::empty(config.word_dim));
    }
    let path = path.ok_or_else(|| {
        Error::Config("this model uses word vectors but no embedding cache is set; run `embed` first".into())
    })?;
    if !path.exists() {
        return Err(Error::Config(format!("embedding cache {} does not exist; run `embed` first", path.display())));
    }
    let table = EmbeddingTable::load(path)?;
    if table.dim() != config.word_dim {
        return Err(Error::Config(format!(
            "embedding cache {} has dimension {}, config says word_dim={}",
            path.display(),
            table.dim(),
            config.word_dim
        )));
    }
    Ok(table)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub log: TrainLog,
    pub checkpoint: PathBuf,
}

/// Trains per `run`, writing the log as epochs finish and the best
/// checkpoint at the end.
pub fn train_run(run: &RunConfig, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainSummary> {
    run.validate()?;
    let data_dir = run.data_dir.as_ref().expect("validated");
    let data = PreparedData::load(data_dir)?;
    let train_set = data.subset(Split::Train);
    let dev_set = data.subset(Split::Dev);
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(Error::Data(format!(
            "{} has {} train and {} dev sentences; both must be non-empty",
            data_dir.display(),
            train_set.len(),
            dev_set.len()
        )));
    }
    let emb = embeddings_for(&run.model, run.embeddings.as_deref())?;
    let vocab = build_char_vocab(&train_set, run.model.min_char_freq)?;
    let log_file = File::create(&run.log).map_err(|e| Error::io(&run.log, e))?;
    let mut log = BufWriter::new(log_file);
    let mut log_error = None;
    let outcome = train(&run.model, &run.train, &train_set, &dev_set, &emb, &vocab, |r| {
        if let Err(e) = writeln!(log, "{r}").and_then(|_| log.flush()) {
            log_error.get_or_insert(e);
        }
        on_epoch(r);
    })?;
    if let Some(e) = log_error {
        return Err(Error::io(&run.log, e));
    }
    Checkpoint::new(outcome.best, vocab, run.settings())?.save(&run.checkpoint)?;
    Ok(TrainSummary { best_epoch: outcome.best_epoch, log: outcome.log, checkpoint: run.checkpoint.clone() })
}

fn setting_path(ck: &Checkpoint, key: &str) -> Option<PathBuf> {
    ck.setting(key).map(PathBuf::from)
}

/// Text (or tab-separated) evaluation report for one split: metrics, the
/// per-letter table, the hardest words and the unigram baseline trained on
/// the train split.
pub fn evaluate_report(checkpoint: &Path, split: Split, tsv: bool) -> Result<String> {
    let ck = Checkpoint::load(checkpoint)?;
    let data_dir = setting_path(&ck, "data_dir")
        .ok_or_else(|| Error::Data(format!("{} does not record a data_dir", checkpoint.display())))?;
    let data = PreparedData::load(&data_dir)?;
    let sentences = data.subset(split);
    let emb = embeddings_for(ck.model.config(), setting_path(&ck, "embeddings").as_deref())?;
    let preds = predict_sentences(&ck.model, &sentences, &emb, &ck.vocab, 1024)?;
    let metrics = compute_metrics(&preds, &sentences)?;
    let baseline = unigram_baseline(&data.subset(Split::Train), &sentences)?;
    if tsv {
        let mut out = metrics.to_tsv();
        out.push_str(&format!("baseline_char_acc\t-\t{}\n", baseline.char_acc));
        out.push_str(&format!("baseline_word_acc_ambiguous\t-\t{}\n", baseline.word_acc_ambiguous));
        return Ok(out);
    }
    let hard = hardest_words(&preds, &sentences, 20)?;
    let mut out = format!("{split} split: {} sentences\n", sentences.len());
    out.push_str(&summary(&metrics));
    out.push('\n');
    out.push_str(&per_letter_report(&metrics));
    out.push_str("\nhardest words:\n");
    out.push_str(&hardest_words_report(&hard));
    out.push_str(&format!(
        "\nunigram baseline: char accuracy {:.3}%, word accuracy {:.3}% (model {:+.3} pp)\n",
        100.0 * baseline.char_acc,
        100.0 * baseline.word_acc_ambiguous,
        100.0 * (metrics.char_acc - baseline.char_acc)
    ));
    Ok(out)
}

/// A loaded checkpoint ready to restore text.
pub struct Restorer {
    pub checkpoint: Checkpoint,
    pub embeddings: EmbeddingTable,
    pub preserve_existing: bool,
}

impl Restorer {
    pub fn load(checkpoint: &Path, preserve_existing: bool) -> Result<Restorer> {
        let ck = Checkpoint::load(checkpoint)?;
        let embeddings = embeddings_for(ck.model.config(), setting_path(&ck, "embeddings").as_deref())?;
        Ok(Restorer { checkpoint: ck, embeddings, preserve_existing })
    }

    /// Restores one line. Only target letters (including legacy cedilla
    /// forms) can change; every other character is copied through.
    pub fn restore_line(&self, line: &str) -> Result<String> {
        let original: Vec<char> = line.chars().collect();
        let marked: Vec<Option<DiacriticClass>> =
            original.iter().map(|&c| classify_char(fold_cedilla(c)).map(|(_, class)| class)).collect();
        let stripped: String = original
            .iter()
            .zip(&marked)
            .map(|(&c, m)| if m.is_some() { strip_char(fold_cedilla(c)) } else { c })
            .collect();
        let stripped_chars: Vec<char> = stripped.chars().collect();
        let sentences = split_sentences(&stripped);
        let mut out = original.clone();
        for (s, preds) in sentences.iter().zip(self.predict(&sentences)?) {
            for (t, class) in preds {
                let pos = s.span.0 + t.char_pos;
                if self.preserve_existing && marked[pos].is_some_and(|m| m != DiacriticClass::None) {
                    continue;
                }
                out[pos] = apply_mark(stripped_chars[pos], class)?;
            }
        }
        Ok(out.into_iter().collect())
    }

    fn predict(&self, sentences: &[Sentence]) -> Result<Vec<Vec<(TargetInstance, DiacriticClass)>>> {
        let ck = &self.checkpoint;
        let preds = predict_sentences(&ck.model, sentences, &self.embeddings, &ck.vocab, 1024)?;
        let mut grouped = vec![Vec::new(); sentences.len()];
        for (t, c) in preds {
            grouped[t.sentence_index].push((t, c));
        }
        Ok(grouped)
    }

    /// Streams `input` to `output` line by line, keeping line endings.
    pub fn restore_stream<R: BufRead, W: Write>(&self, mut input: R, mut output: W) -> Result<()> {
        let mut buf = Vec::new();
        let mut offset = 0usize;
        loop {
            buf.clear();
            if input.read_until(b'\n', &mut buf)? == 0 {
                break;
            }
            let line = std::str::from_utf8(&buf).map_err(|e| Error::Utf8 { offset: offset + e.valid_up_to() })?;
            offset += buf.len();
            let (body, ending) = match line.strip_suffix("\r\n") {
                Some(b) => (b, "\r\n"),
                None => match line.strip_suffix('\n') {
                    Some(b) => (b, "\n"),
                    None => (line, ""),
                },
            };
            output.write_all(self.restore_line(body)?.as_bytes())?;
            output.write_all(ending.as_bytes())?;
        }
        output.flush()?;
        Ok(())
    }
}

pub const GRADCHECK_VOCAB: usize = 20;
/// Init seed of the model behind [`gradcheck`]; its `seed` argument only
/// picks which coordinates are compared.
pub const GRADCHECK_MODEL_SEED: u64 = 0;

/// Loss of a tiny full model on a fixed synthetic batch, in f64.
pub struct TinyObjective {
    pub model: Model<f64>,
    pub examples: Vec<Example>,
    pub embeddings: EmbeddingTable,
}

impl TinyObjective {
    /// Char embedding 4, char and sentence LSTMs of 4, one hidden layer of 8,
    /// 20 characters, 6-dimensional word vectors.
    pub fn new(seed: u64) -> Result<TinyObjective> {
        let config = ModelConfig {
            char_emb_dim: 4,
            char_lstm_h: 4,
            hidden_sizes: vec![8],
            use_word_path: true,
            use_sentence_path: true,
            word_dim: 6,
            sent_lstm_h: 4,
            window: 7,
            max_sent: 5,
            activation: Activation::Relu,
            seed,
            ..ModelConfig::default()
        };
        let mut model = Model::<f64>::init(config, GRADCHECK_VOCAB)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        // Wider than the training init so hidden states, and with them the
        // recurrent gradients, stay well above finite-difference noise.
        for t in model.params_mut().tensors_mut() {
            for x in t.data_mut() {
                *x = rng.gen_range(-1.0..1.0);
            }
        }
        let mut raw = RawVectorTable::new(6);
        for w in ["casa", "fata", "sat", "tata", "pisica", "munte", "ita", "stat"] {
            let v: Vec<f32> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            raw.insert(w, &v)?;
        }
        let embeddings = build_stripped_table(&raw);
        let rows = embeddings.len() as u32 + 1;
        let n = 8;
        // every character id appears somewhere so no gradient is exactly 0
        let mut ids: Vec<u32> = (0..n * 7).map(|k| (k % GRADCHECK_VOCAB) as u32).collect();
        ids.shuffle(&mut rng);
        let contexts: Vec<Arc<[u32]>> = [3usize, 5, 2]
            .iter()
            .map(|&len| (0..len).map(|_| rng.gen_range(0..rows)).collect::<Vec<_>>().into())
            .collect();
        let bases = crate::textnorm::TargetLetter::ALL;
        let examples = (0..n)
            .map(|i| {
                let base = bases[i % 4];
                let valid = base.valid_classes();
                let sent_rows = contexts[i % contexts.len()].clone();
                Example {
                    window_ids: ids[i * 7..(i + 1) * 7].into(),
                    word_row: rng.gen_range(0..rows),
                    word_pos: rng.gen_range(0..sent_rows.len()),
                    sent_rows,
                    base,
                    gold: valid[rng.gen_range(0..valid.len())],
                }
            })
            .collect();
        Ok(TinyObjective { model, examples, embeddings })
    }

    fn run(&self, params: &ParamSet<f64>, grad: bool) -> Result<(f64, Option<Gradients<f64>>)> {
        let mut tape = Tape::new(params);
        let batch: Vec<&Example> = self.examples.iter().collect();
        let loss = self.model.loss(&mut tape, &batch, &self.embeddings, &[1.0; 4])?;
        let value = tape.value(loss).data()[0];
        let grads = if grad { Some(tape.backward(loss)?) } else { None };
        Ok((value, grads))
    }
}

impl Objective for TinyObjective {
    fn loss(&self, params: &ParamSet<f64>) -> Result<f64> {
        Ok(self.run(params, false)?.0)
    }

    fn loss_and_grad(&self, params: &ParamSet<f64>) -> Result<(f64, Gradients<f64>)> {
        let (l, g) = self.run(params, true)?;
        Ok((l, g.expect("requested")))
    }
}

/// Compares analytic and central-difference gradients of the tiny model.
/// Fails with a numerical error when the worst relative error reaches
/// `threshold`.
pub fn gradcheck(eps: f64, threshold: f64, seed: u64) -> Result<GradCheckReport> {
    let objective = TinyObjective::new(GRADCHECK_MODEL_SEED)?;
    let report = grad_check(&objective, objective.model.params(), eps, 24, seed)?;
    if !(report.max_rel_error < threshold) {
        let worst = report
            .worst
            .as_ref()
            .map(|w| format!(" at {}[{}] (analytic {:e}, numeric {:e})", w.tensor, w.index, w.analytic, w.numeric))
            .unwrap_or_default();
        return Err(Error::Numerical(format!(
            "max relative gradient error {:e} is not below {threshold:e}{worst}",
            report.max_rel_error
        )));
    }
    Ok(report)
}
