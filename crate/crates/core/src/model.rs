//! The three-path classifier.
//!
//! ```text
//! window chars ─ embed ─ BiLSTM ─ [h→ ; h←] ──┐
//! current word vector ────────────────────────┼─ concat ─ dense… ─ dense → 4 logits
//! sentence word vectors ─ BiLSTM ─ [h→ ; h←] ─┘
//! ```
//!
//! The word and sentence paths can be switched off independently. Logits
//! cover the shared label space `None, Breve, Circumflex, CommaBelow`;
//! classes that are impossible for the base letter are masked in the loss
//! and in [`predict_from_logits`].

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{CharVocab, Example, ExampleShape};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::io_util::{read_bytes, read_u32};
use crate::nn::init::{glorot_uniform, uniform};
use crate::nn::lstm::{bilstm_encode_batch, LstmCellParams};
use crate::nn::tape::{ParamId, ParamSet, Tape, Var, XentTargets};
use crate::nn::tensor::{Scalar, Tensor};
use crate::textnorm::{DiacriticClass, TargetLetter};

pub const NUM_CLASSES: usize = 4;

/// Upper bound on any single size in a [`ModelConfig`], so derived widths
/// cannot overflow.
pub const MAX_DIM: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "linear" => Ok(Activation::Linear),
            _ => Err(Error::Config(format!("unknown activation {s:?} (relu, linear)"))),
        }
    }
}

/// What the sentence path hands to the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SentenceRepr {
    /// Final forward and backward states: one vector per sentence.
    Final,
    /// Forward and backward states at the current word's position.
    CurrentWord,
}

impl fmt::Display for SentenceRepr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SentenceRepr::Final => "final",
            SentenceRepr::CurrentWord => "current_word",
        })
    }
}

impl FromStr for SentenceRepr {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final" => Ok(SentenceRepr::Final),
            "current_word" => Ok(SentenceRepr::CurrentWord),
            _ => Err(Error::Config(format!("unknown sentence_repr {s:?} (final, current_word)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub char_emb_dim: usize,
    pub char_lstm_h: usize,
    pub hidden_sizes: Vec<usize>,
    pub use_word_path: bool,
    pub use_sentence_path: bool,
    pub word_dim: usize,
    pub sent_lstm_h: usize,
    pub window: usize,
    pub max_sent: usize,
    pub activation: Activation,
    pub sentence_repr: SentenceRepr,
    /// Half-width of the uniform init of character embeddings.
    pub char_emb_init: f64,
    pub min_char_freq: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    /// Characters + word + sentence, char embedding 20, char LSTM 64, one
    /// hidden layer of 256.
    fn default() -> Self {
        ModelConfig {
            char_emb_dim: 20,
            char_lstm_h: 64,
            hidden_sizes: vec![256],
            use_word_path: true,
            use_sentence_path: true,
            word_dim: 300,
            sent_lstm_h: 300,
            window: 13,
            max_sent: 31,
            activation: Activation::Relu,
            sentence_repr: SentenceRepr::Final,
            char_emb_init: 0.05,
            min_char_freq: 1,
            seed: 0,
        }
    }
}

pub(crate) fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true/false, got {v:?}"))),
    }
}

pub(crate) fn parse_num<N: FromStr>(key: &str, v: &str) -> Result<N> {
    v.trim().parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|p| parse_num(key, p)).collect()
}

impl ModelConfig {
    pub const KEYS: [&'static str; 14] = [
        "char_emb_dim",
        "char_lstm_h",
        "hidden_sizes",
        "use_word_path",
        "use_sentence_path",
        "word_dim",
        "sent_lstm_h",
        "window",
        "max_sent",
        "activation",
        "sentence_repr",
        "char_emb_init",
        "min_char_freq",
        "seed",
    ];

    /// Applies one `key=value` setting; `Ok(false)` when the key is not a
    /// model key.
    pub fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "char_emb_dim" => self.char_emb_dim = parse_num(key, v)?,
            "char_lstm_h" => self.char_lstm_h = parse_num(key, v)?,
            "hidden_sizes" => self.hidden_sizes = parse_list(key, v)?,
            "use_word_path" => self.use_word_path = parse_bool(key, v)?,
            "use_sentence_path" => self.use_sentence_path = parse_bool(key, v)?,
            "word_dim" => self.word_dim = parse_num(key, v)?,
            "sent_lstm_h" => self.sent_lstm_h = parse_num(key, v)?,
            "window" => self.window = parse_num(key, v)?,
            "max_sent" => self.max_sent = parse_num(key, v)?,
            "activation" => self.activation = v.parse()?,
            "sentence_repr" => self.sentence_repr = v.parse()?,
            "char_emb_init" => self.char_emb_init = parse_num(key, v)?,
            "min_char_freq" => self.min_char_freq = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let hidden: Vec<String> = self.hidden_sizes.iter().map(usize::to_string).collect();
        [
            ("char_emb_dim", self.char_emb_dim.to_string()),
            ("char_lstm_h", self.char_lstm_h.to_string()),
            ("hidden_sizes", hidden.join(",")),
            ("use_word_path", self.use_word_path.to_string()),
            ("use_sentence_path", self.use_sentence_path.to_string()),
            ("word_dim", self.word_dim.to_string()),
            ("sent_lstm_h", self.sent_lstm_h.to_string()),
            ("window", self.window.to_string()),
            ("max_sent", self.max_sent.to_string()),
            ("activation", self.activation.to_string()),
            ("sentence_repr", self.sentence_repr.to_string()),
            ("char_emb_init", format!("{:?}", self.char_emb_init)),
            ("min_char_freq", self.min_char_freq.to_string()),
            ("seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.window % 2 == 0 {
            problems.push(format!("window {} must be odd", self.window));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            problems.push("hidden_sizes must be a non-empty list of positive sizes".to_owned());
        }
        if self.hidden_sizes.iter().any(|&h| h > MAX_DIM) {
            problems.push(format!("hidden_sizes entries must be at most {MAX_DIM}"));
        }
        for (name, v) in [
            ("char_emb_dim", self.char_emb_dim),
            ("char_lstm_h", self.char_lstm_h),
            ("word_dim", self.word_dim),
            ("sent_lstm_h", self.sent_lstm_h),
            ("max_sent", self.max_sent),
            ("window", self.window),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be positive"));
            } else if v > MAX_DIM {
                problems.push(format!("{name} {v} exceeds {MAX_DIM}"));
            }
        }
        if !(self.char_emb_init > 0.0 && self.char_emb_init.is_finite()) {
            problems.push(format!("char_emb_init {} must be positive", self.char_emb_init));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Width of the concatenated input of the first hidden layer.
    pub fn classifier_input(&self) -> usize {
        2 * self.char_lstm_h
            + if self.use_word_path { self.word_dim } else { 0 }
            + if self.use_sentence_path { 2 * self.sent_lstm_h } else { 0 }
    }

    pub fn needs_embeddings(&self) -> bool {
        self.use_word_path || self.use_sentence_path
    }

    pub fn example_shape(&self) -> ExampleShape {
        ExampleShape { window: self.window, max_sent: self.max_sent }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    char_emb: ParamId,
    char_fwd: LstmCellParams,
    char_bwd: LstmCellParams,
    sent: Option<(LstmCellParams, LstmCellParams)>,
    hidden: Vec<(ParamId, ParamId)>,
    out: (ParamId, ParamId),
}

/// Parameters plus the configuration that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    vocab_size: usize,
    params: ParamSet<T>,
    layout: Layout,
}

/// Tensor registration order, which is also the checkpoint order.
fn build_layout<T: Scalar>(config: &ModelConfig, vocab_size: usize, rng: &mut ChaCha8Rng) -> (ParamSet<T>, Layout) {
    let mut p = ParamSet::new();
    let char_emb = p.add("char_emb", uniform(&[vocab_size, config.char_emb_dim], config.char_emb_init, rng));
    let char_fwd = LstmCellParams::register(&mut p, "char_fwd", config.char_emb_dim, config.char_lstm_h, rng);
    let char_bwd = LstmCellParams::register(&mut p, "char_bwd", config.char_emb_dim, config.char_lstm_h, rng);
    let sent = config.use_sentence_path.then(|| {
        let f = LstmCellParams::register(&mut p, "sent_fwd", config.word_dim, config.sent_lstm_h, rng);
        let b = LstmCellParams::register(&mut p, "sent_bwd", config.word_dim, config.sent_lstm_h, rng);
        (f, b)
    });
    let mut width = config.classifier_input();
    let mut hidden = Vec::new();
    for (i, &h) in config.hidden_sizes.iter().enumerate() {
        let w = p.add(format!("hidden{i}.w"), glorot_uniform(h, width, rng));
        let b = p.add(format!("hidden{i}.b"), Tensor::zeros(&[h]));
        hidden.push((w, b));
        width = h;
    }
    let ow = p.add("out.w", glorot_uniform(NUM_CLASSES, width, rng));
    let ob = p.add("out.b", Tensor::zeros(&[NUM_CLASSES]));
    (p, Layout { char_emb, char_fwd, char_bwd, sent, hidden, out: (ow, ob) })
}

/// Names and shapes of every parameter tensor, in registration order,
/// computed without allocating the tensors.
pub fn param_shapes(config: &ModelConfig, vocab_size: usize) -> Vec<(String, Vec<usize>)> {
    let mut out = vec![("char_emb".to_owned(), vec![vocab_size, config.char_emb_dim])];
    let mut lstm = |prefix: &str, input: usize, hidden: usize| {
        for (suffix, shape) in ["w_x", "w_h", "b"].into_iter().zip(LstmCellParams::shapes(input, hidden)) {
            out.push((format!("{prefix}.{suffix}"), shape));
        }
    };
    lstm("char_fwd", config.char_emb_dim, config.char_lstm_h);
    lstm("char_bwd", config.char_emb_dim, config.char_lstm_h);
    if config.use_sentence_path {
        lstm("sent_fwd", config.word_dim, config.sent_lstm_h);
        lstm("sent_bwd", config.word_dim, config.sent_lstm_h);
    }
    let mut width = config.classifier_input();
    for (i, &h) in config.hidden_sizes.iter().enumerate() {
        out.push((format!("hidden{i}.w"), vec![h, width]));
        out.push((format!("hidden{i}.b"), vec![h]));
        width = h;
    }
    out.push(("out.w".to_owned(), vec![NUM_CLASSES, width]));
    out.push(("out.b".to_owned(), vec![NUM_CLASSES]));
    out
}

impl<T: Scalar> Model<T> {
    /// Fresh parameters, deterministic in `config.seed`.
    pub fn init(config: ModelConfig, vocab_size: usize) -> Result<Model<T>> {
        config.validate()?;
        if vocab_size < 2 {
            return Err(Error::Config(format!("character vocabulary of size {vocab_size} lacks PAD/UNK")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (params, layout) = build_layout(&config, vocab_size, &mut rng);
        Ok(Model { config, vocab_size, params, layout })
    }

    /// Wraps existing parameters after checking names and shapes.
    pub fn from_params(config: ModelConfig, vocab_size: usize, params: ParamSet<T>) -> Result<Model<T>> {
        config.validate()?;
        let expected = param_shapes(&config, vocab_size);
        if params.len() != expected.len() {
            return Err(Error::Shape(format!("expected {} tensors, got {}", expected.len(), params.len())));
        }
        for ((name, shape), (got_name, got)) in expected.iter().zip(params.names().iter().zip(params.tensors())) {
            if name != got_name || shape.as_slice() != got.shape() {
                return Err(Error::Shape(format!(
                    "tensor {got_name} {:?} does not match expected {name} {shape:?}",
                    got.shape()
                )));
            }
        }
        // shapes match, so the fresh tensors are the same size as the data already held
        let mut model = Model::<T>::init(config, vocab_size)?;
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model { config: self.config.clone(), vocab_size: self.vocab_size, params: self.params.cast(), layout: self.layout.clone() }
    }

    pub fn output_bias(&self) -> ParamId {
        self.layout.out.1
    }

    pub fn first_hidden_input(&self) -> usize {
        self.params.get(self.layout.hidden[0].0).shape()[1]
    }

    /// Logits `[batch × 4]` for `batch`, recorded on `tape`.
    pub fn forward_batch(&self, tape: &mut Tape<'_, T>, batch: &[&Example], emb: &EmbeddingTable) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::Shape("forward on an empty batch".into()));
        }
        let cfg = &self.config;
        if cfg.needs_embeddings() && emb.dim() != cfg.word_dim {
            return Err(Error::Shape(format!("embedding table has dimension {}, model expects {}", emb.dim(), cfg.word_dim)));
        }
        for ex in batch {
            if ex.window_ids.len() != cfg.window {
                return Err(Error::Shape(format!("window of {} ids, model expects {}", ex.window_ids.len(), cfg.window)));
            }
            if let Some(&bad) = ex.window_ids.iter().find(|&&id| id as usize >= self.vocab_size) {
                return Err(Error::Shape(format!("char id {bad} outside vocabulary of {}", self.vocab_size)));
            }
        }

        let mut parts = Vec::with_capacity(3);
        parts.push(self.char_path(tape, batch)?);
        if cfg.use_word_path {
            let mut data = Vec::with_capacity(batch.len() * cfg.word_dim);
            for ex in batch {
                data.extend(emb_row(emb, ex.word_row)?.iter().map(|&v| T::from_f64(v as f64)));
            }
            parts.push(tape.input(Tensor::matrix(batch.len(), cfg.word_dim, data)?));
        }
        if let Some((fwd, bwd)) = &self.layout.sent {
            parts.push(self.sentence_path(tape, fwd, bwd, batch, emb)?);
        }
        let mut x = tape.concat_cols(&parts)?;
        for &(w, b) in &self.layout.hidden {
            let z = tape.matmul_t(x, Var::Param(w.0))?;
            let z = tape.add_bias(z, Var::Param(b.0))?;
            x = match cfg.activation {
                Activation::Relu => tape.relu(z),
                Activation::Linear => z,
            };
        }
        let (w, b) = self.layout.out;
        let z = tape.matmul_t(x, Var::Param(w.0))?;
        tape.add_bias(z, Var::Param(b.0))
    }

    fn char_path(&self, tape: &mut Tape<'_, T>, batch: &[&Example]) -> Result<Var> {
        let steps = (0..self.config.window)
            .map(|t| {
                let ids = batch.iter().map(|ex| ex.window_ids[t] as usize).collect();
                tape.gather(Var::Param(self.layout.char_emb.0), ids)
            })
            .collect::<Result<Vec<_>>>()?;
        let lengths = vec![self.config.window; batch.len()];
        let (f, b) = bilstm_encode_batch(tape, &self.layout.char_fwd, &self.layout.char_bwd, &steps, &lengths)?;
        tape.concat_cols(&[f.final_h, b.final_h])
    }

    /// Encodes each distinct sentence context of the batch once and hands the
    /// result to every example that uses it.
    fn sentence_path(
        &self,
        tape: &mut Tape<'_, T>,
        fwd: &LstmCellParams,
        bwd: &LstmCellParams,
        batch: &[&Example],
        emb: &EmbeddingTable,
    ) -> Result<Var> {
        let dim = self.config.word_dim;
        let mut unique: Vec<&[u32]> = Vec::new();
        let mut seen: HashMap<&[u32], usize> = HashMap::new();
        let mut which = Vec::with_capacity(batch.len());
        for ex in batch {
            let rows: &[u32] = &ex.sent_rows;
            if rows.is_empty() || rows.len() > self.config.max_sent {
                return Err(Error::Shape(format!("sentence of {} words, model allows 1..={}", rows.len(), self.config.max_sent)));
            }
            if ex.word_pos >= rows.len() {
                return Err(Error::Shape(format!("word position {} outside sentence of {}", ex.word_pos, rows.len())));
            }
            let u = *seen.entry(rows).or_insert_with(|| {
                unique.push(rows);
                unique.len() - 1
            });
            which.push(u);
        }
        let lengths: Vec<usize> = unique.iter().map(|r| r.len()).collect();
        let longest = lengths.iter().copied().max().unwrap_or(0);
        let mut steps = Vec::with_capacity(longest);
        for t in 0..longest {
            let mut data = vec![T::zero(); unique.len() * dim];
            for (u, rows) in unique.iter().enumerate() {
                if let Some(&r) = rows.get(t) {
                    for (d, &v) in data[u * dim..(u + 1) * dim].iter_mut().zip(emb_row(emb, r)?) {
                        *d = T::from_f64(v as f64);
                    }
                }
            }
            steps.push(tape.input(Tensor::matrix(unique.len(), dim, data)?));
        }
        let (f, b) = bilstm_encode_batch(tape, fwd, bwd, &steps, &lengths)?;
        match self.config.sentence_repr {
            SentenceRepr::Final => {
                let per_sentence = tape.concat_cols(&[f.final_h, b.final_h])?;
                tape.gather(per_sentence, which)
            }
            SentenceRepr::CurrentWord => {
                let n = unique.len();
                let ids: Vec<usize> = batch.iter().zip(&which).map(|(ex, &u)| ex.word_pos * n + u).collect();
                let all_f = tape.concat_rows(&f.per_step)?;
                let all_b = tape.concat_rows(&b.per_step)?;
                let hf = tape.gather(all_f, ids.clone())?;
                let hb = tape.gather(all_b, ids)?;
                tape.concat_cols(&[hf, hb])
            }
        }
    }

    /// Logits for a single example.
    pub fn forward(&self, ex: &Example, emb: &EmbeddingTable) -> Result<[T; NUM_CLASSES]> {
        let mut tape = Tape::new(&self.params);
        let logits = self.forward_batch(&mut tape, &[ex], emb)?;
        let mut out = [T::zero(); NUM_CLASSES];
        out.copy_from_slice(tape.value(logits).row(0));
        Ok(out)
    }

    pub fn predict(&self, ex: &Example, emb: &EmbeddingTable) -> Result<DiacriticClass> {
        Ok(predict_from_logits(&self.forward(ex, emb)?, ex.base))
    }

    /// Predictions for `examples`, evaluated `chunk` at a time.
    pub fn predict_all(&self, examples: &[Example], emb: &EmbeddingTable, chunk: usize) -> Result<Vec<DiacriticClass>> {
        let mut out = Vec::with_capacity(examples.len());
        for part in examples.chunks(chunk.max(1)) {
            let refs: Vec<&Example> = part.iter().collect();
            let mut tape = Tape::new(&self.params);
            let logits = self.forward_batch(&mut tape, &refs, emb)?;
            let values = tape.value(logits);
            out.extend(part.iter().enumerate().map(|(r, ex)| predict_from_logits(values.row(r), ex.base)));
        }
        Ok(out)
    }

    /// Mean masked cross-entropy of the batch; `class_weights` is indexed by
    /// [`DiacriticClass::index`].
    pub fn loss(
        &self,
        tape: &mut Tape<'_, T>,
        batch: &[&Example],
        emb: &EmbeddingTable,
        class_weights: &[f64; NUM_CLASSES],
    ) -> Result<Var> {
        let logits = self.forward_batch(tape, batch, emb)?;
        tape.softmax_xent(logits, xent_targets(batch, class_weights))
    }
}

pub fn xent_targets<T: Scalar>(batch: &[&Example], class_weights: &[f64; NUM_CLASSES]) -> XentTargets<T> {
    XentTargets {
        gold: batch.iter().map(|ex| ex.gold.index()).collect(),
        mask: batch.iter().flat_map(|ex| ex.base.class_mask()).collect(),
        weights: batch.iter().map(|ex| T::from_f64(class_weights[ex.gold.index()])).collect(),
    }
}

fn emb_row(emb: &EmbeddingTable, row: u32) -> Result<&[f32]> {
    if row as usize > emb.len() {
        return Err(Error::Shape(format!("embedding row {row} outside table of {}", emb.len())));
    }
    Ok(emb.row(row))
}

/// Argmax over the classes valid for `base`; ties go to the earlier class.
pub fn predict_from_logits<T: Scalar>(logits: &[T], base: TargetLetter) -> DiacriticClass {
    let mut best = DiacriticClass::None;
    let mut best_value: Option<T> = None;
    for &class in base.valid_classes() {
        let v = logits[class.index()];
        if best_value.map_or(true, |b| v > b) {
            best = class;
            best_value = Some(v);
        }
    }
    best
}

pub const CHECKPOINT_MAGIC: &[u8; 9] = b"DIAC-MDL1";
const MAX_RANK: usize = 4;

/// A trained model with its character vocabulary and the settings of the
/// run that produced it.
///
/// Binary layout, all integers little-endian:
///
/// ```text
/// "DIAC-MDL1"
/// u32 length, then `key=value` lines (UTF-8): model config, then run settings
/// u32 count, then per vocabulary character in id order (from id 2):
///     u32 length, UTF-8 bytes
/// u32 count, then per tensor in registration order:
///     u32 name length, name, u32 rank, rank × u32 dims, f32 data
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub vocab: CharVocab,
    /// Non-model settings recorded with the checkpoint (paths, training keys).
    pub settings: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn new(model: Model<f32>, vocab: CharVocab, settings: Vec<(String, String)>) -> Result<Checkpoint> {
        if model.vocab_size() != vocab.size() {
            return Err(Error::Shape(format!("model has {} char rows, vocabulary {}", model.vocab_size(), vocab.size())));
        }
        Ok(Checkpoint { model, vocab, settings })
    }

    pub fn setting(&self, key: &str) -> Option<&str> {
        self.settings.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        let mut config = String::new();
        for (k, v) in self.model.config().to_kv().iter().chain(&self.settings) {
            config.push_str(&format!("{k}={v}\n"));
        }
        write_block(&mut w, config.as_bytes())?;
        w.write_all(&(self.vocab.chars().len() as u32).to_le_bytes())?;
        for c in self.vocab.chars() {
            write_block(&mut w, c.to_string().as_bytes())?;
        }
        let params = self.model.params();
        w.write_all(&(params.len() as u32).to_le_bytes())?;
        for (name, t) in params.names().iter().zip(params.tensors()) {
            write_block(&mut w, name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Checkpoint> {
        const WHAT: &str = "checkpoint";
        if read_bytes(&mut r, CHECKPOINT_MAGIC.len(), WHAT)? != CHECKPOINT_MAGIC {
            return Err(Error::format(WHAT, "bad magic or unsupported version"));
        }
        let len = read_u32(&mut r, WHAT)? as usize;
        let config_text = String::from_utf8(read_bytes(&mut r, len, WHAT)?)
            .map_err(|_| Error::format(WHAT, "config block is not UTF-8"))?;
        let mut config = ModelConfig::default();
        let mut settings = Vec::new();
        for line in config_text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::format(WHAT, format!("config line {line:?}")))?;
            if !config.set(k, v).map_err(|e| Error::format(WHAT, e.to_string()))? {
                settings.push((k.to_owned(), v.to_owned()));
            }
        }
        config.validate().map_err(|e| Error::format(WHAT, e.to_string()))?;

        let count = read_u32(&mut r, WHAT)?;
        let mut chars = Vec::new();
        for _ in 0..count {
            let len = read_u32(&mut r, WHAT)? as usize;
            let s = String::from_utf8(read_bytes(&mut r, len, WHAT)?)
                .map_err(|_| Error::format(WHAT, "vocabulary entry is not UTF-8"))?;
            let mut it = s.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => chars.push(c),
                _ => return Err(Error::format(WHAT, format!("vocabulary entry {s:?} is not one character"))),
            }
        }
        let vocab = CharVocab::from_chars(chars).map_err(|e| Error::format(WHAT, e.to_string()))?;

        // Tensors are read before the model is built, so a hostile header
        // cannot force an allocation larger than the data actually present.
        let n = read_u32(&mut r, WHAT)?;
        let mut params = ParamSet::new();
        for _ in 0..n {
            let len = read_u32(&mut r, WHAT)? as usize;
            let name = String::from_utf8(read_bytes(&mut r, len, WHAT)?)
                .map_err(|_| Error::format(WHAT, "tensor name is not UTF-8"))?;
            let rank = read_u32(&mut r, WHAT)? as usize;
            if rank > MAX_RANK {
                return Err(Error::format(WHAT, format!("tensor {name:?} has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(&mut r, WHAT)? as usize);
            }
            let bytes = shape
                .iter()
                .try_fold(4usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::format(WHAT, format!("tensor {name:?} shape {shape:?} overflows")))?;
            let raw = read_bytes(&mut r, bytes, WHAT)?;
            let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            params.add(name, Tensor::from_vec(&shape, data)?);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::format(WHAT, "trailing bytes"));
        }
        let model = Model::from_params(config, vocab.size(), params).map_err(|e| Error::format(WHAT, e.to_string()))?;
        Ok(Checkpoint { model, vocab, settings })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::read(BufReader::new(file))
    }
}

fn write_block<W: Write>(w: &mut W, bytes: &[u8]) -> Result<()> {
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}
