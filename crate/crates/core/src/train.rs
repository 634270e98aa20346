//! Mini-batch Adam training with per-epoch dev selection.

use std::fmt;
use std::time::Instant;

use crate::dataset::{batches, featurize, CharVocab, Example, TargetInstance};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, Metrics};
use crate::model::{parse_num, Model, ModelConfig, NUM_CLASSES};
use crate::nn::adam::{Adam, AdamConfig};
use crate::nn::tape::Tape;
use crate::textnorm::{DiacriticClass, Sentence};

/// How cross-entropy terms are weighted by gold class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassWeights {
    Fixed([f64; NUM_CLASSES]),
    /// `n / (k · count_c)` over the training examples, where `k` is the
    /// number of classes present; absent classes get 1.
    InverseFrequency,
}

impl fmt::Display for ClassWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassWeights::InverseFrequency => f.write_str("inverse_frequency"),
            ClassWeights::Fixed(w) => {
                let parts: Vec<String> = w.iter().map(|x| format!("{x:?}")).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

impl ClassWeights {
    pub fn parse(v: &str) -> Result<ClassWeights> {
        if v == "inverse_frequency" {
            return Ok(ClassWeights::InverseFrequency);
        }
        let parts: Vec<f64> = v.split(',').map(|p| parse_num("class_weights", p)).collect::<Result<_>>()?;
        let w: [f64; NUM_CLASSES] = parts
            .try_into()
            .map_err(|_| Error::Config(format!("class_weights: expected {NUM_CLASSES} values or inverse_frequency")))?;
        Ok(ClassWeights::Fixed(w))
    }

    pub fn resolve(&self, examples: &[Example]) -> [f64; NUM_CLASSES] {
        match *self {
            ClassWeights::Fixed(w) => w,
            ClassWeights::InverseFrequency => {
                let mut counts = [0usize; NUM_CLASSES];
                for ex in examples {
                    counts[ex.gold.index()] += 1;
                }
                let present = counts.iter().filter(|&&c| c > 0).count().max(1) as f64;
                counts.map(|c| if c == 0 { 1.0 } else { examples.len() as f64 / (present * c as f64) })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub class_weights: ClassWeights,
    pub shuffle_seed: u64,
    /// Global gradient-norm clip; off when `None`.
    pub clip_norm: Option<f64>,
    /// Examples per forward pass during evaluation.
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 256,
            lr: 1e-3,
            class_weights: ClassWeights::Fixed([1.0; NUM_CLASSES]),
            shuffle_seed: 0,
            clip_norm: None,
            eval_batch: 1024,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 7] =
        ["epochs", "batch_size", "lr", "class_weights", "shuffle_seed", "clip_norm", "eval_batch"];

    /// Applies one `key=value` setting; `Ok(false)` for keys it does not own.
    pub fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "epochs" => self.epochs = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "class_weights" => self.class_weights = ClassWeights::parse(v)?,
            "shuffle_seed" => self.shuffle_seed = parse_num(key, v)?,
            "clip_norm" => self.clip_norm = if v == "off" { None } else { Some(parse_num(key, v)?) },
            "eval_batch" => self.eval_batch = parse_num(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        [
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", format!("{:?}", self.lr)),
            ("class_weights", self.class_weights.to_string()),
            ("shuffle_seed", self.shuffle_seed.to_string()),
            ("clip_norm", self.clip_norm.map_or("off".to_owned(), |c| format!("{c:?}"))),
            ("eval_batch", self.eval_batch.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.epochs == 0 {
            problems.push("epochs must be at least 1".to_owned());
        }
        if self.batch_size == 0 || self.eval_batch == 0 {
            problems.push("batch sizes must be at least 1".to_owned());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            problems.push(format!("lr {} must be positive", self.lr));
        }
        if let ClassWeights::Fixed(w) = self.class_weights {
            if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                problems.push("class_weights must be positive".to_owned());
            }
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                problems.push(format!("clip_norm {c} must be positive"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_char_acc: f64,
    pub seconds: f64,
}

impl fmt::Display for EpochRecord {
    /// `epoch\ttrain_loss\tdev_char_acc\tseconds`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{:.6}\t{:.6}\t{:.2}", self.epoch, self.train_loss, self.dev_char_acc, self.seconds)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    /// First epoch with the highest dev accuracy.
    pub fn best_epoch(&self) -> Option<usize> {
        let mut best: Option<&EpochRecord> = None;
        for r in &self.records {
            if best.map_or(true, |b| r.dev_char_acc > b.dev_char_acc) {
                best = Some(r);
            }
        }
        best.map(|r| r.epoch)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Model<f32>,
    pub best_epoch: usize,
    pub last: Model<f32>,
    pub log: TrainLog,
}

/// Model predictions for every target of `sentences`.
pub fn predict_sentences(
    model: &Model<f32>,
    sentences: &[Sentence],
    emb: &EmbeddingTable,
    vocab: &CharVocab,
    chunk: usize,
) -> Result<Vec<(TargetInstance, DiacriticClass)>> {
    let data = featurize(sentences, vocab, emb, model.config().example_shape());
    let preds = model.predict_all(&data.examples, emb, chunk)?;
    Ok(data.targets.into_iter().zip(preds).collect())
}

/// Scores `model` on `sentences`. Reads parameters only.
pub fn evaluate(model: &Model<f32>, sentences: &[Sentence], emb: &EmbeddingTable, vocab: &CharVocab) -> Result<Metrics> {
    compute_metrics(&predict_sentences(model, sentences, emb, vocab, 1024)?, sentences)
}

fn check_inputs(model_cfg: &ModelConfig, emb: &EmbeddingTable, vocab: &CharVocab) -> Result<()> {
    if model_cfg.needs_embeddings() && emb.dim() != model_cfg.word_dim {
        return Err(Error::Config(format!(
            "word_dim is {} but the embedding table has dimension {}",
            model_cfg.word_dim,
            emb.dim()
        )));
    }
    if vocab.size() < 3 {
        return Err(Error::Data("character vocabulary is empty".into()));
    }
    Ok(())
}

/// One Adam step on `batch`; returns the batch loss before the update.
pub fn train_step(
    model: &mut Model<f32>,
    adam: &mut Adam<f32>,
    batch: &[&Example],
    emb: &EmbeddingTable,
    class_weights: &[f64; NUM_CLASSES],
    clip_norm: Option<f64>,
    batch_index: usize,
) -> Result<f64> {
    let (loss, mut grads) = {
        let mut tape = Tape::new(model.params());
        let loss = model.loss(&mut tape, batch, emb, class_weights)?;
        let value = tape.value(loss).data()[0] as f64;
        if !value.is_finite() {
            return Err(Error::NonFinite { what: "training loss", batch: batch_index });
        }
        (value, tape.backward(loss)?)
    };
    if !grads.all_finite() {
        return Err(Error::NonFinite { what: "gradient", batch: batch_index });
    }
    if let Some(max) = clip_norm {
        let norm = grads.global_norm() as f64;
        if norm > max {
            grads.scale((max / norm) as f32);
        }
    }
    adam.step(model.params_mut(), &grads)?;
    Ok(loss)
}

/// Trains a fresh model and returns the epoch with the best dev character
/// accuracy (earliest on ties). `on_epoch` sees every log record as it is
/// produced.
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &[Sentence],
    dev_set: &[Sentence],
    emb: &EmbeddingTable,
    vocab: &CharVocab,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    train_cfg.validate()?;
    check_inputs(model_cfg, emb, vocab)?;
    let shape = model_cfg.example_shape();
    let train_data = featurize(train_set, vocab, emb, shape);
    if train_data.examples.is_empty() {
        return Err(Error::Data("training set has no target letters".into()));
    }
    let dev_data = featurize(dev_set, vocab, emb, shape);
    if dev_data.examples.is_empty() {
        return Err(Error::Data("dev set has no target letters".into()));
    }
    let weights = train_cfg.class_weights.resolve(&train_data.examples);

    let mut model = Model::<f32>::init(model_cfg.clone(), vocab.size())?;
    let mut adam = Adam::new(model.params(), AdamConfig { lr: train_cfg.lr, ..AdamConfig::default() });
    let mut log = TrainLog::default();
    let mut best: Option<(f64, usize, Model<f32>)> = None;
    let mut batch_index = 0;
    for epoch in 1..=train_cfg.epochs {
        let start = Instant::now();
        let order = batches(train_data.examples.len(), train_cfg.batch_size, train_cfg.shuffle_seed.wrapping_add(epoch as u64))?;
        let mut total = 0.0;
        for ids in order {
            let batch: Vec<&Example> = ids.iter().map(|&i| &train_data.examples[i]).collect();
            let loss = train_step(&mut model, &mut adam, &batch, emb, &weights, train_cfg.clip_norm, batch_index)?;
            total += loss * batch.len() as f64;
            batch_index += 1;
        }
        let preds = model.predict_all(&dev_data.examples, emb, train_cfg.eval_batch)?;
        let correct = preds.iter().zip(&dev_data.examples).filter(|(p, ex)| **p == ex.gold).count();
        let record = EpochRecord {
            epoch,
            train_loss: total / train_data.examples.len() as f64,
            dev_char_acc: correct as f64 / preds.len() as f64,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        log.records.push(record);
        if best.as_ref().map_or(true, |(acc, _, _)| record.dev_char_acc > *acc) {
            best = Some((record.dev_char_acc, epoch, model.clone()));
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome { best, best_epoch, last: model, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::build_char_vocab;
    use crate::textnorm::split_sentences;

    fn chars_only() -> ModelConfig {
        ModelConfig {
            char_emb_dim: 8,
            char_lstm_h: 8,
            hidden_sizes: vec![16],
            use_word_path: false,
            use_sentence_path: false,
            window: 7,
            seed: 1,
            ..ModelConfig::default()
        }
    }

    fn corpus() -> Vec<Sentence> {
        split_sentences(
            "Fata își spală fața. Tatăl a plecat astăzi la țară. Și ea știe asta. \
             În sat sunt case frumoase. Mâine mergem la școală.",
        )
    }

    #[test]
    fn config_keys_round_trip() {
        let mut c = TrainConfig::default();
        for (k, v) in [("epochs", "3"), ("lr", "0.01"), ("class_weights", "1,2,3,4"), ("clip_norm", "5")] {
            assert!(c.set(k, v).unwrap());
        }
        assert!(!c.set("bogus", "1").unwrap());
        let mut d = TrainConfig::default();
        for (k, v) in c.to_kv() {
            d.set(&k, &v).unwrap();
        }
        assert_eq!(c, d);
        assert!(TrainConfig { epochs: 0, ..c.clone() }.validate().is_err());
        assert!(ClassWeights::parse("1,2").is_err());
        assert!(TrainConfig { class_weights: ClassWeights::Fixed([1.0, 0.0, 1.0, 1.0]), ..c }.validate().is_err());
    }

    #[test]
    fn inverse_frequency_weights() {
        let sentences = corpus();
        let vocab = build_char_vocab(&sentences, 1).unwrap();
        let emb = EmbeddingTable::empty(300);
        let data = featurize(&sentences, &vocab, &emb, chars_only().example_shape());
        let w = ClassWeights::InverseFrequency.resolve(&data.examples);
        let mut counts = [0.0; 4];
        for ex in &data.examples {
            counts[ex.gold.index()] += 1.0;
        }
        // each present class then carries the same total weight
        let totals: Vec<f64> = counts.iter().zip(w).filter(|(c, _)| **c > 0.0).map(|(c, w)| c * w).collect();
        for t in &totals {
            assert!((t - totals[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_decreases_over_first_steps() {
        let sentences = corpus();
        let vocab = build_char_vocab(&sentences, 1).unwrap();
        let emb = EmbeddingTable::empty(300);
        let data = featurize(&sentences, &vocab, &emb, chars_only().example_shape());
        let batch: Vec<&Example> = data.examples.iter().collect();
        let mut model = Model::<f32>::init(chars_only(), vocab.size()).unwrap();
        let mut adam = Adam::new(model.params(), AdamConfig { lr: 1e-2, ..AdamConfig::default() });
        let mut losses = Vec::new();
        for i in 0..6 {
            losses.push(train_step(&mut model, &mut adam, &batch, &emb, &[1.0; 4], None, i).unwrap());
        }
        let increases = losses.windows(2).filter(|w| w[1] >= w[0]).count();
        assert!(increases <= 1, "{losses:?}");
    }

    #[test]
    fn epochs_log_and_selection() {
        let sentences = corpus();
        let vocab = build_char_vocab(&sentences, 1).unwrap();
        let emb = EmbeddingTable::empty(300);
        let cfg = TrainConfig { epochs: 5, batch_size: 16, lr: 1e-2, ..TrainConfig::default() };
        let mut seen = Vec::new();
        let out = train(&chars_only(), &cfg, &sentences, &sentences[..2], &emb, &vocab, |r| seen.push(r.epoch)).unwrap();
        assert_eq!(seen, vec![1, 2, 3, 4, 5]);
        assert_eq!(out.log.records.len(), 5);
        assert_eq!(Some(out.best_epoch), out.log.best_epoch());
        assert!((1..=5).contains(&out.best_epoch));
        let best_acc = out.log.records[out.best_epoch - 1].dev_char_acc;
        let m = evaluate(&out.best, &sentences[..2], &emb, &vocab).unwrap();
        assert_eq!(m.char_acc, best_acc);
    }

    #[test]
    fn runs_are_deterministic() {
        let sentences = corpus();
        let vocab = build_char_vocab(&sentences, 1).unwrap();
        let emb = EmbeddingTable::empty(300);
        let cfg = TrainConfig { epochs: 2, batch_size: 8, ..TrainConfig::default() };
        let a = train(&chars_only(), &cfg, &sentences, &sentences, &emb, &vocab, |_| {}).unwrap();
        let b = train(&chars_only(), &cfg, &sentences, &sentences, &emb, &vocab, |_| {}).unwrap();
        assert_eq!(a.last.params(), b.last.params());
        for (x, y) in a.log.records.iter().zip(&b.log.records) {
            assert_eq!((x.train_loss.to_bits(), x.dev_char_acc.to_bits()), (y.train_loss.to_bits(), y.dev_char_acc.to_bits()));
        }
    }

    #[test]
    fn evaluate_is_pure() {
        let sentences = corpus();
        let vocab = build_char_vocab(&sentences, 1).unwrap();
        let emb = EmbeddingTable::empty(300);
        let model = Model::<f32>::init(chars_only(), vocab.size()).unwrap();
        let before = model.params().clone();
        let a = evaluate(&model, &sentences, &emb, &vocab).unwrap();
        let b = evaluate(&model, &sentences, &emb, &vocab).unwrap();
        assert_eq!(a, b);
        assert_eq!(&before, model.params());
        assert!(evaluate(&model, &[Sentence::new("cub de gheb")], &emb, &vocab).is_err());
    }

    #[test]
    fn full_model_requires_matching_embeddings() {
        let sentences = corpus();
        let vocab = build_char_vocab(&sentences, 1).unwrap();
        let emb = EmbeddingTable::empty(10);
        let cfg = ModelConfig { use_word_path: true, ..chars_only() };
        let err = train(&cfg, &TrainConfig::default(), &sentences, &sentences, &emb, &vocab, |_| {}).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn non_finite_loss_reports_batch() {
        let sentences = corpus();
        let vocab = build_char_vocab(&sentences, 1).unwrap();
        let emb = EmbeddingTable::empty(300);
        let data = featurize(&sentences, &vocab, &emb, chars_only().example_shape());
        let batch: Vec<&Example> = data.examples.iter().collect();
        let mut model = Model::<f32>::init(chars_only(), vocab.size()).unwrap();
        let bias = model.output_bias();
        model.params_mut().get_mut(bias).data_mut()[0] = f32::NAN;
        let mut adam = Adam::new(model.params(), AdamConfig::default());
        let err = train_step(&mut model, &mut adam, &batch, &emb, &[1.0; 4], None, 7).unwrap_err();
        assert!(matches!(err, Error::NonFinite { batch: 7, .. }));
    }
}
