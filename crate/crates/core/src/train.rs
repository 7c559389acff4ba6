//! Mini-batch training with early stopping, plus input preparation and
//! parameter accounting.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{EncoderKind, ModelConfig};
use crate::data::{parse_pairs, PairExample, Side};
use crate::encoder::{Document, PaddedDoc, SentenceVectors};
use crate::error::{Error, Result};
use crate::model::{layout, Component, DocInput, Model};
use crate::optim::{clip_global_norm, AdamState};
use crate::tape::{bce_value, Tape};
use crate::tensor::Real;
use crate::text::Vocab;

/// Examples per gradient work unit. Chunks are summed in a fixed order, so
/// gradients do not depend on the thread count.
pub const GRAD_CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Largest vocabulary built from the training file, reserved entries included.
    pub max_vocab: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            max_epochs: 100,
            patience: 5,
            learning_rate: 1e-5,
            clip_norm: Some(5.0),
            max_vocab: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::invalid("batch_size, patience and max_epochs must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be finite and non-negative"));
        }
        if matches!(self.clip_norm, Some(c) if c <= 0.0 || c.is_nan()) {
            return Err(Error::invalid("clip_norm must be positive"));
        }
        Ok(())
    }
}

/// A pair converted to encoder inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedPair {
    pub id: String,
    pub label: u8,
    pub a: DocInput,
    pub b: DocInput,
    pub gold_side: Option<Side>,
    /// Gold sentences that survived truncation.
    pub gold: Vec<usize>,
}

fn side_input(
    cfg: &ModelConfig,
    vocab: &Vocab,
    pair: &PairExample,
    side: Side,
    vectors: Option<&SentenceVectors>,
) -> Result<DocInput> {
    let sentences = pair.doc(side);
    let id = pair.doc_id(side);
    match cfg.encoder {
        EncoderKind::Gru => {
            let doc = Document::from_text(id, sentences, vocab, cfg.max_sentence_tokens, cfg.max_doc_sentences);
            Ok(DocInput::Tokens(PaddedDoc::unpadded(&doc)?))
        }
        EncoderKind::Precomputed | EncoderKind::PrecomputedAvg => {
            let vectors = vectors.ok_or_else(|| Error::invalid("precomputed encoders need a sentence-vector file"))?;
            let m = vectors.matrix::<f64>(&id, sentences.len(), cfg.precomputed_dim)?;
            let rows: Vec<Vec<f64>> = (0..m.rows().min(cfg.max_doc_sentences))
                .map(|r| m.row(r).to_vec())
                .collect();
            let mask = vec![true; rows.len()];
            Ok(DocInput::Vectors { rows, mask })
        }
    }
}

/// Tokenizes (or looks up vectors for) both documents of `pair`.
pub fn prepare_pair(
    cfg: &ModelConfig,
    vocab: &Vocab,
    pair: &PairExample,
    vectors: Option<&SentenceVectors>,
) -> Result<PreparedPair> {
    let a = side_input(cfg, vocab, pair, Side::A, vectors)?;
    let b = side_input(cfg, vocab, pair, Side::B, vectors)?;
    let gold = match pair.gold_side {
        Some(side) => {
            let kept = match side {
                Side::A => a.real_sentences(),
                Side::B => b.real_sentences(),
            };
            pair.gold_sentences
                .iter()
                .flatten()
                .copied()
                .filter(|&g| g < kept)
                .collect()
        }
        None => Vec::new(),
    };
    Ok(PreparedPair {
        id: pair.id.clone(),
        label: pair.label,
        a,
        b,
        gold_side: pair.gold_side,
        gold,
    })
}

pub fn prepare_all(
    cfg: &ModelConfig,
    vocab: &Vocab,
    pairs: &[PairExample],
    vectors: Option<&SentenceVectors>,
) -> Result<Vec<PreparedPair>> {
    pairs.iter().map(|p| prepare_pair(cfg, vocab, p, vectors)).collect()
}

fn token_extent(input: &DocInput) -> (usize, usize) {
    match input {
        DocInput::Tokens(p) => (p.slots(), p.tokens.first().map_or(0, Vec::len)),
        DocInput::Vectors { mask, .. } => (mask.len(), 0),
    }
}

fn repad(input: &DocInput, sentences: usize, tokens: usize) -> Result<DocInput> {
    match input {
        DocInput::Tokens(p) => {
            let real: Vec<Vec<usize>> = p
                .tokens
                .iter()
                .zip(&p.token_mask)
                .zip(&p.sentence_mask)
                .filter(|(_, s)| **s)
                .map(|((ids, m), _)| ids.iter().zip(m).filter(|(_, k)| **k).map(|(t, _)| *t).collect())
                .collect();
            let doc = Document {
                id: String::new(),
                raw_sentences: vec![String::new(); real.len()],
                sentences: real,
            };
            Ok(DocInput::Tokens(PaddedDoc::new(&doc, sentences, tokens)?))
        }
        DocInput::Vectors { rows, mask } => {
            let width = rows.first().map_or(0, Vec::len);
            let mut rows = rows.clone();
            let mut mask = mask.clone();
            rows.resize(sentences, vec![0.0; width]);
            mask.resize(sentences, false);
            Ok(DocInput::Vectors { rows, mask })
        }
    }
}

/// Pads every document of a batch to the batch's largest sentence count and
/// sentence length. Padding goes at the end of each axis and is masked out.
pub fn pad_batch(pairs: &[PreparedPair]) -> Result<Vec<PreparedPair>> {
    if pairs.is_empty() {
        return Err(Error::invalid("cannot pad an empty batch"));
    }
    let (mut s, mut t) = (0, 0);
    for p in pairs {
        for input in [&p.a, &p.b] {
            let (ps, pt) = token_extent(input);
            s = s.max(ps);
            t = t.max(pt);
        }
    }
    pairs
        .iter()
        .map(|p| {
            Ok(PreparedPair {
                a: repad(&p.a, s, t)?,
                b: repad(&p.b, s, t)?,
                ..p.clone()
            })
        })
        .collect()
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_acc: f64,
    pub seconds_train: f64,
    pub seconds_infer: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// The model with the lowest dev loss.
    pub model: Model<f32>,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_dev_loss: f64,
}

/// Summed loss and gradients over a slice of examples, accumulated in `f64`.
fn chunk_gradients(model: &Model<f32>, pairs: &[&PreparedPair]) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
    let mut acc: Vec<Option<Vec<f64>>> = vec![None; model.params.len()];
    let mut loss_sum = 0.0;
    for p in pairs {
        let mut tape = Tape::with_params(&model.params);
        let (loss, _) = model.pair_loss(&mut tape, &p.a, &p.b, p.label)?;
        let value = tape.value(loss).data()[0].as_f64();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss of pair {}", p.id)));
        }
        loss_sum += value;
        for (slot, g) in acc.iter_mut().zip(tape.backward(loss)?.into_param_grads()) {
            if let Some(g) = g {
                let s = slot.get_or_insert_with(|| vec![0.0; g.len()]);
                s.iter_mut().zip(&g).for_each(|(a, x)| *a += x.as_f64());
            }
        }
    }
    Ok((loss_sum, acc))
}

/// Mean loss and summed-then-averaged gradients of a batch.
pub fn batch_gradients(model: &Model<f32>, batch: &[&PreparedPair]) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
    let parts: Vec<(f64, Vec<Option<Vec<f64>>>)> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|c| chunk_gradients(model, c))
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; model.params.len()];
    for (l, g) in parts {
        loss += l;
        for (slot, g) in grads.iter_mut().zip(g) {
            if let Some(g) = g {
                match slot {
                    Some(s) => s.iter_mut().zip(&g).for_each(|(a, x)| *a += x),
                    None => *slot = Some(g),
                }
            }
        }
    }
    let n = batch.len() as f64;
    for g in grads.iter_mut().flatten() {
        g.iter_mut().for_each(|x| *x /= n);
    }
    Ok((loss / n, grads))
}

/// Mean loss and accuracy of `model` on `pairs`, without gradients.
pub fn evaluate_loss<F: Real>(model: &Model<F>, pairs: &[PreparedPair]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let per_pair: Vec<(f64, bool)> = pairs
        .par_iter()
        .map(|p| {
            let s = model.score_pair(&p.a, &p.b)?;
            let loss = bce_value(s.probability, p.label as f64);
            Ok((loss, s.predicted_label == p.label))
        })
        .collect::<Result<_>>()?;
    let n = pairs.len() as f64;
    let loss = per_pair.iter().map(|(l, _)| l).sum::<f64>() / n;
    let acc = per_pair.iter().filter(|(_, c)| *c).count() as f64 / n;
    Ok((loss, acc))
}

/// Trains `model` with Adam and early stopping on dev loss.
///
/// Each epoch shuffles the training pairs with the run seed, takes one Adam
/// step per batch and then scores the dev set. Training stops once the dev
/// loss has failed to improve strictly on the best value for `patience`
/// consecutive epochs. Epoch records are appended to `log_path` as they
/// complete when a path is given.
pub fn train_model(
    mut model: Model<f32>,
    train: &[PreparedPair],
    dev: &[PreparedPair],
    cfg: &TrainConfig,
    log_path: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::invalid("training and dev sets must be non-empty"));
    }
    let mut log_file = match log_path {
        Some(p) => Some(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?)),
        None => None,
    };
    let frozen = if model.config.train_embeddings {
        None
    } else {
        model.embedding_param()
    };
    let mut adam = AdamState::new(&model.params, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (f64::INFINITY, 0usize, model.params.clone());
    let mut log = Vec::new();
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&PreparedPair> = idx.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = batch_gradients(&model, &batch).map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!(
                    "{what} in batch {b} of epoch {epoch} (pairs {})",
                    batch.iter().map(|p| p.id.as_str()).collect::<Vec<_>>().join(", ")
                )),
                other => other,
            })?;
            for (i, (p, g)) in model.params.iter_mut().zip(grads).enumerate() {
                p.grad = match frozen {
                    Some(id) if id.index() == i => None,
                    _ => g.map(|g| g.into_iter().map(|x| x as f32).collect()),
                };
            }
            if let Some(max) = cfg.clip_norm {
                clip_global_norm(&mut model.params, max);
            }
            adam.step(&mut model.params)
                .map_err(|e| Error::NonFinite(format!("{e} in batch {b} of epoch {epoch}")))?;
            model.params.zero_grad();
            loss_sum += loss * batch.len() as f64;
        }
        let seconds_train = started.elapsed().as_secs_f64();
        let started = Instant::now();
        let (dev_loss, dev_acc) = evaluate_loss(&model, dev)?;
        let seconds_infer = started.elapsed().as_secs_f64();
        if !dev_loss.is_finite() {
            return Err(Error::NonFinite(format!("dev loss after epoch {epoch}")));
        }
        let record = EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            dev_loss,
            dev_acc,
            seconds_train,
            seconds_infer,
        };
        if let (Some(w), Some(p)) = (log_file.as_mut(), log_path) {
            serde_json::to_writer(&mut *w, &record)?;
            w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(p, e))?;
        }
        log.push(record);
        if dev_loss < best.0 {
            best = (dev_loss, epoch, model.params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    model.params = best.2;
    Ok(TrainOutcome {
        model,
        log,
        best_epoch: best.1,
        best_dev_loss: best.0,
    })
}

/// Files written by [`train_files`].
#[derive(Clone, Debug)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub outcome: TrainOutcome,
}

/// Parses the pair files, builds the vocabulary from the training pairs,
/// trains, and writes `checkpoint.json` and `train_log.jsonl` into `out_dir`.
pub fn train_files(
    train_path: &Path,
    dev_path: &Path,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    vectors: Option<&SentenceVectors>,
    out_dir: &Path,
) -> Result<TrainArtifacts> {
    train_cfg.validate()?;
    let train = parse_pairs(train_path)?;
    let dev = parse_pairs(dev_path)?;
    let vocab = Vocab::build(
        train.iter().flat_map(|p| p.doc_a.iter().chain(&p.doc_b)).map(String::as_str),
        train_cfg.max_vocab,
    );
    let model = Model::<f32>::new(model_cfg.clone(), vocab, train_cfg.seed)?;
    let train = prepare_all(&model.config, &model.vocab, &train, vectors)?;
    let dev = prepare_all(&model.config, &model.vocab, &dev, vectors)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log = out_dir.join("train_log.jsonl");
    let outcome = train_model(model, &train, &dev, train_cfg, Some(&log))?;
    let checkpoint = out_dir.join("checkpoint.json");
    Checkpoint::from_model(&outcome.model, train_cfg.seed).save(&checkpoint)?;
    Ok(TrainArtifacts {
        checkpoint,
        log,
        outcome,
    })
}

/// Exact parameter counts of a configuration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub components: BTreeMap<Component, usize>,
    pub total: usize,
    /// Parameters added by cross-document attention.
    pub cda_delta: usize,
}

impl ParamCounts {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for (c, n) in &self.components {
            out.push_str(&format!("{:<20}{n:>12}\n", c.name()));
        }
        out.push_str(&format!("{:<20}{:>12}\n", "total", self.total));
        out.push_str(&format!("{:<20}{:>12}\n", "cda delta", self.cda_delta));
        out
    }
}

pub fn count_parameters(cfg: &ModelConfig) -> Result<ParamCounts> {
    cfg.validate()?;
    let mut components = BTreeMap::new();
    for spec in layout(cfg) {
        *components.entry(spec.component).or_insert(0) += spec.size();
    }
    let cda_delta = components.iter().filter(|(c, _)| c.is_cda()).map(|(_, n)| n).sum();
    Ok(ParamCounts {
        total: components.values().sum(),
        components,
        cda_delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{CdaVariant, Integration};

    fn cfg(variant: CdaVariant, integration: Integration) -> ModelConfig {
        let mut c = ModelConfig {
            vocab_size: 5000,
            ..ModelConfig::default()
        };
        c.cda.variant = variant;
        c.cda.integration = integration;
        c
    }

    #[test]
    fn cda_parameter_deltas() {
        let none = count_parameters(&cfg(CdaVariant::None, Integration::Concat)).unwrap();
        let shallow = count_parameters(&cfg(CdaVariant::Shallow, Integration::Concat)).unwrap();
        let deep = count_parameters(&cfg(CdaVariant::Deep, Integration::Concat)).unwrap();
        let add = count_parameters(&cfg(CdaVariant::Shallow, Integration::Add)).unwrap();
        assert_eq!(none.cda_delta, 0);
        assert_eq!(shallow.cda_delta, 20_100);
        assert_eq!(shallow.total - none.total, 20_100);
        assert_eq!(deep.cda_delta, 40_200);
        assert_eq!(add.cda_delta, 0);
        assert_eq!(add.total, none.total);
    }

    fn tiny_pairs() -> (Vocab, Vec<PairExample>) {
        let vocab = Vocab::from_tokens(["a", "b", "c", "d"].map(String::from));
        let p = PairExample {
            id: "t".into(),
            label: 1,
            doc_a: vec!["a b".into(), "c".into()],
            doc_b: vec!["d d d".into()],
            gold_side: Some(Side::A),
            gold_sentences: Some(vec![1]),
        };
        (vocab, vec![p])
    }

    #[test]
    fn pad_batch_of_one_is_unchanged() {
        let (vocab, pairs) = tiny_pairs();
        let mut c = cfg(CdaVariant::None, Integration::Concat);
        c.vocab_size = vocab.len();
        let prepared = prepare_all(&c, &vocab, &pairs, None).unwrap();
        let padded = pad_batch(&prepared).unwrap();
        // both sides are padded to the same extent, so doc_b gains a slot
        let DocInput::Tokens(a) = &padded[0].a else { panic!() };
        assert!(a.sentence_mask.iter().all(|m| *m));
        assert!(a.token_mask[1][1..].iter().all(|m| !m));
        let DocInput::Tokens(b) = &padded[0].b else { panic!() };
        assert_eq!(b.sentence_mask, vec![true, false]);
    }

    #[test]
    fn gold_beyond_truncation_is_dropped() {
        let (vocab, pairs) = tiny_pairs();
        let mut c = cfg(CdaVariant::None, Integration::Concat);
        c.max_doc_sentences = 1;
        let p = prepare_pair(&c, &vocab, &pairs[0], None).unwrap();
        assert!(p.gold.is_empty());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (vocab, pairs) = tiny_pairs();
        let mut c = cfg(CdaVariant::Shallow, Integration::Concat);
        c.embed_dim = 4;
        c.hidden = 3;
        let model = Model::<f32>::new(c, vocab, 2).unwrap();
        let data = prepare_all(&model.config, &model.vocab, &pairs, None).unwrap();
        let before = model.params.clone();
        let tc = TrainConfig {
            learning_rate: 0.0,
            max_epochs: 3,
            patience: 5,
            ..TrainConfig::default()
        };
        let out = train_model(model, &data, &data, &tc, None).unwrap();
        assert_eq!(out.log.len(), 3);
        assert!(out.log.windows(2).all(|w| w[0].dev_loss == w[1].dev_loss));
        for (x, y) in out.model.params.iter().zip(before.iter()) {
            assert_eq!(x.value, y.value);
        }
    }
}
