//! The Siamese pair model: a shared hierarchical encoder, optional
//! cross-document attention and a relu/sigmoid classification head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cda::{deep_cda, sentence_candidates, shallow_cda, AffineParams, CdaParams, CdaSettings};
use crate::config::{CdaVariant, EncoderKind, Integration, ModelConfig};
use crate::encoder::{encode_sentences, encode_words, AttnParams, BiGruParams, EncodedDocument, GruParams, PaddedDoc, SentenceLevel, WordLevel};
use crate::error::{Error, Result};
use crate::params::{fan_in_uniform, uniform_vector, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};
use crate::text::Vocab;

/// Named groups used for parameter accounting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Embedding,
    WordGru,
    WordAttention,
    SentenceGru,
    SentenceAttention,
    CdaSentence,
    CdaDocument,
    Classifier,
}

impl Component {
    pub const ALL: [Component; 8] = [
        Component::Embedding,
        Component::WordGru,
        Component::WordAttention,
        Component::SentenceGru,
        Component::SentenceAttention,
        Component::CdaSentence,
        Component::CdaDocument,
        Component::Classifier,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Embedding => "embedding",
            Component::WordGru => "word_gru",
            Component::WordAttention => "word_attention",
            Component::SentenceGru => "sentence_gru",
            Component::SentenceAttention => "sentence_attention",
            Component::CdaSentence => "cda_sentence",
            Component::CdaDocument => "cda_document",
            Component::Classifier => "classifier",
        }
    }

    pub fn is_cda(self) -> bool {
        matches!(self, Component::CdaSentence | Component::CdaDocument)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    FanIn,
    Zero,
    Context,
    Embedding,
}

#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub component: Component,
    pub shape: Vec<usize>,
    init: Init,
}

impl ParamSpec {
    fn new(name: impl Into<String>, component: Component, shape: Vec<usize>, init: Init) -> Self {
        ParamSpec {
            name: name.into(),
            component,
            shape,
            init,
        }
    }

    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }
}

fn gru_specs(out: &mut Vec<ParamSpec>, prefix: &str, component: Component, input: usize, h: usize) {
    for dir in ["fwd", "bwd"] {
        out.push(ParamSpec::new(format!("{prefix}.{dir}.wx"), component, vec![input, 3 * h], Init::FanIn));
        out.push(ParamSpec::new(format!("{prefix}.{dir}.bx"), component, vec![3 * h], Init::Zero));
        out.push(ParamSpec::new(format!("{prefix}.{dir}.wh"), component, vec![h, 3 * h], Init::FanIn));
        out.push(ParamSpec::new(format!("{prefix}.{dir}.bh"), component, vec![3 * h], Init::Zero));
    }
}

fn attn_specs(out: &mut Vec<ParamSpec>, prefix: &str, component: Component, width: usize) {
    out.push(ParamSpec::new(format!("{prefix}.w"), component, vec![width, width], Init::FanIn));
    out.push(ParamSpec::new(format!("{prefix}.b"), component, vec![width], Init::Zero));
    out.push(ParamSpec::new(format!("{prefix}.u"), component, vec![width], Init::Context));
}

/// Every parameter the configuration needs, in creation order.
pub fn layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let h = cfg.hidden;
    let w = cfg.width();
    let mut out = Vec::new();
    match cfg.encoder {
        EncoderKind::Gru => {
            out.push(ParamSpec::new(
                "embedding",
                Component::Embedding,
                vec![cfg.vocab_size, cfg.embed_dim],
                Init::Embedding,
            ));
            gru_specs(&mut out, "word_gru", Component::WordGru, cfg.embed_dim, h);
            attn_specs(&mut out, "word_attn", Component::WordAttention, 2 * h);
            gru_specs(&mut out, "sent_gru", Component::SentenceGru, 2 * h, h);
            attn_specs(&mut out, "sent_attn", Component::SentenceAttention, 2 * h);
        }
        EncoderKind::Precomputed => {
            gru_specs(&mut out, "sent_gru", Component::SentenceGru, cfg.precomputed_dim, h);
            gru_specs(&mut out, "sent_gru2", Component::SentenceGru, 2 * h, h);
            attn_specs(&mut out, "sent_attn", Component::SentenceAttention, 2 * h);
        }
        EncoderKind::PrecomputedAvg => {}
    }
    if cfg.cda.integration == Integration::Concat {
        if cfg.cda.variant == CdaVariant::Deep {
            out.push(ParamSpec::new("cda_sent.w", Component::CdaSentence, vec![2 * w, w], Init::FanIn));
            out.push(ParamSpec::new("cda_sent.b", Component::CdaSentence, vec![w], Init::Zero));
        }
        if cfg.cda.variant != CdaVariant::None {
            out.push(ParamSpec::new("cda_doc.w", Component::CdaDocument, vec![2 * w, w], Init::FanIn));
            out.push(ParamSpec::new("cda_doc.b", Component::CdaDocument, vec![w], Init::Zero));
        }
    }
    let c = cfg.classifier_width();
    out.push(ParamSpec::new("cls.w1", Component::Classifier, vec![2 * w, c], Init::FanIn));
    out.push(ParamSpec::new("cls.b1", Component::Classifier, vec![c], Init::Zero));
    out.push(ParamSpec::new("cls.w2", Component::Classifier, vec![c, 1], Init::FanIn));
    out.push(ParamSpec::new("cls.b2", Component::Classifier, vec![1], Init::Zero));
    out
}

/// Half-width of the uniform range for randomly initialized embeddings.
pub const EMBEDDING_INIT: f64 = 0.5;

#[derive(Clone, Copy, Debug)]
struct HeadParams {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// One document prepared for the encoder.
#[derive(Clone, Debug, PartialEq)]
pub enum DocInput {
    Tokens(PaddedDoc),
    /// Externally computed sentence vectors, one row per sentence slot.
    Vectors { rows: Vec<Vec<f64>>, mask: Vec<bool> },
}

impl DocInput {
    pub fn sentence_mask(&self) -> &[bool] {
        match self {
            DocInput::Tokens(p) => &p.sentence_mask,
            DocInput::Vectors { mask, .. } => mask,
        }
    }

    pub fn real_sentences(&self) -> usize {
        self.sentence_mask().iter().filter(|m| **m).count()
    }
}

/// The pair graph built on a tape.
#[derive(Clone, Debug)]
pub struct PairForward {
    pub enc_a: EncodedDocument,
    pub enc_b: EncodedDocument,
    pub logit: Var,
    pub probability: Var,
}

/// Numeric outcome of scoring one pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub probability: f64,
    pub predicted_label: u8,
    /// Document vectors before cross-document attention.
    pub doc_a: Vec<f64>,
    pub doc_b: Vec<f64>,
    /// Final document vectors (`d̃` with CDA, `d` without).
    pub doc_tilde_a: Vec<f64>,
    pub doc_tilde_b: Vec<f64>,
    /// Sentence vectors used for alignment scoring, real sentences only.
    pub sentences_a: Vec<Vec<f64>>,
    pub sentences_b: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Model<F: Real> {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore<F>,
    words: Option<WordLevel>,
    sentences: Option<SentenceLevel>,
    cda: CdaParams,
    head: HeadParams,
}

impl<F: Real> Model<F> {
    /// Fresh model with seeded initialization. `config.vocab_size` is taken from `vocab`
    /// for the GRU encoder.
    pub fn new(mut config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        if config.encoder == EncoderKind::Gru {
            config.vocab_size = vocab.len();
        }
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for spec in layout(&config) {
            let t = match spec.init {
                Init::FanIn => fan_in_uniform(&mut rng, spec.shape[0], spec.shape[1]),
                Init::Zero => Tensor::zeros(spec.shape.clone()),
                Init::Context => uniform_vector(&mut rng, spec.shape[0]),
                Init::Embedding => {
                    let data = (0..spec.size())
                        .map(|_| F::of(rng.gen_range(-EMBEDDING_INIT..EMBEDDING_INIT)))
                        .collect();
                    Tensor::new(spec.shape.clone(), data)?
                }
            };
            store.add(spec.name, t);
        }
        Self::from_params(config, vocab, store)
    }

    /// Binds an existing parameter store, checking names and shapes against the layout.
    pub fn from_params(config: ModelConfig, mut vocab: Vocab, params: ParamStore<F>) -> Result<Self> {
        config.validate()?;
        vocab.reindex();
        let specs = layout(&config);
        if specs.len() != params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameters, found {}",
                specs.len(),
                params.len()
            )));
        }
        for spec in &specs {
            let id = params
                .find(&spec.name)
                .ok_or_else(|| Error::invalid(format!("missing parameter {}", spec.name)))?;
            if params.value(id).shape() != spec.shape.as_slice() {
                return Err(Error::Shape {
                    op: "parameter",
                    lhs: spec.shape.clone(),
                    rhs: params.value(id).shape().to_vec(),
                });
            }
        }
        let id = |name: &str| params.find(name).expect("checked above");
        let gru = |prefix: &str| {
            let dir = |d: &str| GruParams {
                wx: id(&format!("{prefix}.{d}.wx")),
                bx: id(&format!("{prefix}.{d}.bx")),
                wh: id(&format!("{prefix}.{d}.wh")),
                bh: id(&format!("{prefix}.{d}.bh")),
            };
            BiGruParams {
                fwd: dir("fwd"),
                bwd: dir("bwd"),
            }
        };
        let attn = |prefix: &str| AttnParams {
            w: id(&format!("{prefix}.w")),
            b: id(&format!("{prefix}.b")),
            u: id(&format!("{prefix}.u")),
        };
        let affine = |prefix: &str| {
            params.find(&format!("{prefix}.w")).map(|w| AffineParams {
                w,
                b: id(&format!("{prefix}.b")),
            })
        };
        let (words, sentences) = match config.encoder {
            EncoderKind::Gru => (
                Some(WordLevel {
                    embedding: id("embedding"),
                    gru: gru("word_gru"),
                    attn: attn("word_attn"),
                }),
                Some(SentenceLevel {
                    grus: vec![gru("sent_gru")],
                    attn: attn("sent_attn"),
                }),
            ),
            EncoderKind::Precomputed => (
                None,
                Some(SentenceLevel {
                    grus: vec![gru("sent_gru"), gru("sent_gru2")],
                    attn: attn("sent_attn"),
                }),
            ),
            EncoderKind::PrecomputedAvg => (None, None),
        };
        let cda = CdaParams {
            sentence: affine("cda_sent"),
            document: affine("cda_doc"),
        };
        let head = HeadParams {
            w1: id("cls.w1"),
            b1: id("cls.b1"),
            w2: id("cls.w2"),
            b2: id("cls.b2"),
        };
        Ok(Model {
            config,
            vocab,
            params,
            words,
            sentences,
            cda,
            head,
        })
    }

    /// Same model in another float precision.
    pub fn cast<G: Real>(&self) -> Model<G> {
        Model::from_params(self.config.clone(), self.vocab.clone(), self.params.cast()).expect("same layout")
    }

    /// The same model under another CDA variant, reusing every parameter the
    /// new layout needs. Dropping to `none` bypasses CDA entirely.
    pub fn with_variant(&self, variant: CdaVariant) -> Result<Self> {
        let mut config = self.config.clone();
        config.cda.variant = variant;
        config.validate()?;
        let mut store = ParamStore::new();
        for spec in layout(&config) {
            let id = self.params.find(&spec.name).ok_or_else(|| {
                Error::invalid(format!("no parameter {} for the {variant} variant", spec.name))
            })?;
            store.add(spec.name, self.params.value(id).clone());
        }
        Self::from_params(config, self.vocab.clone(), store)
    }

    pub fn embedding_param(&self) -> Option<ParamId> {
        self.words.map(|w| w.embedding)
    }

    fn cda_settings(&self) -> CdaSettings {
        CdaSettings {
            integration: self.config.cda.integration,
            source: self.config.candidate_source(),
        }
    }

    /// Encodes one document through the document-vector stage (no CDA).
    pub fn encode(&self, tape: &mut Tape<'_, F>, input: &DocInput) -> Result<EncodedDocument> {
        match (self.config.encoder, input) {
            (EncoderKind::Gru, DocInput::Tokens(doc)) => {
                let words = self.words.as_ref().expect("gru model has a word level");
                let (sent_pre, token_vectors, word_attention) = encode_words(tape, words, doc)?;
                let mut enc = self.encode_from_sentences(tape, sent_pre, &doc.sentence_mask)?;
                enc.token_vectors = Some(token_vectors);
                enc.token_masks = Some(doc.token_mask.clone());
                enc.word_attention = word_attention;
                Ok(enc)
            }
            (EncoderKind::Precomputed | EncoderKind::PrecomputedAvg, DocInput::Vectors { rows, mask }) => {
                let expected = self.config.precomputed_dim;
                if let Some(r) = rows.iter().find(|r| r.len() != expected) {
                    return Err(Error::Width {
                        expected,
                        actual: r.len(),
                    });
                }
                let t: Tensor<F> = Tensor::from_rows(
                    &rows
                        .iter()
                        .map(|r| r.iter().map(|x| F::of(*x)).collect())
                        .collect::<Vec<_>>(),
                )?;
                let sent_pre = tape.input(t);
                self.encode_from_sentences(tape, sent_pre, mask)
            }
            (kind, _) => Err(Error::invalid(format!("input does not match the {kind} encoder"))),
        }
    }

    /// Runs the sentence level from given sentence vectors.
    pub fn encode_from_sentences(&self, tape: &mut Tape<'_, F>, sent_pre: Var, mask: &[bool]) -> Result<EncodedDocument> {
        let (sent_mid, sent_ctx, doc, alpha) = match &self.sentences {
            Some(level) => {
                let (mid, ctx, doc, alpha) = encode_sentences(tape, level, sent_pre, mask)?;
                (mid, ctx, doc, Some(alpha))
            }
            None => (None, sent_pre, tape.mean_rows(sent_pre, Some(mask))?, None),
        };
        Ok(EncodedDocument {
            token_vectors: None,
            token_masks: None,
            sent_pre,
            sent_mid,
            sent_ctx,
            doc,
            sent_tilde: None,
            doc_tilde: None,
            sentence_mask: mask.to_vec(),
            word_attention: Vec::new(),
            sentence_attention: alpha,
        })
    }

    /// Applies the configured CDA variant to two encodings.
    pub fn apply_cda(
        &self,
        tape: &mut Tape<'_, F>,
        enc_a: EncodedDocument,
        enc_b: EncodedDocument,
    ) -> Result<(EncodedDocument, EncodedDocument)> {
        let cfg = self.cda_settings();
        match self.config.cda.variant {
            CdaVariant::None => Ok((enc_a, enc_b)),
            CdaVariant::Shallow => {
                let (da, db) = shallow_cda(tape, &enc_a, &enc_b, &self.cda, &cfg)?;
                Ok((
                    EncodedDocument {
                        doc_tilde: Some(da),
                        ..enc_a
                    },
                    EncodedDocument {
                        doc_tilde: Some(db),
                        ..enc_b
                    },
                ))
            }
            CdaVariant::Deep => {
                let level = self.sentences.as_ref().expect("deep CDA requires the sentence level");
                deep_cda(tape, &enc_a, &enc_b, &self.cda, level, &cfg)
            }
        }
    }

    /// Classifier head on `[final_a; final_b]`, returning `(logit, probability)`.
    pub fn classify(&self, tape: &mut Tape<'_, F>, final_a: Var, final_b: Var) -> Result<(Var, Var)> {
        let joined = tape.concat(&[final_a, final_b])?;
        let (w1, b1, w2, b2) = (
            tape.param(self.head.w1),
            tape.param(self.head.b1),
            tape.param(self.head.w2),
            tape.param(self.head.b2),
        );
        let hidden = tape.affine(joined, w1, b1)?;
        let hidden = tape.relu(hidden)?;
        let logit = tape.affine(hidden, w2, b2)?;
        let p = tape.sigmoid(logit)?;
        Ok((logit, p))
    }

    pub fn forward_pair(&self, tape: &mut Tape<'_, F>, a: &DocInput, b: &DocInput) -> Result<PairForward> {
        let enc_a = self.encode(tape, a)?;
        let enc_b = self.encode(tape, b)?;
        let (enc_a, enc_b) = self.apply_cda(tape, enc_a, enc_b)?;
        let (logit, probability) = self.classify(tape, enc_a.final_doc(), enc_b.final_doc())?;
        Ok(PairForward {
            enc_a,
            enc_b,
            logit,
            probability,
        })
    }

    /// Cross-entropy of the pair prediction against `label`.
    pub fn pair_loss(&self, tape: &mut Tape<'_, F>, a: &DocInput, b: &DocInput, label: u8) -> Result<(Var, PairForward)> {
        let fwd = self.forward_pair(tape, a, b)?;
        let loss = tape.bce(fwd.probability, F::of(label as f64))?;
        Ok((loss, fwd))
    }

    /// The sentence matrix of `enc` scored during alignment.
    pub fn alignment_sentences(&self, enc: &EncodedDocument) -> Result<Var> {
        match self.config.cda.variant {
            CdaVariant::None => Ok(enc.sent_ctx),
            _ => sentence_candidates(enc, self.config.candidate_source()),
        }
    }

    pub fn score_pair(&self, a: &DocInput, b: &DocInput) -> Result<PairScore> {
        let mut tape = Tape::with_params(&self.params);
        let fwd = self.forward_pair(&mut tape, a, b)?;
        let probability = tape.value(fwd.probability).data()[0].as_f64();
        if !probability.is_finite() {
            return Err(Error::NonFinite("pair probability".into()));
        }
        let rows = |tape: &Tape<'_, F>, v: Var, mask: &[bool]| -> Vec<Vec<f64>> {
            let t = tape.value(v);
            (0..t.rows())
                .filter(|&r| mask[r])
                .map(|r| t.row(r).iter().map(|x| x.as_f64()).collect())
                .collect()
        };
        let vec = |tape: &Tape<'_, F>, v: Var| tape.value(v).data().iter().map(|x| x.as_f64()).collect();
        let sa = self.alignment_sentences(&fwd.enc_a)?;
        let sb = self.alignment_sentences(&fwd.enc_b)?;
        Ok(PairScore {
            probability,
            predicted_label: u8::from(probability >= self.config.threshold),
            doc_a: vec(&tape, fwd.enc_a.doc),
            doc_b: vec(&tape, fwd.enc_b.doc),
            doc_tilde_a: vec(&tape, fwd.enc_a.final_doc()),
            doc_tilde_b: vec(&tape, fwd.enc_b.final_doc()),
            sentences_a: rows(&tape, sa, &fwd.enc_a.sentence_mask),
            sentences_b: rows(&tape, sb, &fwd.enc_b.sentence_mask),
        })
    }
}
