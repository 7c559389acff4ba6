//! Model configuration: dimensions and variant switches.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How sentence vectors are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Word embeddings, word-level bi-GRU, attention pooling, sentence-level bi-GRU.
    Gru,
    /// Externally supplied sentence vectors, two sentence-level bi-GRU layers.
    Precomputed,
    /// Externally supplied sentence vectors averaged into the document vector.
    PrecomputedAvg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CdaVariant {
    None,
    Shallow,
    Deep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integration {
    Concat,
    Add,
}

/// Which sentence vectors of the other document serve as attention candidates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    /// Sentence vectors before sentence-level contextualization.
    PreContext,
    /// Output of the first of two sentence-level GRU layers (precomputed mode).
    FirstLayer,
    /// Sentence vectors after sentence-level contextualization.
    PostContext,
}

macro_rules! string_enum {
    ($ty:ty { $($name:literal => $variant:expr),* $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)*
                    _ => Err(Error::invalid(format!(
                        "unknown {} `{}` (expected one of: {})",
                        stringify!($ty), s, [$($name),*].join(", ")
                    ))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let name = match self {
                    $(v if *v == $variant => $name,)*
                    _ => unreachable!(),
                };
                f.write_str(name)
            }
        }
    };
}

string_enum!(EncoderKind { "gru" => EncoderKind::Gru, "precomputed" => EncoderKind::Precomputed, "precomputed_avg" => EncoderKind::PrecomputedAvg });
string_enum!(CdaVariant { "none" => CdaVariant::None, "shallow" => CdaVariant::Shallow, "deep" => CdaVariant::Deep });
string_enum!(Integration { "concat" => Integration::Concat, "add" => Integration::Add });
string_enum!(CandidateSource { "pre_context" => CandidateSource::PreContext, "first_layer" => CandidateSource::FirstLayer, "post_context" => CandidateSource::PostContext });

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdaConfig {
    pub variant: CdaVariant,
    pub integration: Integration,
    /// `None` picks the encoder's default.
    #[serde(default)]
    pub candidate_source: Option<CandidateSource>,
}

impl Default for CdaConfig {
    fn default() -> Self {
        CdaConfig {
            variant: CdaVariant::None,
            integration: Integration::Concat,
            candidate_source: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    /// Rows of the embedding table, including `<unk>` and `<pad>`.
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// GRU hidden size per direction.
    pub hidden: usize,
    /// Width of externally supplied sentence vectors.
    pub precomputed_dim: usize,
    pub train_embeddings: bool,
    pub max_sentence_tokens: usize,
    pub max_doc_sentences: usize,
    pub cda: CdaConfig,
    /// Width of the classifier's relu layer; defaults to the document vector width.
    pub classifier_hidden: Option<usize>,
    pub threshold: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderKind::Gru,
            vocab_size: 2,
            embed_dim: 50,
            hidden: 50,
            precomputed_dim: 768,
            train_embeddings: true,
            max_sentence_tokens: 64,
            max_doc_sentences: 64,
            cda: CdaConfig::default(),
            classifier_hidden: None,
            threshold: 0.5,
        }
    }
}

impl ModelConfig {
    /// Width of sentence and document vectors fed to pooling, CDA and the classifier.
    pub fn width(&self) -> usize {
        match self.encoder {
            EncoderKind::Gru | EncoderKind::Precomputed => 2 * self.hidden,
            EncoderKind::PrecomputedAvg => self.precomputed_dim,
        }
    }

    /// Width of the sentence vectors entering sentence-level contextualization.
    pub fn sentence_input_width(&self) -> usize {
        match self.encoder {
            EncoderKind::Gru => 2 * self.hidden,
            EncoderKind::Precomputed | EncoderKind::PrecomputedAvg => self.precomputed_dim,
        }
    }

    pub fn classifier_width(&self) -> usize {
        self.classifier_hidden.unwrap_or_else(|| self.width())
    }

    pub fn candidate_source(&self) -> CandidateSource {
        self.cda.candidate_source.unwrap_or(match self.encoder {
            EncoderKind::Precomputed => CandidateSource::FirstLayer,
            EncoderKind::Gru | EncoderKind::PrecomputedAvg => CandidateSource::PreContext,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("hidden", self.hidden),
            ("precomputed_dim", self.precomputed_dim),
            ("max_sentence_tokens", self.max_sentence_tokens),
            ("max_doc_sentences", self.max_doc_sentences),
            ("classifier_width", self.classifier_width()),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.encoder == EncoderKind::Gru && self.vocab_size < 3 {
            return Err(Error::invalid("vocab_size must exceed the two reserved rows"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid("threshold must lie in [0, 1]"));
        }
        if self.cda.variant == CdaVariant::Deep && self.encoder != EncoderKind::Gru {
            return Err(Error::invalid(
                "deep CDA needs word-level token vectors; use the gru encoder",
            ));
        }
        let source = self.candidate_source();
        if source == CandidateSource::FirstLayer && self.encoder != EncoderKind::Precomputed {
            return Err(Error::invalid(
                "first_layer candidates exist only with the precomputed encoder",
            ));
        }
        if self.cda.variant != CdaVariant::None && source == CandidateSource::PreContext {
            let pre = self.sentence_input_width();
            if pre != self.width() {
                return Err(Error::Width {
                    expected: self.width(),
                    actual: pre,
                });
            }
        }
        Ok(())
    }
}
