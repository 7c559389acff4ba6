//! Multilevel document alignment with hierarchical attention encoders and
//! cross-document attention.
//!
//! The crate covers the whole workflow: a small reverse-mode autodiff engine
//! ([`tape`]), the hierarchical encoder ([`encoder`]), cross-document
//! attention ([`cda`]), the Siamese pair classifier ([`model`]), training
//! ([`train`]), sentence-to-document alignment and metrics ([`align`]), and
//! pair-dataset handling including a synthetic benchmark ([`data`]).

pub mod align;
pub mod cda;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod heatmap;
pub mod model;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod text;
pub mod train;

pub use align::{AlignmentResult, MetricReport, Scorer};
pub use checkpoint::Checkpoint;
pub use config::{CandidateSource, CdaConfig, CdaVariant, EncoderKind, Integration, ModelConfig};
pub use error::{Error, Result};
pub use model::{DocInput, Model, PairScore};
pub use tape::{Tape, Var};
pub use tensor::{Real, Tensor};
pub use train::{PreparedPair, TrainConfig};
pub use data::{PairExample, Side, SyntheticSpec};
