//! Model checkpoints as a single JSON document.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::text::Vocab;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub seed: u64,
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: Vec<StoredParam>,
}

impl Checkpoint {
    pub fn from_model(model: &Model<f32>, seed: u64) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            seed,
            config: model.config.clone(),
            vocab: model.vocab.clone(),
            params: model
                .params
                .iter()
                .map(|p| StoredParam {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    data: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Rebuilds the model; parameter names and shapes must match the configuration.
    pub fn into_model(self) -> Result<Model<f32>> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint format {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let mut store = ParamStore::new();
        for p in self.params {
            store.add(p.name, Tensor::new(p.shape, p.data)?);
        }
        Model::from_params(self.config, self.vocab, store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::CdaVariant;

    #[test]
    fn round_trip_is_exact() {
        let mut cfg = ModelConfig {
            embed_dim: 3,
            hidden: 2,
            ..ModelConfig::default()
        };
        cfg.cda.variant = CdaVariant::Deep;
        let vocab = Vocab::from_tokens(["x", "y"].map(String::from));
        let model = Model::<f32>::new(cfg, vocab, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        Checkpoint::from_model(&model, 5).save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap().into_model().unwrap();
        assert_eq!(back.config, model.config);
        assert_eq!(back.vocab.tokens(), model.vocab.tokens());
        for (a, b) in back.params.iter().zip(model.params.iter()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn wrong_version_is_rejected() {
        let vocab = Vocab::from_tokens(["x"].map(String::from));
        let model = Model::<f32>::new(ModelConfig::default(), vocab, 1).unwrap();
        let mut c = Checkpoint::from_model(&model, 1);
        c.format_version = 99;
        assert!(c.into_model().is_err());
    }
}
