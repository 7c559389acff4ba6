//! Shared fixtures for the criterion benches.

use crossdoc::data::{gen_synthetic, SyntheticSpec};
use crossdoc::text::Vocab;
use crossdoc::train::prepare_all;
use crossdoc::{CdaVariant, Model, ModelConfig, PreparedPair};

/// A freshly initialized model and `n` prepared synthetic pairs.
pub fn fixture(variant: CdaVariant, n: usize) -> (Model<f32>, Vec<PreparedPair>) {
    let spec = SyntheticSpec {
        n_pairs: (2 * n).max(16),
        ..SyntheticSpec::default()
    };
    let data = gen_synthetic(&spec).expect("default spec is valid");
    let vocab = Vocab::build(
        data.train.iter().flat_map(|p| p.doc_a.iter().chain(&p.doc_b)).map(String::as_str),
        None,
    );
    let mut cfg = ModelConfig::default();
    cfg.cda.variant = variant;
    let model = Model::new(cfg, vocab, 0).expect("default config is valid");
    let mut pairs = prepare_all(&model.config, &model.vocab, &data.train, None).expect("pairs fit the vocabulary");
    pairs.truncate(n);
    (model, pairs)
}
