mod common;

use crossdoc::{CdaVariant, DocInput, EncoderKind, Integration, Model, ModelConfig, Tape, Tensor};
use rand::Rng;

use common::*;

fn vectors(r: &mut impl Rng, width: usize) -> DocInput {
    let n = r.gen_range(1..4);
    DocInput::Vectors {
        rows: (0..n).map(|_| (0..width).map(|_| r.gen_range(-1.0..1.0)).collect()).collect(),
        mask: vec![true; n],
    }
}

/// Draws until the classifier relu inputs clear the finite-difference step.
fn checked_error(cfg: &ModelConfig, seed: u64, input: impl Fn(&mut rand_chacha::ChaCha8Rng) -> DocInput) -> f64 {
    let mut r = rng(seed);
    loop {
        let mut model = Model::<f64>::new(cfg.clone(), vocab(5), seed).unwrap();
        jitter(&mut model, &mut r, 0.3);
        let (a, b) = (input(&mut r), input(&mut r));
        let label = r.gen_range(0u8..2);
        if analytic_pair_grad(&model, &a, &b, label).1 > 0.05 {
            return pair_graph_error(&mut model, &a, &b, label);
        }
    }
}

#[test]
fn every_gru_variant_matches_finite_differences() {
    for variant in [CdaVariant::None, CdaVariant::Shallow, CdaVariant::Deep] {
        for integration in [Integration::Concat, Integration::Add] {
            let cfg = tiny_config(variant, integration);
            for seed in 0..5 {
                let e = checked_error(&cfg, seed, |r| unpadded(random_sentences(r, 7, 3, 4)));
                assert!(e < FD_TOLERANCE, "{variant}/{integration} seed {seed}: {e:.3e}");
            }
        }
    }
}

#[test]
fn precomputed_encoders_match_finite_differences() {
    for encoder in [EncoderKind::Precomputed, EncoderKind::PrecomputedAvg] {
        for variant in [CdaVariant::None, CdaVariant::Shallow] {
            let mut cfg = tiny_config(variant, Integration::Concat);
            cfg.encoder = encoder;
            cfg.precomputed_dim = 4;
            for seed in 0..5 {
                let e = checked_error(&cfg, seed, |r| vectors(r, 4));
                assert!(e < FD_TOLERANCE, "{encoder}/{variant} seed {seed}: {e:.3e}");
            }
        }
    }
}

#[test]
fn logit_gradient_is_p_minus_y() {
    for (z, y) in [(0.3, 1.0), (-1.2, 0.0), (2.5, 0.0), (0.0, 1.0)] {
        let mut tape = Tape::<f64>::new();
        let logit = tape.input(Tensor::vector(vec![z]));
        let p = tape.sigmoid(logit).unwrap();
        let loss = tape.bce(p, y).unwrap();
        let g = tape.backward(loss).unwrap().wrt(logit).unwrap()[0];
        let p = tape.value(p).data()[0];
        let numeric = numeric_grad(&[z], |x| {
            let mut t = Tape::<f64>::new();
            let l = t.input(Tensor::vector(x.to_vec()));
            let p = t.sigmoid(l).unwrap();
            let loss = t.bce(p, y).unwrap();
            t.value(loss).data()[0]
        });
        assert!((g - (p - y)).abs() < 1e-12);
        assert!(rel_error(&[g], &numeric) < FD_TOLERANCE);
    }
}

#[test]
fn gradients_flow_to_looked_up_embedding_rows_only() {
    let model = Model::<f64>::new(tiny_config(CdaVariant::Shallow, Integration::Concat), vocab(6), 0).unwrap();
    let a = unpadded(vec![vec![2, 3]]);
    let b = unpadded(vec![vec![4]]);
    let mut tape = Tape::with_params(&model.params);
    let (loss, _) = model.pair_loss(&mut tape, &a, &b, 1).unwrap();
    let grads = tape.backward(loss).unwrap();
    let g = grads.param(model.embedding_param().unwrap()).unwrap();
    let dim = model.config.embed_dim;
    let row_norm = |r: usize| g[r * dim..(r + 1) * dim].iter().map(|x| x.abs()).sum::<f64>();
    for r in [2, 3, 4] {
        assert!(row_norm(r) > 0.0, "row {r}");
    }
    for r in [0, 1, 5, 6, 7] {
        assert_eq!(row_norm(r), 0.0, "row {r}");
    }
}
