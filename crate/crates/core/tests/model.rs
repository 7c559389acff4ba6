mod common;

use crossdoc::align::{rank_sentences, AlignTarget};
use crossdoc::train::prepare_pair;
use crossdoc::{CdaVariant, Integration, Model, PairExample, Scorer, Side};
use rand::Rng;

use common::*;

fn jittered(variant: CdaVariant, integration: Integration, seed: u64) -> Model<f64> {
    let mut cfg = tiny_config(variant, integration);
    cfg.embed_dim = 4;
    cfg.hidden = 3;
    let mut m = Model::<f64>::new(cfg, vocab(8), seed).unwrap();
    jitter(&mut m, &mut rng(seed + 100), 0.2);
    m
}

#[test]
fn swapping_documents_swaps_cda_outputs() {
    for variant in [CdaVariant::Shallow, CdaVariant::Deep] {
        for integration in [Integration::Concat, Integration::Add] {
            for seed in 0..10 {
                let m = jittered(variant, integration, seed);
                let mut r = rng(seed);
                let a = unpadded(random_sentences(&mut r, 10, 4, 5));
                let b = unpadded(random_sentences(&mut r, 10, 4, 5));
                let ab = m.score_pair(&a, &b).unwrap();
                let ba = m.score_pair(&b, &a).unwrap();
                assert_eq!(ab.doc_tilde_a, ba.doc_tilde_b);
                assert_eq!(ab.doc_tilde_b, ba.doc_tilde_a);
                assert_eq!(ab.sentences_a, ba.sentences_b);
            }
        }
    }
}

#[test]
fn deep_with_identity_sentence_projection_equals_shallow() {
    for seed in 0..10 {
        let mut deep = jittered(CdaVariant::Deep, Integration::Concat, seed);
        let w = deep.config.width();
        let mut eye = vec![0.0; 2 * w * w];
        for i in 0..w {
            eye[i * w + i] = 1.0;
        }
        deep.params.set("cda_sent.w", eye).unwrap();
        deep.params.set("cda_sent.b", vec![0.0; w]).unwrap();
        let shallow = deep.with_variant(CdaVariant::Shallow).unwrap();
        let mut r = rng(seed);
        let a = unpadded(random_sentences(&mut r, 10, 4, 5));
        let b = unpadded(random_sentences(&mut r, 10, 4, 5));
        assert_eq!(deep.score_pair(&a, &b).unwrap(), shallow.score_pair(&a, &b).unwrap());
    }
}

#[test]
fn none_variant_bypasses_cda() {
    for seed in 0..10 {
        let shallow = jittered(CdaVariant::Shallow, Integration::Concat, seed);
        let none = shallow.with_variant(CdaVariant::None).unwrap();
        let mut r = rng(seed);
        let a = unpadded(random_sentences(&mut r, 10, 4, 5));
        let b = unpadded(random_sentences(&mut r, 10, 4, 5));
        let s = shallow.score_pair(&a, &b).unwrap();
        let n = none.score_pair(&a, &b).unwrap();
        assert_eq!(n.doc_tilde_a, n.doc_a);
        assert_eq!(s.doc_a, n.doc_a);
        assert_eq!(s.doc_b, n.doc_b);
        assert_ne!(s.doc_tilde_a, s.doc_a);
    }
    let none = jittered(CdaVariant::None, Integration::Concat, 0);
    assert!(none.with_variant(CdaVariant::Shallow).is_err());
}

#[test]
fn single_sentence_side_ranks_first() {
    let m = jittered(CdaVariant::Shallow, Integration::Concat, 3);
    let pair = PairExample {
        id: "one".into(),
        label: 1,
        doc_a: vec!["t1 t2".into()],
        doc_b: vec!["t3".into(), "t4 t5".into()],
        gold_side: Some(Side::A),
        gold_sentences: Some(vec![0]),
    };
    let prepared = prepare_pair(&m.config, &m.vocab, &pair, None).unwrap();
    for scorer in [Scorer::Attention, Scorer::Cosine, Scorer::Random] {
        let r = rank_sentences(&prepared, &m, scorer, AlignTarget::Document, 1).unwrap();
        assert_eq!(r.ranking, vec![0]);
        assert_eq!(r.first_gold_rank(), Some(1));
    }
}

#[test]
fn attention_scores_form_a_distribution_over_the_localization_side() {
    let m = jittered(CdaVariant::Deep, Integration::Concat, 4);
    let mut r = rng(4);
    let words = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<String> {
        (0..r.gen_range(2..6))
            .map(|_| (0..r.gen_range(1..4)).map(|_| format!("t{}", r.gen_range(0..8))).collect::<Vec<_>>().join(" "))
            .collect()
    };
    for side in [Side::A, Side::B] {
        let pair = PairExample {
            id: "d".into(),
            label: 1,
            doc_a: words(&mut r),
            doc_b: words(&mut r),
            gold_side: Some(side),
            gold_sentences: Some(vec![1]),
        };
        let prepared = prepare_pair(&m.config, &m.vocab, &pair, None).unwrap();
        for target in [AlignTarget::Document, AlignTarget::Final] {
            let res = rank_sentences(&prepared, &m, Scorer::Attention, target, 0).unwrap();
            assert_eq!(res.sentence_scores.len(), pair.doc(side).len());
            assert!((res.sentence_scores.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
