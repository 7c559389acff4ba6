//! Oracles shared by the integration tests: central finite differences,
//! random documents and an independent loop-based plain HAN.

#![allow(dead_code)]

use crossdoc::encoder::{Document, PaddedDoc};
use crossdoc::text::Vocab;
use crossdoc::{CdaVariant, DocInput, Integration, Model, ModelConfig, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-3;
pub const FD_TOLERANCE: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, zero when both vanish.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + STEP;
            let up = f(&probe);
            probe[i] = x[i] - STEP;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

pub fn vocab(n: usize) -> Vocab {
    Vocab::from_tokens((0..n).map(|i| format!("t{i}")))
}

pub fn tiny_config(variant: CdaVariant, integration: Integration) -> ModelConfig {
    let mut c = ModelConfig {
        embed_dim: 3,
        hidden: 2,
        ..ModelConfig::default()
    };
    c.cda.variant = variant;
    c.cda.integration = integration;
    c
}

/// Token ids per sentence, drawn from the non-reserved rows of a vocabulary of `vocab` rows.
pub fn random_sentences(rng: &mut impl Rng, vocab: usize, max_sentences: usize, max_tokens: usize) -> Vec<Vec<usize>> {
    let n = rng.gen_range(1..=max_sentences);
    (0..n)
        .map(|_| {
            let t = rng.gen_range(1..=max_tokens);
            (0..t).map(|_| rng.gen_range(2..vocab)).collect()
        })
        .collect()
}

pub fn document(sentences: Vec<Vec<usize>>) -> Document {
    Document {
        id: "doc".into(),
        raw_sentences: vec![String::new(); sentences.len()],
        sentences,
    }
}

pub fn unpadded(sentences: Vec<Vec<usize>>) -> DocInput {
    DocInput::Tokens(PaddedDoc::unpadded(&document(sentences)).unwrap())
}

/// Adds uniform noise to every parameter so that no bias sits at its zero initialization.
pub fn jitter<F: crossdoc::Real>(model: &mut Model<F>, rng: &mut impl Rng, amount: f64) {
    for p in model.params.iter_mut() {
        for x in p.value.data_mut() {
            *x = *x + F::of(rng.gen_range(-amount..amount));
        }
    }
}

/// Loss of a labelled pair with every parameter read from `flat`.
pub fn loss_at(model: &mut Model<f64>, flat: &[f64], a: &DocInput, b: &DocInput, label: u8) -> f64 {
    let mut off = 0;
    for p in model.params.iter_mut() {
        let n = p.value.len();
        p.value.data_mut().copy_from_slice(&flat[off..off + n]);
        off += n;
    }
    let mut tape = Tape::with_params(&model.params);
    let (loss, _) = model.pair_loss(&mut tape, a, b, label).unwrap();
    tape.value(loss).data()[0]
}

pub fn flat_params(model: &Model<f64>) -> Vec<f64> {
    model.params.iter().flat_map(|p| p.value.data().to_vec()).collect()
}

/// Analytic gradient of the pair loss with respect to every parameter, flattened
/// in store order, plus the smallest magnitude of a classifier relu input.
pub fn analytic_pair_grad(model: &Model<f64>, a: &DocInput, b: &DocInput, label: u8) -> (Vec<f64>, f64) {
    let mut tape = Tape::with_params(&model.params);
    let (loss, fwd) = model.pair_loss(&mut tape, a, b, label).unwrap();
    let joined: Vec<f64> = [fwd.enc_a.final_doc(), fwd.enc_b.final_doc()]
        .iter()
        .flat_map(|v| tape.value(*v).data().to_vec())
        .collect();
    let w1 = model.params.value(model.params.find("cls.w1").unwrap());
    let b1 = model.params.value(model.params.find("cls.b1").unwrap());
    let cols = w1.cols();
    let min_pre = (0..cols)
        .map(|j| {
            let z: f64 = joined.iter().enumerate().map(|(p, x)| x * w1.data()[p * cols + j]).sum::<f64>() + b1.data()[j];
            z.abs()
        })
        .fold(f64::INFINITY, f64::min);
    let grads = tape.backward(loss).unwrap();
    let flat = model
        .params
        .ids()
        .flat_map(|id| match grads.param(id) {
            Some(g) => g.to_vec(),
            None => vec![0.0; model.params.value(id).len()],
        })
        .collect();
    (flat, min_pre)
}

/// Relative error between backward and central differences for a whole pair graph.
pub fn pair_graph_error(model: &mut Model<f64>, a: &DocInput, b: &DocInput, label: u8) -> f64 {
    let (analytic, _) = analytic_pair_grad(model, a, b, label);
    let x = flat_params(model);
    let numeric = numeric_grad(&x, |p| loss_at(model, p, a, b, label));
    loss_at(model, &x, a, b, label);
    rel_error(&analytic, &numeric)
}

/// A plain hierarchical attention network written with nested loops over
/// `Vec<f32>`, reading the weights of a `variant = none` GRU model by name.
pub struct PlainHan<'m> {
    model: &'m Model<f32>,
}

pub struct PlainOutput {
    pub probability: f32,
    pub doc_a: Vec<f32>,
    pub doc_b: Vec<f32>,
    pub sentences_a: Vec<Vec<f32>>,
    pub sentences_b: Vec<Vec<f32>>,
}

impl<'m> PlainHan<'m> {
    pub fn new(model: &'m Model<f32>) -> Self {
        assert_eq!(model.config.cda.variant, CdaVariant::None);
        PlainHan { model }
    }

    fn w(&self, name: &str) -> (&[f32], usize) {
        let t = self.model.params.value(self.model.params.find(name).unwrap());
        let cols = if t.rank() == 2 { t.cols() } else { t.len() };
        (t.data(), cols)
    }

    /// `x · W + b`, summing over the inner index before adding the bias.
    fn affine(x: &[f32], w: &[f32], cols: usize, b: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0f32; cols];
        for (p, xv) in x.iter().enumerate() {
            for j in 0..cols {
                out[j] += xv * w[p * cols + j];
            }
        }
        for j in 0..cols {
            out[j] += b[j];
        }
        out
    }

    fn sigmoid(x: f32) -> f32 {
        1.0 / (1.0 + (-x).exp())
    }

    fn gru(&self, prefix: &str, xs: &[Vec<f32>], reverse: bool) -> Vec<Vec<f32>> {
        let (wx, c3) = self.w(&format!("{prefix}.wx"));
        let (bx, _) = self.w(&format!("{prefix}.bx"));
        let (wh, _) = self.w(&format!("{prefix}.wh"));
        let (bh, _) = self.w(&format!("{prefix}.bh"));
        let h = c3 / 3;
        let mut state = vec![0.0f32; h];
        let mut out = vec![Vec::new(); xs.len()];
        let order: Vec<usize> = if reverse {
            (0..xs.len()).rev().collect()
        } else {
            (0..xs.len()).collect()
        };
        for t in order {
            let xp = Self::affine(&xs[t], wx, c3, bx);
            let hp = Self::affine(&state, wh, c3, bh);
            let mut next = vec![0.0f32; h];
            for k in 0..h {
                let r = Self::sigmoid(xp[k] + hp[k]);
                let z = Self::sigmoid(xp[h + k] + hp[h + k]);
                let n = (xp[2 * h + k] + r * hp[2 * h + k]).tanh();
                next[k] = n + z * (state[k] - n);
            }
            state = next;
            out[t] = state.clone();
        }
        out
    }

    fn bigru(&self, prefix: &str, xs: &[Vec<f32>]) -> Vec<Vec<f32>> {
        let f = self.gru(&format!("{prefix}.fwd"), xs, false);
        let b = self.gru(&format!("{prefix}.bwd"), xs, true);
        f.into_iter().zip(b).map(|(mut f, b)| {
            f.extend(b);
            f
        }).collect()
    }

    fn pool(&self, prefix: &str, rows: &[Vec<f32>]) -> Vec<f32> {
        let (w, cols) = self.w(&format!("{prefix}.w"));
        let (b, _) = self.w(&format!("{prefix}.b"));
        let (u, _) = self.w(&format!("{prefix}.u"));
        let scores: Vec<f32> = rows
            .iter()
            .map(|r| {
                let key: Vec<f32> = Self::affine(r, w, cols, b).iter().map(|x| x.tanh()).collect();
                let mut s = 0.0f32;
                for (k, uk) in key.iter().zip(u) {
                    s += k * uk;
                }
                s
            })
            .collect();
        let mut max = scores[0];
        for &s in &scores[1..] {
            if s > max {
                max = s;
            }
        }
        let exps: Vec<f32> = scores.iter().map(|s| (s - max).exp()).collect();
        let mut total = 0.0f32;
        for e in &exps {
            total += e;
        }
        let mut out = vec![0.0f32; cols];
        for (e, r) in exps.iter().zip(rows) {
            let alpha = e / total;
            for j in 0..cols {
                out[j] += alpha * r[j];
            }
        }
        out
    }

    fn encode(&self, doc: &[Vec<usize>]) -> (Vec<Vec<f32>>, Vec<f32>) {
        let (table, dim) = self.w("embedding");
        let sentences: Vec<Vec<f32>> = doc
            .iter()
            .map(|ids| {
                let emb: Vec<Vec<f32>> = ids.iter().map(|&i| table[i * dim..(i + 1) * dim].to_vec()).collect();
                let ctx = self.bigru("word_gru", &emb);
                self.pool("word_attn", &ctx)
            })
            .collect();
        let ctx = self.bigru("sent_gru", &sentences);
        let doc = self.pool("sent_attn", &ctx);
        (ctx, doc)
    }

    pub fn run(&self, a: &[Vec<usize>], b: &[Vec<usize>]) -> PlainOutput {
        let (sa, da) = self.encode(a);
        let (sb, db) = self.encode(b);
        let joined: Vec<f32> = da.iter().chain(&db).copied().collect();
        let (w1, c1) = self.w("cls.w1");
        let (b1, _) = self.w("cls.b1");
        let (w2, _) = self.w("cls.w2");
        let (b2, _) = self.w("cls.b2");
        let hidden: Vec<f32> = Self::affine(&joined, w1, c1, b1)
            .into_iter()
            .map(|x| if x > 0.0 { x } else { 0.0 })
            .collect();
        let logit = Self::affine(&hidden, w2, 1, b2)[0];
        PlainOutput {
            probability: Self::sigmoid(logit),
            doc_a: da,
            doc_b: db,
            sentences_a: sa,
            sentences_b: sb,
        }
    }
}
