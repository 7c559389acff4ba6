//! Hierarchical attention document encoder.
//!
//! Tokens are looked up in the embedding table, contextualized by a word-level
//! bi-GRU and attention-pooled into sentence vectors. Sentence vectors are
//! contextualized by a sentence-level bi-GRU and attention-pooled again, with
//! separate parameters, into the document vector.
//!
//! Every stage accepts masks so that a padded document produces exactly the
//! same vectors as the unpadded one: padded GRU steps leave the hidden state
//! untouched and padded rows receive zero attention weight.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::params::ParamId;
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};
use crate::text::{tokenize, Vocab, PAD, UNK};

/// A document as token ids, one list per sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub id: String,
    pub sentences: Vec<Vec<usize>>,
    pub raw_sentences: Vec<String>,
}

impl Document {
    /// Tokenizes `raw_sentences` with `vocab`, truncating to the given limits.
    /// A sentence left without tokens becomes a single `<unk>` so indices stay aligned.
    pub fn from_text(
        id: impl Into<String>,
        raw_sentences: &[String],
        vocab: &Vocab,
        max_tokens: usize,
        max_sentences: usize,
    ) -> Self {
        let raw: Vec<String> = raw_sentences.iter().take(max_sentences).cloned().collect();
        let sentences = raw
            .iter()
            .map(|s| {
                let mut ids: Vec<usize> = tokenize(s).iter().take(max_tokens).map(|t| vocab.id(t)).collect();
                if ids.is_empty() {
                    ids.push(UNK);
                }
                ids
            })
            .collect();
        Document {
            id: id.into(),
            sentences,
            raw_sentences: raw,
        }
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.sentences.is_empty() {
            return Err(Error::invalid(format!("document {} has no sentences", self.id)));
        }
        for s in &self.sentences {
            if s.is_empty() {
                return Err(Error::invalid(format!("document {} has an empty sentence", self.id)));
            }
            if let Some(&id) = s.iter().find(|&&id| id >= vocab_size) {
                return Err(Error::TokenOutOfRange { id, vocab: vocab_size });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// A document padded to a fixed number of sentence slots and tokens per slot.
///
/// Padding always sits at the end of each axis.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedDoc {
    pub tokens: Vec<Vec<usize>>,
    pub token_mask: Vec<Vec<bool>>,
    pub sentence_mask: Vec<bool>,
}

impl PaddedDoc {
    pub fn new(doc: &Document, sentences: usize, tokens: usize) -> Result<Self> {
        let longest = doc.sentences.iter().map(Vec::len).max().unwrap_or(0);
        if doc.sentences.len() > sentences || longest > tokens {
            return Err(Error::invalid(format!(
                "cannot pad document {} ({}x{}) into {}x{}",
                doc.id,
                doc.sentences.len(),
                longest,
                sentences,
                tokens
            )));
        }
        let mut out = PaddedDoc {
            tokens: Vec::with_capacity(sentences),
            token_mask: Vec::with_capacity(sentences),
            sentence_mask: Vec::with_capacity(sentences),
        };
        for s in 0..sentences {
            let real = doc.sentences.get(s);
            let ids: Vec<usize> = (0..tokens)
                .map(|t| real.and_then(|r| r.get(t)).copied().unwrap_or(PAD))
                .collect();
            let mask = (0..tokens).map(|t| real.is_some_and(|r| t < r.len())).collect();
            out.tokens.push(ids);
            out.token_mask.push(mask);
            out.sentence_mask.push(real.is_some());
        }
        Ok(out)
    }

    /// The document padded to its own extent, i.e. with all masks true.
    pub fn unpadded(doc: &Document) -> Result<Self> {
        let longest = doc.sentences.iter().map(Vec::len).max().unwrap_or(0);
        Self::new(doc, doc.sentences.len(), longest)
    }

    pub fn slots(&self) -> usize {
        self.sentence_mask.len()
    }

    pub fn real_sentences(&self) -> usize {
        self.sentence_mask.iter().filter(|m| **m).count()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GruParams {
    pub wx: ParamId,
    pub bx: ParamId,
    pub wh: ParamId,
    pub bh: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct BiGruParams {
    pub fwd: GruParams,
    pub bwd: GruParams,
}

#[derive(Clone, Copy, Debug)]
pub struct AttnParams {
    pub w: ParamId,
    pub b: ParamId,
    pub u: ParamId,
}

/// Runs one GRU direction over the rows of `seq`. Returns the hidden state at
/// every real position; padded positions are `None` and leave the state as is.
///
/// Gates follow the reset-after formulation with columns ordered `[r | z | n]`:
/// `r, z = σ(x·Wx + bx + h·Wh + bh)`, `n = tanh(xn + r ⊙ hn)`, `h' = n + z ⊙ (h − n)`.
fn gru_direction<F: Real>(
    tape: &mut Tape<'_, F>,
    p: &GruParams,
    seq: Var,
    mask: &[bool],
    reverse: bool,
) -> Result<Vec<Option<Var>>> {
    let (wx, bx, wh, bh) = (tape.param(p.wx), tape.param(p.bx), tape.param(p.wh), tape.param(p.bh));
    let h = tape.shape(wh)[0];
    let proj = tape.affine(seq, wx, bx)?;
    let steps = tape.shape(proj)[0];
    if mask.len() != steps {
        return Err(Error::Shape {
            op: "gru mask",
            lhs: vec![steps],
            rhs: vec![mask.len()],
        });
    }
    let mut state = tape.input(Tensor::zeros(vec![h]));
    let mut out = vec![None; steps];
    let order: Vec<usize> = if reverse {
        (0..steps).rev().collect()
    } else {
        (0..steps).collect()
    };
    for t in order {
        if !mask[t] {
            continue;
        }
        let xt = tape.row(proj, t)?;
        let hp = tape.affine(state, wh, bh)?;
        let xrz = tape.slice(xt, 0, 2 * h)?;
        let hrz = tape.slice(hp, 0, 2 * h)?;
        let pre = tape.add(xrz, hrz)?;
        let rz = tape.sigmoid(pre)?;
        let r = tape.slice(rz, 0, h)?;
        let z = tape.slice(rz, h, 2 * h)?;
        let xn = tape.slice(xt, 2 * h, 3 * h)?;
        let hn = tape.slice(hp, 2 * h, 3 * h)?;
        let gated = tape.mul(r, hn)?;
        let npre = tape.add(xn, gated)?;
        let n = tape.tanh(npre)?;
        let diff = tape.sub(state, n)?;
        let keep = tape.mul(z, diff)?;
        state = tape.add(n, keep)?;
        out[t] = Some(state);
    }
    Ok(out)
}

/// Bidirectional GRU over the rows of `seq` (`[T, in]`), giving `[T, 2h]` rows
/// `[h_fwd; h_bwd]`. Padded rows are zero.
pub fn bigru<F: Real>(tape: &mut Tape<'_, F>, p: &BiGruParams, seq: Var, mask: &[bool]) -> Result<Var> {
    let fwd = gru_direction(tape, &p.fwd, seq, mask, false)?;
    let bwd = gru_direction(tape, &p.bwd, seq, mask, true)?;
    let wh = tape.param(p.fwd.wh);
    let h = tape.shape(wh)[0];
    let mut rows = Vec::with_capacity(fwd.len());
    let mut zero = None;
    for (f, b) in fwd.into_iter().zip(bwd) {
        rows.push(match (f, b) {
            (Some(f), Some(b)) => tape.concat(&[f, b])?,
            _ => *zero.get_or_insert_with(|| tape.input(Tensor::zeros(vec![2 * h]))),
        });
    }
    tape.stack(&rows)
}

/// Attention pooling: `Σ_i α_i x_i` with `α = softmax_i(u · tanh(x_i W + b))`.
/// Returns the pooled vector and the weights.
pub fn attention_pool<F: Real>(
    tape: &mut Tape<'_, F>,
    p: &AttnParams,
    rows: Var,
    mask: Option<&[bool]>,
) -> Result<(Var, Var)> {
    if tape.value(rows).rank() != 2 {
        return Err(Error::invalid("attention pooling needs a matrix of rows"));
    }
    let (w, b, u) = (tape.param(p.w), tape.param(p.b), tape.param(p.u));
    let keys = tape.affine(rows, w, b)?;
    let keys = tape.tanh(keys)?;
    let scores = tape.matvec(keys, u)?;
    let alpha = tape.softmax(scores, mask)?;
    let pooled = tape.matmul(alpha, rows)?;
    Ok((pooled, alpha))
}

/// All intermediate representations of one document on a tape.
#[derive(Clone, Debug)]
pub struct EncodedDocument {
    /// Contextualized token rows `[T, 2h]` per sentence slot; absent for precomputed input.
    pub token_vectors: Option<Vec<Option<Var>>>,
    pub token_masks: Option<Vec<Vec<bool>>>,
    /// `[S, w]` sentence vectors before sentence-level contextualization.
    pub sent_pre: Var,
    /// Output of the first sentence-level GRU layer when two layers are used.
    pub sent_mid: Option<Var>,
    /// `[S, w]` sentence vectors after sentence-level contextualization.
    pub sent_ctx: Var,
    pub doc: Var,
    /// Sentence vectors updated by sentence-level cross-document attention.
    pub sent_tilde: Option<Var>,
    /// Document vector updated by document-level cross-document attention.
    pub doc_tilde: Option<Var>,
    pub sentence_mask: Vec<bool>,
    pub word_attention: Vec<Option<Var>>,
    pub sentence_attention: Option<Var>,
}

impl EncodedDocument {
    /// The document representation handed to the classifier.
    pub fn final_doc(&self) -> Var {
        self.doc_tilde.unwrap_or(self.doc)
    }
}

/// Parameters of the word level of the hierarchy.
#[derive(Clone, Copy, Debug)]
pub struct WordLevel {
    pub embedding: ParamId,
    pub gru: BiGruParams,
    pub attn: AttnParams,
}

/// Parameters of the sentence level: one or two bi-GRU layers and the pooling.
#[derive(Clone, Debug)]
pub struct SentenceLevel {
    pub grus: Vec<BiGruParams>,
    pub attn: AttnParams,
}

/// Word stage: returns the sentence-vector matrix `[S, 2h]` plus per-slot token rows and weights.
pub fn encode_words<F: Real>(
    tape: &mut Tape<'_, F>,
    words: &WordLevel,
    doc: &PaddedDoc,
) -> Result<(Var, Vec<Option<Var>>, Vec<Option<Var>>)> {
    let table = tape.param(words.embedding);
    let wh = tape.param(words.gru.fwd.wh);
    let width = 2 * tape.shape(wh)[0];
    let mut sentence_rows = Vec::with_capacity(doc.slots());
    let mut token_rows = Vec::with_capacity(doc.slots());
    let mut weights = Vec::with_capacity(doc.slots());
    let mut zero = None;
    for s in 0..doc.slots() {
        if !doc.sentence_mask[s] {
            sentence_rows.push(*zero.get_or_insert_with(|| tape.input(Tensor::zeros(vec![width]))));
            token_rows.push(None);
            weights.push(None);
            continue;
        }
        let mask = &doc.token_mask[s];
        let emb = tape.gather(table, &doc.tokens[s])?;
        let ctx = bigru(tape, &words.gru, emb, mask)?;
        let (pooled, alpha) = attention_pool(tape, &words.attn, ctx, Some(mask))?;
        sentence_rows.push(pooled);
        token_rows.push(Some(ctx));
        weights.push(Some(alpha));
    }
    let sent = tape.stack(&sentence_rows)?;
    Ok((sent, token_rows, weights))
}

/// Sentence stage: contextualizes `sent_pre` and pools it into the document vector.
/// Returns `(sent_mid, sent_ctx, doc, sentence attention)`.
pub fn encode_sentences<F: Real>(
    tape: &mut Tape<'_, F>,
    level: &SentenceLevel,
    sent_pre: Var,
    mask: &[bool],
) -> Result<(Option<Var>, Var, Var, Var)> {
    let mut x = sent_pre;
    let mut mid = None;
    for (i, layer) in level.grus.iter().enumerate() {
        x = bigru(tape, layer, x, mask)?;
        if i + 1 < level.grus.len() {
            mid = Some(x);
        }
    }
    let (doc, alpha) = attention_pool(tape, &level.attn, x, Some(mask))?;
    Ok((mid, x, doc, alpha))
}

/// One record of a precomputed sentence-vector file.
#[derive(Debug, Deserialize)]
struct VectorRecord {
    doc_id: String,
    vectors: Vec<Vec<f64>>,
}

/// Sentence vectors keyed by document id, read from a JSON-lines file.
#[derive(Clone, Debug, Default)]
pub struct SentenceVectors {
    width: Option<usize>,
    docs: HashMap<String, Vec<Vec<f64>>>,
}

impl SentenceVectors {
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut out = SentenceVectors::default();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record_err = |msg: String| Error::Record {
                path: path.to_path_buf(),
                line: n + 1,
                msg,
            };
            let rec: VectorRecord = serde_json::from_str(&line).map_err(|e| record_err(e.to_string()))?;
            out.insert(rec.doc_id, rec.vectors).map_err(|e| record_err(e.to_string()))?;
        }
        Ok(out)
    }

    pub fn insert(&mut self, doc_id: String, vectors: Vec<Vec<f64>>) -> Result<()> {
        let w = vectors.first().map(Vec::len).unwrap_or(0);
        if w == 0 {
            return Err(Error::invalid(format!("no vectors for document {doc_id}")));
        }
        if let Some(v) = vectors.iter().find(|v| v.len() != w) {
            return Err(Error::Width {
                expected: w,
                actual: v.len(),
            });
        }
        if let Some(expected) = self.width {
            if expected != w {
                return Err(Error::Width { expected, actual: w });
            }
        }
        self.width = Some(w);
        self.docs.insert(doc_id, vectors);
        Ok(())
    }

    pub fn width(&self) -> Option<usize> {
        self.width
    }

    /// The `[sentences, width]` matrix for `doc_id`, checked against the expected shape.
    pub fn matrix<F: Real>(&self, doc_id: &str, sentences: usize, width: usize) -> Result<Tensor<F>> {
        let v = self
            .docs
            .get(doc_id)
            .ok_or_else(|| Error::invalid(format!("no precomputed vectors for document {doc_id}")))?;
        if v.len() != sentences {
            return Err(Error::invalid(format!(
                "document {doc_id} has {sentences} sentences but {} precomputed vectors",
                v.len()
            )));
        }
        if v[0].len() != width {
            return Err(Error::Width {
                expected: width,
                actual: v[0].len(),
            });
        }
        let rows: Vec<Vec<F>> = v.iter().map(|r| r.iter().map(|x| F::of(*x)).collect()).collect();
        Tensor::from_rows(&rows)
    }
}

/// Reads a whitespace-separated embedding text file (`token f1 ... fd` per line)
/// and returns the table for `vocab`. Tokens missing from the file keep `fallback`'s rows.
pub fn load_pretrained_embeddings<F: Real>(
    path: &Path,
    vocab: &Vocab,
    dim: usize,
    fallback: &Tensor<F>,
) -> Result<(Tensor<F>, usize)> {
    if fallback.shape() != [vocab.len(), dim] {
        return Err(Error::Shape {
            op: "pretrained embeddings",
            lhs: vec![vocab.len(), dim],
            rhs: fallback.shape().to_vec(),
        });
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table = fallback.clone();
    let mut found = 0;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values: Vec<f64> = parts
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Record {
                path: path.to_path_buf(),
                line: n + 1,
                msg: format!("bad float: {e}"),
            })?;
        if values.len() != dim {
            return Err(Error::Record {
                path: path.to_path_buf(),
                line: n + 1,
                msg: format!("expected {dim} values, found {}", values.len()),
            });
        }
        let id = vocab.id(token);
        if id == UNK && token != "<unk>" {
            continue;
        }
        let row = &mut table.data_mut()[id * dim..(id + 1) * dim];
        for (r, v) in row.iter_mut().zip(&values) {
            *r = F::of(*v);
        }
        found += 1;
    }
    Ok((table, found))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use crate::tensor::sigmoid;

    fn doc(sentences: Vec<Vec<usize>>) -> Document {
        Document {
            id: "d".into(),
            raw_sentences: sentences.iter().map(|_| String::new()).collect(),
            sentences,
        }
    }

    fn gru_store(input: usize, h: usize, fill: impl Fn(&str, usize) -> f64) -> (ParamStore<f64>, GruParams) {
        let mut s = ParamStore::new();
        let mut mk = |name: &str, shape: Vec<usize>| {
            let n: usize = shape.iter().product();
            s.add(name, Tensor::new(shape, (0..n).map(|i| fill(name, i)).collect()).unwrap())
        };
        let p = GruParams {
            wx: mk("wx", vec![input, 3 * h]),
            bx: mk("bx", vec![3 * h]),
            wh: mk("wh", vec![h, 3 * h]),
            bh: mk("bh", vec![3 * h]),
        };
        (s, p)
    }

    #[test]
    fn gru_step_from_biases() {
        // zero input and zero weights: the single step depends only on the biases.
        let bias = |name: &str, i: usize| match name {
            "bx" => [0.2, -0.4, 0.3][i],
            "bh" => [0.1, 0.5, -0.6][i],
            _ => 0.0,
        };
        let (store, p) = gru_store(2, 1, bias);
        let mut tape = Tape::with_params(&store);
        let x = tape.input(Tensor::zeros(vec![1, 2]));
        let out = gru_direction(&mut tape, &p, x, &[true], false).unwrap();
        let got = tape.value(out[0].unwrap()).data()[0];
        let r = sigmoid(0.2 + 0.1);
        let z = sigmoid(-0.4 + 0.5);
        let n = (0.3f64 + r * -0.6).tanh();
        let expected = (1.0 - z) * n;
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
    }

    #[test]
    fn bigru_length_one_shape() {
        let (store, p) = gru_store(3, 4, |_, i| (i as f64 * 0.37).sin() * 0.3);
        let bi = BiGruParams { fwd: p, bwd: p };
        let mut tape = Tape::with_params(&store);
        let x = tape.input(Tensor::new(vec![1, 3], vec![0.1, -0.2, 0.3]).unwrap());
        let y = bigru(&mut tape, &bi, x, &[true]).unwrap();
        assert_eq!(tape.shape(y), &[1, 8]);
        // with shared parameters both directions see the same single step
        let v = tape.value(y).data();
        assert_eq!(&v[..4], &v[4..]);
    }

    #[test]
    fn reversal_swaps_directions() {
        let (store, p) = gru_store(2, 3, |name, i| ((i + name.len()) as f64 * 0.61).cos() * 0.4);
        let bi = BiGruParams { fwd: p, bwd: p };
        let rows = vec![vec![0.5, -0.1], vec![0.2, 0.9], vec![-0.7, 0.3], vec![0.0, 0.4]];
        let rev: Vec<Vec<f64>> = rows.iter().rev().cloned().collect();
        let mut tape = Tape::with_params(&store);
        let a = tape.input(Tensor::from_rows(&rows).unwrap());
        let b = tape.input(Tensor::from_rows(&rev).unwrap());
        let ya = bigru(&mut tape, &bi, a, &[true; 4]).unwrap();
        let yb = bigru(&mut tape, &bi, b, &[true; 4]).unwrap();
        let (ta, tb) = (tape.value(ya).clone(), tape.value(yb).clone());
        for t in 0..4 {
            let ra = ta.row(t);
            let rb = tb.row(3 - t);
            assert_eq!(&ra[..3], &rb[3..]);
            assert_eq!(&ra[3..], &rb[..3]);
        }
    }

    fn attn_store(d: usize, u: f64) -> (ParamStore<f64>, AttnParams) {
        let mut s = ParamStore::new();
        let w = s.add("w", Tensor::new(vec![d, d], (0..d * d).map(|i| (i as f64).sin()).collect()).unwrap());
        let b = s.add("b", Tensor::vector(vec![0.1; d]));
        let uu = s.add("u", Tensor::vector((0..d).map(|i| u * (i as f64 + 1.0)).collect()));
        (s, AttnParams { w, b, u: uu })
    }

    #[test]
    fn pooling_singleton_and_identical_rows() {
        let (store, p) = attn_store(3, 0.7);
        let mut tape = Tape::with_params(&store);
        let r = vec![0.3, -1.2, 2.0];
        let one = tape.input(Tensor::from_rows(std::slice::from_ref(&r)).unwrap());
        let (out, alpha) = attention_pool(&mut tape, &p, one, None).unwrap();
        assert_eq!(tape.value(out).data(), r.as_slice());
        assert_eq!(tape.value(alpha).data(), &[1.0]);
        let two = tape.input(Tensor::from_rows(&[r.clone(), r.clone()]).unwrap());
        let (out, alpha) = attention_pool(&mut tape, &p, two, None).unwrap();
        assert_eq!(tape.value(alpha).data(), &[0.5, 0.5]);
        for (o, x) in tape.value(out).data().iter().zip(&r) {
            assert!((o - x).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_context_vector_gives_mean() {
        let (store, p) = attn_store(2, 0.0);
        let mut tape = Tape::with_params(&store);
        let m = tape.input(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, -2.0], vec![2.0, 3.0]]).unwrap());
        let (out, _) = attention_pool(&mut tape, &p, m, None).unwrap();
        let v = tape.value(out).data();
        assert!((v[0] - 2.0).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);
        let empty = tape.input(Tensor::vector(vec![1.0]));
        assert!(attention_pool(&mut tape, &p, empty, None).is_err());
    }

    #[test]
    fn padding_layout() {
        let d = doc(vec![vec![5, 6, 7], vec![8]]);
        let p = PaddedDoc::new(&d, 3, 4).unwrap();
        assert_eq!(p.tokens[1], vec![8, PAD, PAD, PAD]);
        assert_eq!(p.token_mask[0], vec![true, true, true, false]);
        assert_eq!(p.sentence_mask, vec![true, true, false]);
        let u = PaddedDoc::unpadded(&d).unwrap();
        assert!(u.sentence_mask.iter().all(|m| *m));
        assert_eq!(u.tokens[0].len(), 3);
        assert!(PaddedDoc::new(&d, 1, 4).is_err());
    }

    #[test]
    fn unknown_tokens_map_to_unk() {
        let vocab = Vocab::from_tokens(["alpha".to_string()]);
        let d = Document::from_text("x", &["alpha beta".to_string(), "🎉".to_string()], &vocab, 64, 64);
        assert_eq!(d.sentences, vec![vec![2, UNK], vec![UNK]]);
        assert!(d.validate(vocab.len()).is_ok());
        assert!(matches!(doc(vec![vec![9]]).validate(3), Err(Error::TokenOutOfRange { id: 9, .. })));
    }

    #[test]
    fn precomputed_vector_checks() {
        let mut sv = SentenceVectors::default();
        sv.insert("a".into(), vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let m: Tensor<f64> = sv.matrix("a", 2, 2).unwrap();
        assert_eq!(m.shape(), &[2, 2]);
        assert!(sv.matrix::<f64>("missing", 2, 2).is_err());
        assert!(sv.matrix::<f64>("a", 3, 2).is_err());
        let err = sv.matrix::<f64>("a", 2, 5).unwrap_err().to_string();
        assert!(err.contains('5') && err.contains('2'), "{err}");
        assert!(sv.insert("b".into(), vec![vec![1.0, 2.0, 3.0]]).is_err());
    }
}
