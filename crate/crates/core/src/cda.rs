//! Cross-document attention.
//!
//! A vector `q` of one document attends over a candidate set `C` taken from
//! the other document, `att = Σ_{v∈C} softmax_v(vᵀq) · v`, and is then
//! integrated with the attended vector either through an affine projection of
//! `[q; att]` back to the original width or by plain addition.
//!
//! Both directions share parameters. Keys and values always come from the
//! other document's representation before this CDA level is applied, so one
//! pass suffices and the result does not depend on evaluation order.

use crate::config::{CandidateSource, Integration};
use crate::encoder::{encode_sentences, EncodedDocument, SentenceLevel};
use crate::error::{Error, Result};
use crate::params::ParamId;
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct AffineParams {
    pub w: ParamId,
    pub b: ParamId,
}

/// Per-level projection parameters; `None` with additive integration.
#[derive(Clone, Copy, Debug, Default)]
pub struct CdaParams {
    pub sentence: Option<AffineParams>,
    pub document: Option<AffineParams>,
}

#[derive(Clone, Copy, Debug)]
pub struct CdaSettings {
    pub integration: Integration,
    pub source: CandidateSource,
}

/// Attends from `query` (`[w]`) over the rows of `candidates` (`[n, w]`).
/// Returns the attended vector and the attention weights.
pub fn cross_attend<F: Real>(
    tape: &mut Tape<'_, F>,
    query: Var,
    candidates: Var,
    mask: Option<&[bool]>,
) -> Result<(Var, Var)> {
    let (qw, cw) = (tape.value(query).len(), tape.value(candidates).cols());
    if tape.value(query).rank() != 1 || qw != cw {
        return Err(Error::Width {
            expected: qw,
            actual: cw,
        });
    }
    let scores = tape.matvec(candidates, query)?;
    let weights = tape.softmax(scores, mask)?;
    let attended = tape.matmul(weights, candidates)?;
    Ok((attended, weights))
}

fn integrate<F: Real>(
    tape: &mut Tape<'_, F>,
    integration: Integration,
    affine: Option<&AffineParams>,
    base: Var,
    attended: Var,
) -> Result<Var> {
    match integration {
        Integration::Add => tape.add(base, attended),
        Integration::Concat => {
            let p = affine.ok_or_else(|| Error::invalid("concat integration without projection parameters"))?;
            let joined = tape.concat(&[base, attended])?;
            let (w, b) = (tape.param(p.w), tape.param(p.b));
            tape.affine(joined, w, b)
        }
    }
}

/// The sentence matrix of `enc` that serves as attention candidates.
pub fn sentence_candidates(enc: &EncodedDocument, source: CandidateSource) -> Result<Var> {
    match source {
        CandidateSource::PreContext => Ok(enc.sent_tilde.unwrap_or(enc.sent_pre)),
        CandidateSource::PostContext => Ok(enc.sent_ctx),
        CandidateSource::FirstLayer => enc
            .sent_mid
            .ok_or_else(|| Error::invalid("first_layer candidates need a two-layer sentence encoder")),
    }
}

fn doc_level_candidates<F: Real>(
    tape: &mut Tape<'_, F>,
    other: &EncodedDocument,
    source: CandidateSource,
) -> Result<(Var, Vec<bool>)> {
    let sents = sentence_candidates(other, source)?;
    let cands = tape.stack(&[sents, other.doc])?;
    let mut mask = other.sentence_mask.clone();
    mask.push(true);
    Ok((cands, mask))
}

/// Document-level CDA in both directions. Returns `(d̃_A, d̃_B)`.
pub fn shallow_cda<F: Real>(
    tape: &mut Tape<'_, F>,
    a: &EncodedDocument,
    b: &EncodedDocument,
    params: &CdaParams,
    cfg: &CdaSettings,
) -> Result<(Var, Var)> {
    let (cands_b, mask_b) = doc_level_candidates(tape, b, cfg.source)?;
    let (cands_a, mask_a) = doc_level_candidates(tape, a, cfg.source)?;
    let (att_a, _) = cross_attend(tape, a.doc, cands_b, Some(&mask_b))?;
    let (att_b, _) = cross_attend(tape, b.doc, cands_a, Some(&mask_a))?;
    let da = integrate(tape, cfg.integration, params.document.as_ref(), a.doc, att_a)?;
    let db = integrate(tape, cfg.integration, params.document.as_ref(), b.doc, att_b)?;
    Ok((da, db))
}

/// Sentence-level candidates of `other`: every real contextualized token row
/// followed by its sentence vectors.
fn sentence_level_candidates<F: Real>(
    tape: &mut Tape<'_, F>,
    other: &EncodedDocument,
    source: CandidateSource,
) -> Result<(Var, Vec<bool>)> {
    let (Some(tokens), Some(masks)) = (&other.token_vectors, &other.token_masks) else {
        return Err(Error::invalid(
            "deep CDA needs token vectors; encode with the gru encoder",
        ));
    };
    let mut parts = Vec::new();
    let mut mask = Vec::new();
    for (rows, m) in tokens.iter().zip(masks) {
        if let Some(rows) = rows {
            parts.push(*rows);
            mask.extend_from_slice(m);
        }
    }
    parts.push(sentence_candidates(other, source)?);
    mask.extend_from_slice(&other.sentence_mask);
    Ok((tape.stack(&parts)?, mask))
}

fn update_sentences<F: Real>(
    tape: &mut Tape<'_, F>,
    enc: &EncodedDocument,
    cands: Var,
    mask: &[bool],
    params: &CdaParams,
    cfg: &CdaSettings,
) -> Result<Var> {
    let width = tape.value(enc.sent_pre).cols();
    let mut rows = Vec::with_capacity(enc.sentence_mask.len());
    let mut zero = None;
    for (i, real) in enc.sentence_mask.iter().enumerate() {
        if !real {
            rows.push(*zero.get_or_insert_with(|| tape.input(Tensor::zeros(vec![width]))));
            continue;
        }
        let s = tape.row(enc.sent_pre, i)?;
        let (att, _) = cross_attend(tape, s, cands, Some(mask))?;
        rows.push(integrate(tape, cfg.integration, params.sentence.as_ref(), s, att)?);
    }
    tape.stack(&rows)
}

/// Sentence-level CDA followed by re-contextualization and document-level CDA.
///
/// Each sentence vector of `a` attends over all token vectors and sentence
/// vectors of `b` (and vice versa). The updated sentences run through the
/// sentence level again to give new document vectors, and [`shallow_cda`] is
/// applied to the updated encodings.
pub fn deep_cda<F: Real>(
    tape: &mut Tape<'_, F>,
    a: &EncodedDocument,
    b: &EncodedDocument,
    params: &CdaParams,
    sentence_level: &SentenceLevel,
    cfg: &CdaSettings,
) -> Result<(EncodedDocument, EncodedDocument)> {
    let (cands_b, mask_b) = sentence_level_candidates(tape, b, cfg.source)?;
    let (cands_a, mask_a) = sentence_level_candidates(tape, a, cfg.source)?;
    let tilde_a = update_sentences(tape, a, cands_b, &mask_b, params, cfg)?;
    let tilde_b = update_sentences(tape, b, cands_a, &mask_a, params, cfg)?;

    let mut out = Vec::with_capacity(2);
    for (enc, tilde) in [(a, tilde_a), (b, tilde_b)] {
        let (mid, ctx, doc, alpha) = encode_sentences(tape, sentence_level, tilde, &enc.sentence_mask)?;
        out.push(EncodedDocument {
            sent_tilde: Some(tilde),
            sent_mid: mid,
            sent_ctx: ctx,
            doc,
            sentence_attention: Some(alpha),
            doc_tilde: None,
            ..enc.clone()
        });
    }
    let mut ub = out.pop().expect("two encodings");
    let mut ua = out.pop().expect("two encodings");
    let (da, db) = shallow_cda(tape, &ua, &ub, params, cfg)?;
    ua.doc_tilde = Some(da);
    ub.doc_tilde = Some(db);
    Ok((ua, ub))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attended_vector_with_degenerate_candidates() {
        let mut tape = Tape::<f64>::new();
        let s = vec![0.3, -0.4, 1.1];
        let q = tape.input(Tensor::vector(vec![2.0, 0.5, -1.0]));
        let c = tape.input(Tensor::from_rows(&[s.clone(), s.clone()]).unwrap());
        let (att, w) = cross_attend(&mut tape, q, c, None).unwrap();
        assert_eq!(tape.value(w).data(), &[0.5, 0.5]);
        for (x, y) in tape.value(att).data().iter().zip(&s) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let q = tape.input(Tensor::vector(vec![1.0, 2.0]));
        let c = tape.input(Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap());
        assert!(matches!(
            cross_attend(&mut tape, q, c, None),
            Err(Error::Width { expected: 2, actual: 3 })
        ));
    }

    #[test]
    fn additive_integration_is_a_sum() {
        let mut tape = Tape::<f64>::new();
        let a = tape.input(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.input(Tensor::vector(vec![0.5, -3.0]));
        let y = integrate(&mut tape, Integration::Add, None, a, b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.5, -1.0]);
        assert!(integrate(&mut tape, Integration::Concat, None, a, b).is_err());
    }
}
