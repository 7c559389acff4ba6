//! Sentence-to-document alignment, ranking, and evaluation metrics.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Side;
use crate::error::{Error, Result};
use crate::model::{Model, PairScore};
use crate::tape::softmax_values;
use crate::tensor::{dot, Real};
use crate::train::PreparedPair;

/// Cutoffs reported for precision-at-N.
pub const P_AT: [usize; 3] = [1, 5, 10];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    Attention,
    Cosine,
    Random,
}

impl FromStr for Scorer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(Scorer::Attention),
            "cosine" => Ok(Scorer::Cosine),
            "random" => Ok(Scorer::Random),
            _ => Err(Error::invalid(format!("unknown scorer {s:?}"))),
        }
    }
}

impl fmt::Display for Scorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scorer::Attention => "attention",
            Scorer::Cosine => "cosine",
            Scorer::Random => "random",
        })
    }
}

/// How precision-at-N is normalized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionNorm {
    /// `|gold ∩ top N| / min(N, |gold|)`; single-gold pairs reduce to hit@N.
    #[default]
    MinGold,
    /// `|gold ∩ top N| / N`.
    Cutoff,
}

impl FromStr for PrecisionNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min_gold" => Ok(PrecisionNorm::MinGold),
            "cutoff" => Ok(PrecisionNorm::Cutoff),
            _ => Err(Error::invalid(format!("unknown precision normalization {s:?}"))),
        }
    }
}

impl PrecisionNorm {
    fn describe(self) -> &'static str {
        match self {
            PrecisionNorm::MinGold => "|gold ∩ topN| / min(N, |gold|)",
            PrecisionNorm::Cutoff => "|gold ∩ topN| / N",
        }
    }
}

/// The document vector of the other side that sentences are scored against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignTarget {
    /// `d`, the vector cross-document attention queries with.
    #[default]
    Document,
    /// `d̃`, the classifier input.
    Final,
}

impl FromStr for AlignTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "document" => Ok(AlignTarget::Document),
            "final" => Ok(AlignTarget::Final),
            _ => Err(Error::invalid(format!("unknown alignment target {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub pair_id: String,
    /// Scores over the localization-side sentences, in document order.
    pub sentence_scores: Vec<f64>,
    /// Sentence indices by descending score.
    pub ranking: Vec<usize>,
    pub gold: Vec<usize>,
    pub d2d_correct: bool,
}

impl AlignmentResult {
    /// 1-based rank of the first gold sentence.
    pub fn first_gold_rank(&self) -> Option<usize> {
        self.ranking.iter().position(|i| self.gold.contains(i)).map(|p| p + 1)
    }
}

/// Softmax of `vᵀd` over every sentence vector; the AttScore of each sentence.
pub fn att_scores(sentences: &[Vec<f64>], d: &[f64]) -> Result<Vec<f64>> {
    if let Some(v) = sentences.iter().find(|v| v.len() != d.len()) {
        return Err(Error::Width {
            expected: d.len(),
            actual: v.len(),
        });
    }
    let logits: Vec<f64> = sentences.iter().map(|v| dot(v, d)).collect();
    softmax_values(&logits, None)
}

/// AttScore of `candidates[index]` against `d`.
pub fn att_score(index: usize, d: &[f64], candidates: &[Vec<f64>]) -> Result<f64> {
    att_scores(candidates, d)?
        .get(index)
        .copied()
        .ok_or_else(|| Error::invalid(format!("candidate {index} out of range")))
}

/// Cosine similarity, 0 when either vector is zero.
pub fn cos_score(v: &[f64], d: &[f64]) -> f64 {
    let nv = dot(v, v).sqrt();
    let nd = dot(d, d).sqrt();
    if nv == 0.0 || nd == 0.0 {
        return 0.0;
    }
    (dot(v, d) / (nv * nd)).clamp(-1.0, 1.0)
}

/// Indices by descending score, ties broken by ascending index.
pub fn rank_by_scores(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    idx
}

fn stream_of(pair_id: &str) -> u64 {
    // FNV-1a, so the random stream of a pair does not depend on evaluation order
    pair_id
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// I.i.d. uniform `[0, 1)` scores from the pair's own stream of `seed`.
pub fn random_scores(pair_id: &str, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_of(pair_id));
    (0..n).map(|_| rng.gen::<f64>()).collect()
}

/// Scores the localization side of a positive pair from an already computed [`PairScore`].
pub fn align_scored(
    pair: &PreparedPair,
    score: &PairScore,
    scorer: Scorer,
    target: AlignTarget,
    seed: u64,
) -> Result<AlignmentResult> {
    let side = pair
        .gold_side
        .ok_or_else(|| Error::invalid(format!("pair {} has no localization side", pair.id)))?;
    let (sentences, target) = match (side, target) {
        (Side::A, AlignTarget::Document) => (&score.sentences_a, &score.doc_b),
        (Side::A, AlignTarget::Final) => (&score.sentences_a, &score.doc_tilde_b),
        (Side::B, AlignTarget::Document) => (&score.sentences_b, &score.doc_a),
        (Side::B, AlignTarget::Final) => (&score.sentences_b, &score.doc_tilde_a),
    };
    if sentences.is_empty() {
        return Err(Error::invalid(format!("pair {} has no sentences to localize", pair.id)));
    }
    let sentence_scores = match scorer {
        Scorer::Attention => att_scores(sentences, target)?,
        Scorer::Cosine => sentences.iter().map(|v| cos_score(v, target)).collect(),
        Scorer::Random => random_scores(&pair.id, sentences.len(), seed),
    };
    Ok(AlignmentResult {
        pair_id: pair.id.clone(),
        ranking: rank_by_scores(&sentence_scores),
        sentence_scores,
        gold: pair.gold.clone(),
        d2d_correct: score.predicted_label == pair.label,
    })
}

/// Runs the model on one pair and ranks its localization-side sentences.
pub fn rank_sentences<F: Real>(
    pair: &PreparedPair,
    model: &Model<F>,
    scorer: Scorer,
    target: AlignTarget,
    seed: u64,
) -> Result<AlignmentResult> {
    let score = model.score_pair(&pair.a, &pair.b)?;
    align_scored(pair, &score, scorer, target, seed)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mrr: Option<f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub p_at: BTreeMap<usize, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_at_formula: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scorer: Option<Scorer>,
    pub pairs: usize,
    pub positive_pairs: usize,
}

impl MetricReport {
    fn merge(mut self, other: MetricReport) -> MetricReport {
        self.accuracy = self.accuracy.or(other.accuracy);
        self.f1 = self.f1.or(other.f1);
        self.mrr = self.mrr.or(other.mrr);
        self.p_at.extend(other.p_at);
        self.p_at_formula = self.p_at_formula.or(other.p_at_formula);
        self.oracle = self.oracle.or(other.oracle);
        self.pairs = self.pairs.max(other.pairs);
        self.positive_pairs = self.positive_pairs.max(other.positive_pairs);
        self
    }

    /// Aligned plain-text rendering, values as percentages.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<(String, String)> = Vec::new();
        let pct = |x: f64| format!("{:.2}", 100.0 * x);
        if let Some(a) = self.accuracy {
            rows.push(("accuracy".into(), pct(a)));
        }
        if let Some(f) = self.f1 {
            rows.push(("f1".into(), pct(f)));
        }
        if let Some(m) = self.mrr {
            rows.push(("mrr".into(), pct(m)));
        }
        for (n, p) in &self.p_at {
            rows.push((format!("p@{n}"), pct(*p)));
        }
        rows.push(("pairs".into(), self.pairs.to_string()));
        rows.push(("positive pairs".into(), self.positive_pairs.to_string()));
        if let Some(o) = self.oracle {
            rows.push(("oracle".into(), o.to_string()));
        }
        if let Some(s) = self.scorer {
            rows.push(("scorer".into(), s.to_string()));
        }
        let width = rows.iter().map(|(k, _)| k.chars().count()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            out.push_str(&format!("{k:<width$}  {v:>8}\n"));
        }
        if let Some(f) = &self.p_at_formula {
            out.push_str(&format!("p@N = {f}\n"));
        }
        out
    }
}

/// Accuracy and F1 of the positive class; 0/0 precision or recall counts as 0.
pub fn classification_metrics(predictions: &[u8], labels: &[u8]) -> Result<MetricReport> {
    if predictions.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::invalid("no predictions to score"));
    }
    if labels.iter().chain(predictions).any(|&l| l > 1) {
        return Err(Error::invalid("labels must be binary"));
    }
    let (mut tp, mut fp, mut fn_, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &l) in predictions.iter().zip(labels) {
        correct += usize::from(p == l);
        tp += usize::from(p == 1 && l == 1);
        fp += usize::from(p == 1 && l == 0);
        fn_ += usize::from(p == 0 && l == 1);
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(MetricReport {
        accuracy: Some(correct as f64 / labels.len() as f64),
        f1: Some(f1),
        pairs: labels.len(),
        positive_pairs: labels.iter().filter(|&&l| l == 1).count(),
        ..MetricReport::default()
    })
}

/// MRR and P@N over alignment results. Outside oracle mode a pair whose
/// document-level prediction is wrong contributes 0.
pub fn ranking_metrics(results: &[AlignmentResult], oracle: bool, norm: PrecisionNorm) -> Result<MetricReport> {
    if results.is_empty() {
        return Err(Error::invalid("no alignment results to score"));
    }
    let mut mrr = 0.0;
    let mut p_at = [0.0; P_AT.len()];
    for r in results {
        if r.gold.is_empty() {
            return Err(Error::invalid(format!("pair {} has no gold sentences", r.pair_id)));
        }
        if !oracle && !r.d2d_correct {
            continue;
        }
        if let Some(rank) = r.first_gold_rank() {
            mrr += 1.0 / rank as f64;
        }
        for (slot, &n) in p_at.iter_mut().zip(&P_AT) {
            let hits = r.ranking.iter().take(n).filter(|i| r.gold.contains(i)).count();
            let den = match norm {
                PrecisionNorm::MinGold => n.min(r.gold.len()),
                PrecisionNorm::Cutoff => n,
            };
            *slot += hits as f64 / den as f64;
        }
    }
    let count = results.len() as f64;
    Ok(MetricReport {
        mrr: Some(mrr / count),
        p_at: P_AT.iter().zip(p_at).map(|(&n, v)| (n, v / count)).collect(),
        p_at_formula: Some(norm.describe().to_string()),
        oracle: Some(oracle),
        pairs: results.len(),
        positive_pairs: results.len(),
        ..MetricReport::default()
    })
}

/// Options for [`joint_eval`].
#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub scorer: Scorer,
    pub oracle: bool,
    pub norm: PrecisionNorm,
    pub target: AlignTarget,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            scorer: Scorer::Attention,
            oracle: false,
            norm: PrecisionNorm::MinGold,
            target: AlignTarget::Document,
            seed: 0,
        }
    }
}

/// Document-level metrics over every pair and sentence-level metrics over
/// the positive pairs that carry gold sentences.
pub fn joint_eval<F: Real>(
    pairs: &[PreparedPair],
    model: &Model<F>,
    opts: &EvalOptions,
) -> Result<(MetricReport, Vec<AlignmentResult>)> {
    let scored: Vec<PairScore> = pairs
        .par_iter()
        .map(|p| model.score_pair(&p.a, &p.b))
        .collect::<Result<_>>()?;
    let predictions: Vec<u8> = scored.iter().map(|s| s.predicted_label).collect();
    let labels: Vec<u8> = pairs.iter().map(|p| p.label).collect();
    let mut report = classification_metrics(&predictions, &labels)?;
    let results: Vec<AlignmentResult> = pairs
        .iter()
        .zip(&scored)
        .filter(|(p, _)| p.label == 1 && p.gold_side.is_some() && !p.gold.is_empty())
        .map(|(p, s)| align_scored(p, s, opts.scorer, opts.target, opts.seed))
        .collect::<Result<_>>()?;
    if !results.is_empty() {
        report = report.merge(ranking_metrics(&results, opts.oracle, opts.norm)?);
    }
    report.oracle = Some(opts.oracle);
    report.scorer = Some(opts.scorer);
    Ok((report, results))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(ranking: Vec<usize>, gold: Vec<usize>, d2d_correct: bool) -> AlignmentResult {
        AlignmentResult {
            pair_id: "p".into(),
            sentence_scores: vec![0.0; ranking.len()],
            ranking,
            gold,
            d2d_correct,
        }
    }

    #[test]
    fn att_score_closed_forms() {
        let same = vec![vec![0.2, 0.4]; 4];
        for s in att_scores(&same, &[1.0, -2.0]).unwrap() {
            assert!((s - 0.25).abs() < 1e-15);
        }
        let s = att_scores(&[vec![1.0, 0.0], vec![-1.0, 0.0]], &[1.0, 0.0]).unwrap();
        assert!((s[0] - 0.8808).abs() < 1e-4 && (s[1] - 0.1192).abs() < 1e-4);
        assert!((att_score(0, &[1.0, 0.0], &[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap() - s[0]).abs() < 1e-15);
    }

    #[test]
    fn cosine_closed_forms() {
        assert!((cos_score(&[0.3, 0.4], &[0.3, 0.4]) - 1.0).abs() < 1e-15);
        assert_eq!(cos_score(&[1.0, 0.0], &[0.0, 2.0]), 0.0);
        assert!((cos_score(&[1.0, 0.0], &[1.0, 1.0]) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(cos_score(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn ties_rank_by_index() {
        assert_eq!(rank_by_scores(&[0.5, 0.9, 0.5, 0.9]), vec![1, 3, 0, 2]);
    }

    #[test]
    fn mrr_examples() {
        let m = ranking_metrics(&[result(vec![0, 1], vec![0], true)], true, PrecisionNorm::MinGold).unwrap();
        assert_eq!(m.mrr, Some(1.0));
        assert_eq!(m.p_at[&1], 1.0);
        let two = vec![result(vec![1, 0, 2, 3], vec![0], true), result(vec![1, 2, 3, 0], vec![0], false)];
        assert_eq!(ranking_metrics(&two, true, PrecisionNorm::MinGold).unwrap().mrr, Some(0.375));
        assert_eq!(ranking_metrics(&two, false, PrecisionNorm::MinGold).unwrap().mrr, Some(0.25));
    }

    #[test]
    fn classification_examples() {
        let m = classification_metrics(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!((m.accuracy, m.f1), (Some(1.0), Some(1.0)));
        let m = classification_metrics(&[0, 0, 0, 0], &[1, 0, 1, 0]).unwrap();
        assert_eq!((m.accuracy, m.f1), (Some(0.5), Some(0.0)));
        let preds = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
        let labels = [1, 1, 0, 1, 0, 0, 0, 0, 0, 0];
        let m = classification_metrics(&preds, &labels).unwrap();
        assert!((m.accuracy.unwrap() - 0.8).abs() < 1e-12);
        assert!((m.f1.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!(classification_metrics(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn random_scores_are_reproducible_per_pair() {
        assert_eq!(random_scores("x", 5, 7), random_scores("x", 5, 7));
        assert_ne!(random_scores("x", 5, 7), random_scores("y", 5, 7));
        assert!(random_scores("x", 50, 1).iter().all(|s| (0.0..1.0).contains(s)));
    }

    #[test]
    fn table_mentions_formula() {
        let m = ranking_metrics(&[result(vec![0], vec![0], true)], true, PrecisionNorm::Cutoff).unwrap();
        let t = m.to_table();
        assert!(t.contains("p@10") && t.contains("/ N"));
    }
}
