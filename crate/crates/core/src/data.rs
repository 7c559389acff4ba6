//! Pair datasets: the JSON-lines interchange format, pair-construction
//! transforms, and a seeded synthetic benchmark.
//!
//! A record looks like
//!
//! ```json
//! {"id": "p1", "label": 1, "doc_a": ["first sentence", "second"], "doc_b": ["..."],
//!  "gold_side": "a", "gold_sentences": [1]}
//! ```
//!
//! `gold_side` names the document whose sentences are ranked during
//! localization; `gold_sentences` indexes into that document.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{filter_chars, tokenize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "a")]
    A,
    #[serde(rename = "b")]
    B,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairExample {
    pub id: String,
    pub label: u8,
    pub doc_a: Vec<String>,
    pub doc_b: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_side: Option<Side>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_sentences: Option<Vec<usize>>,
}

impl PairExample {
    pub fn doc(&self, side: Side) -> &[String] {
        match side {
            Side::A => &self.doc_a,
            Side::B => &self.doc_b,
        }
    }

    /// Identifier of one side's document, used to key precomputed sentence vectors.
    pub fn doc_id(&self, side: Side) -> String {
        match side {
            Side::A => format!("{}/a", self.id),
            Side::B => format!("{}/b", self.id),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.label > 1 {
            return Err(Error::invalid(format!("label must be 0 or 1, got {}", self.label)));
        }
        if self.doc_a.is_empty() || self.doc_b.is_empty() {
            return Err(Error::invalid("both documents need at least one sentence"));
        }
        if self.label == 0 && (self.gold_side.is_some() || self.gold_sentences.is_some()) {
            return Err(Error::invalid("gold localization on a negative pair"));
        }
        match (self.gold_side, &self.gold_sentences) {
            (Some(side), Some(gold)) => {
                let n = self.doc(side).len();
                if gold.is_empty() {
                    return Err(Error::invalid("gold_sentences is empty"));
                }
                if let Some(bad) = gold.iter().find(|&&g| g >= n) {
                    return Err(Error::invalid(format!(
                        "gold sentence {bad} out of range for a {n}-sentence document"
                    )));
                }
                if gold.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::invalid("gold_sentences must be sorted and distinct"));
                }
            }
            (None, None) => {}
            _ => return Err(Error::invalid("gold_side and gold_sentences must appear together")),
        }
        Ok(())
    }
}

/// Reads and validates a pair file, applying the character filter to every sentence.
pub fn parse_pairs(path: &Path) -> Result<Vec<PairExample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Record {
            path: path.to_path_buf(),
            line: n + 1,
            msg,
        };
        let mut ex: PairExample = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        for s in ex.doc_a.iter_mut().chain(ex.doc_b.iter_mut()) {
            *s = filter_chars(s);
        }
        ex.validate().map_err(|e| err(e.to_string()))?;
        out.push(ex);
    }
    Ok(out)
}

pub fn write_pairs(path: &Path, pairs: &[PairExample]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in pairs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Pairs every positive `(A, B⁺)` with a document drawn uniformly from `pool`,
/// excluding `A` and `B⁺`. No lexical-overlap filtering is applied.
pub fn make_negatives(positives: &[PairExample], pool: &[Vec<String>], seed: u64) -> Result<Vec<PairExample>> {
    if pool.len() < 2 {
        return Err(Error::invalid("negative sampling needs a pool of at least two documents"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(positives.len());
    for p in positives {
        let eligible: Vec<&Vec<String>> = pool.iter().filter(|d| **d != p.doc_a && **d != p.doc_b).collect();
        let pick = eligible
            .choose(&mut rng)
            .ok_or_else(|| Error::invalid(format!("no eligible negative for pair {}", p.id)))?;
        out.push(PairExample {
            id: format!("{}-neg", p.id),
            label: 0,
            doc_a: p.doc_a.clone(),
            doc_b: (*pick).clone(),
            gold_side: None,
            gold_sentences: None,
        });
    }
    Ok(out)
}

/// Removes a citation span (character range) from a sentence and normalizes whitespace.
///
/// The returned flag marks the sentence as gold. An empty result is an error:
/// the pair it came from has to be discarded.
pub fn strip_citation_span(sentence: &str, span: Range<usize>) -> Result<(String, bool)> {
    let chars: Vec<char> = sentence.chars().collect();
    if span.start > span.end || span.end > chars.len() {
        return Err(Error::invalid(format!(
            "span {span:?} outside a sentence of {} characters",
            chars.len()
        )));
    }
    let kept: String = chars[..span.start].iter().chain(&chars[span.end..]).collect();
    let normalized = kept.split_whitespace().collect::<Vec<_>>().join(" ");
    if normalized.is_empty() {
        return Err(Error::invalid("sentence is empty after removing the citation span"));
    }
    Ok((normalized, true))
}

/// Parameters of the synthetic benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub vocab_size: usize,
    pub n_topics: usize,
    /// Inclusive range of sentences per document.
    pub sentences_per_doc: (usize, usize),
    /// Inclusive range of tokens per sentence.
    pub tokens_per_sentence: (usize, usize),
    /// Probability of dropping each token of the planted copy.
    pub plant_dropout: f64,
    /// Probability that a token of a topical sentence comes from the topic rather than the shared background.
    pub topic_share: f64,
    /// Probability that a sentence is topical; every document has at least one topical sentence.
    pub topical_sentence_rate: f64,
    /// Zipf exponent of every token distribution.
    pub zipf_exponent: f64,
    pub n_pairs: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            vocab_size: 2000,
            n_topics: 8,
            sentences_per_doc: (5, 10),
            tokens_per_sentence: (4, 10),
            plant_dropout: 0.1,
            topic_share: 1.0,
            topical_sentence_rate: 0.0,
            zipf_exponent: 1.0,
            // 80% of 6,250 gives 5,000 training pairs
            n_pairs: 6250,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let (smin, smax) = self.sentences_per_doc;
        let (tmin, tmax) = self.tokens_per_sentence;
        if self.n_topics < 2 {
            return Err(Error::invalid("need at least two topics"));
        }
        if self.vocab_size < 2 * (self.n_topics + 1) {
            return Err(Error::invalid("vocab_size must give every topic and the background at least two tokens"));
        }
        if smin == 0 || smin > smax || tmin == 0 || tmin > tmax {
            return Err(Error::invalid("length ranges must be positive and ordered"));
        }
        if !(0.0..1.0).contains(&self.plant_dropout) {
            return Err(Error::invalid("plant_dropout must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.topic_share)
            || !(0.0..=1.0).contains(&self.topical_sentence_rate)
            || self.zipf_exponent < 0.0
        {
            return Err(Error::invalid(
                "topic_share and topical_sentence_rate must lie in [0, 1] and zipf_exponent be non-negative",
            ));
        }
        if self.n_pairs < 2 || !self.n_pairs.is_multiple_of(2) {
            return Err(Error::invalid("n_pairs must be even and at least 2 for an exact 50/50 balance"));
        }
        Ok(())
    }

    /// Sizes of the train/dev/test splits (80/10/10, remainder to test).
    pub fn split_sizes(&self) -> (usize, usize, usize) {
        let train = self.n_pairs * 8 / 10;
        let dev = self.n_pairs / 10;
        (train, dev, self.n_pairs - train - dev)
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub train: Vec<PairExample>,
    pub dev: Vec<PairExample>,
    pub test: Vec<PairExample>,
}

/// Inverse-CDF sampler over a Zipf distribution on `tokens`.
struct Zipf {
    tokens: Vec<usize>,
    cdf: Vec<f64>,
}

impl Zipf {
    fn new(tokens: Vec<usize>, exponent: f64) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = (1..=tokens.len())
            .map(|r| {
                acc += (r as f64).powf(-exponent);
                acc
            })
            .collect();
        cdf.iter_mut().for_each(|c| *c /= acc);
        Zipf { tokens, cdf }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let i = self.cdf.partition_point(|c| *c < u).min(self.tokens.len() - 1);
        self.tokens[i]
    }
}

struct Generator<'a> {
    spec: &'a SyntheticSpec,
    topics: Vec<Zipf>,
    background: Zipf,
}

fn word(id: usize) -> String {
    format!("w{id:04}")
}

impl Generator<'_> {
    fn sentence<R: Rng>(&self, rng: &mut R, topic: Option<usize>) -> Vec<usize> {
        let (lo, hi) = self.spec.tokens_per_sentence;
        let n = rng.gen_range(lo..=hi);
        (0..n)
            .map(|_| match topic {
                Some(t) if rng.gen_bool(self.spec.topic_share) => self.topics[t].sample(rng),
                _ => self.background.sample(rng),
            })
            .collect()
    }

    /// A document with one forced topical sentence; returns it with that sentence's index.
    fn document<R: Rng>(&self, rng: &mut R, topic: usize) -> (Vec<Vec<usize>>, Vec<bool>, usize) {
        let (lo, hi) = self.spec.sentences_per_doc;
        let n = rng.gen_range(lo..=hi);
        let forced = rng.gen_range(0..n);
        let topical: Vec<bool> = (0..n)
            .map(|i| i == forced || rng.gen_bool(self.spec.topical_sentence_rate))
            .collect();
        let sentences = topical
            .iter()
            .map(|&t| self.sentence(rng, t.then_some(topic)))
            .collect();
        (sentences, topical, forced)
    }
}

fn render(doc: &[Vec<usize>]) -> Vec<String> {
    doc.iter()
        .map(|s| s.iter().map(|&t| word(t)).collect::<Vec<_>>().join(" "))
        .collect()
}

/// Fraction of a sentence's tokens that occur anywhere in `doc`.
pub fn token_overlap(sentence: &str, doc: &[String]) -> f64 {
    let vocab: HashSet<String> = doc.iter().flat_map(|s| tokenize(s)).collect();
    let toks = tokenize(sentence);
    if toks.is_empty() {
        return 0.0;
    }
    toks.iter().filter(|t| vocab.contains(*t)).count() as f64 / toks.len() as f64
}

/// True when the gold sentence of `doc_a` overlaps `doc_b` strictly more than `doc_a`'s average sentence.
pub fn plant_is_distinctive(pair: &PairExample) -> bool {
    let Some(gold) = pair.gold_sentences.as_ref().and_then(|g| g.first()) else {
        return false;
    };
    let overlaps: Vec<f64> = pair.doc_a.iter().map(|s| token_overlap(s, &pair.doc_b)).collect();
    let mean = overlaps.iter().sum::<f64>() / overlaps.len() as f64;
    overlaps[*gold] > mean
}

/// Generates a balanced synthetic pair dataset and splits it 80/10/10.
///
/// The vocabulary is split into `n_topics + 1` disjoint blocks: one per topic
/// and a shared background block, each with a Zipf distribution over its
/// tokens. A document of
/// topic `t` mixes topical sentences, whose tokens come from `t` with
/// probability `topic_share`, with pure background sentences. One sentence at
/// a random position is always topical and the rest are topical with
/// probability `topical_sentence_rate`.
///
/// In a positive pair both documents share a topic and the forced topical
/// sentence of `doc_a` is replaced by a copy of a random topical sentence of
/// `doc_b` with token dropout. A negative pair holds documents of two
/// different topics.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let block = spec.vocab_size / (spec.n_topics + 1);
    let mut perm: Vec<usize> = (0..spec.vocab_size).collect();
    perm.shuffle(&mut rng);
    let topics = (0..spec.n_topics)
        .map(|t| Zipf::new(perm[t * block..(t + 1) * block].to_vec(), spec.zipf_exponent))
        .collect();
    let gen = Generator {
        spec,
        topics,
        background: Zipf::new(perm[spec.n_topics * block..].to_vec(), spec.zipf_exponent),
    };

    let mut pairs = Vec::with_capacity(spec.n_pairs);
    for i in 0..spec.n_pairs {
        let positive = i % 2 == 0;
        let topic_a = rng.gen_range(0..spec.n_topics);
        let pair = if positive {
            loop {
                let (mut doc_a, _, at) = gen.document(&mut rng, topic_a);
                let (doc_b, topical_b, _) = gen.document(&mut rng, topic_a);
                let sources: Vec<usize> = (0..doc_b.len()).filter(|&j| topical_b[j]).collect();
                let src = &doc_b[sources[rng.gen_range(0..sources.len())]];
                let mut copy: Vec<usize> = src
                    .iter()
                    .copied()
                    .filter(|_| !rng.gen_bool(spec.plant_dropout))
                    .collect();
                if copy.is_empty() {
                    copy.push(src[rng.gen_range(0..src.len())]);
                }
                doc_a[at] = copy;
                let pair = PairExample {
                    id: String::new(),
                    label: 1,
                    doc_a: render(&doc_a),
                    doc_b: render(&doc_b),
                    gold_side: Some(Side::A),
                    gold_sentences: Some(vec![at]),
                };
                if plant_is_distinctive(&pair) {
                    break pair;
                }
            }
        } else {
            let topic_b = (topic_a + rng.gen_range(1..spec.n_topics)) % spec.n_topics;
            PairExample {
                id: String::new(),
                label: 0,
                doc_a: render(&gen.document(&mut rng, topic_a).0),
                doc_b: render(&gen.document(&mut rng, topic_b).0),
                gold_side: None,
                gold_sentences: None,
            }
        };
        pairs.push(pair);
    }
    pairs.shuffle(&mut rng);
    for (i, p) in pairs.iter_mut().enumerate() {
        p.id = format!("syn-{}-{i:05}", spec.seed);
    }
    let (train, dev, _) = spec.split_sizes();
    let test = pairs.split_off(train + dev);
    let dev_pairs = pairs.split_off(train);
    Ok(SyntheticData {
        train: pairs,
        dev: dev_pairs,
        test,
    })
}

/// Paths written by [`write_synthetic`].
#[derive(Clone, Debug)]
pub struct SyntheticFiles {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
    pub meta: PathBuf,
}

/// Generates the benchmark into `dir` as `train.jsonl`, `dev.jsonl`, `test.jsonl`
/// plus a `meta.json` sidecar holding the full spec.
pub fn write_synthetic(dir: &Path, spec: &SyntheticSpec) -> Result<SyntheticFiles> {
    let data = gen_synthetic(spec)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = SyntheticFiles {
        train: dir.join("train.jsonl"),
        dev: dir.join("dev.jsonl"),
        test: dir.join("test.jsonl"),
        meta: dir.join("meta.json"),
    };
    write_pairs(&files.train, &data.train)?;
    write_pairs(&files.dev, &data.dev)?;
    write_pairs(&files.test, &data.test)?;
    let meta = serde_json::json!({
        "generator": "zipf-topics",
        "spec": spec,
        "seed": spec.seed,
        "splits": {"train": data.train.len(), "dev": data.dev.len(), "test": data.test.len()},
    });
    fs::write(&files.meta, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&files.meta, e))?;
    Ok(files)
}
