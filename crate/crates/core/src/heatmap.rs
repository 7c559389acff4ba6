//! Sentence-score heatmaps for terminals and browsers.
//!
//! Scores are min-max normalized per document, so the same rendering works
//! for every scorer. A document with a single sentence, or with identical
//! scores, renders at full intensity.

use std::fmt::Write as _;

use crate::align::AlignmentResult;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Ansi,
    Html,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ansi" => Ok(Format::Ansi),
            "html" => Ok(Format::Html),
            _ => Err(Error::invalid(format!("unknown heatmap format {s:?}"))),
        }
    }
}

/// Min-max normalization into `[0, 1]`; constant input maps to 1.
pub fn intensities(scores: &[f64]) -> Vec<f64> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    scores
        .iter()
        .map(|s| if span > 0.0 { (s - lo) / span } else { 1.0 })
        .collect()
}

fn blue(t: f64) -> (u8, u8, u8) {
    let mix = |from: f64, to: f64| (from + (to - from) * t).round() as u8;
    (mix(255.0, 30.0), mix(255.0, 90.0), 255)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders the localization-side sentences with a background whose blueness
/// follows the sentence score. Gold sentences carry a leading `*`.
pub fn render(result: &AlignmentResult, sentences: &[String], format: Format) -> Result<String> {
    if result.sentence_scores.is_empty() {
        return Err(Error::invalid(format!("pair {} has no sentence scores", result.pair_id)));
    }
    if result.sentence_scores.len() > sentences.len() {
        return Err(Error::invalid(format!(
            "pair {} has {} scores for {} sentences",
            result.pair_id,
            result.sentence_scores.len(),
            sentences.len()
        )));
    }
    let levels = intensities(&result.sentence_scores);
    let mut out = String::new();
    match format {
        Format::Ansi => {
            for (i, t) in levels.iter().enumerate() {
                let (r, g, b) = blue(*t);
                let mark = if result.gold.contains(&i) { "*" } else { " " };
                let fg = if *t > 0.5 { "97" } else { "30" };
                let _ = writeln!(
                    out,
                    "{mark}\x1b[48;2;{r};{g};{b}m\x1b[{fg}m {} \x1b[0m {:.4}",
                    sentences[i], result.sentence_scores[i]
                );
            }
        }
        Format::Html => {
            let _ = write!(
                out,
                "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{}</title>\
                 <style>body{{font-family:sans-serif;max-width:50em;margin:2em auto}}\
                 p{{padding:.3em .5em;margin:.2em 0;border-radius:3px}}</style></head><body>\n\
                 <h1>{}</h1>\n",
                escape(&result.pair_id),
                escape(&result.pair_id)
            );
            for (i, t) in levels.iter().enumerate() {
                let (r, g, b) = blue(*t);
                let mark = if result.gold.contains(&i) { "* " } else { "" };
                let color = if *t > 0.5 { "#fff" } else { "#000" };
                let _ = writeln!(
                    out,
                    "<p style=\"background:rgb({r},{g},{b});color:{color}\" title=\"{:.6}\">{mark}{}</p>",
                    result.sentence_scores[i],
                    escape(&sentences[i])
                );
            }
            out.push_str("</body></html>\n");
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_cases() {
        assert_eq!(intensities(&[0.3, 0.3, 0.3]), vec![1.0; 3]);
        assert_eq!(intensities(&[0.7]), vec![1.0]);
        assert_eq!(intensities(&[0.1, 0.9]), vec![0.0, 1.0]);
    }

    #[test]
    fn gold_is_marked() {
        let r = AlignmentResult {
            pair_id: "p<1>".into(),
            sentence_scores: vec![0.2, 0.8],
            ranking: vec![1, 0],
            gold: vec![1],
            d2d_correct: true,
        };
        let s = vec!["first".to_string(), "second & last".to_string()];
        let html = render(&r, &s, Format::Html).unwrap();
        assert!(html.contains("* second &amp; last"));
        assert!(html.contains("p&lt;1&gt;"));
        let ansi = render(&r, &s, Format::Ansi).unwrap();
        assert!(ansi.lines().nth(1).unwrap().starts_with('*'));
        assert!(ansi.lines().next().unwrap().starts_with(' '));
    }
}
