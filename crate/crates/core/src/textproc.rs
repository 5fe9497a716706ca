//! Sentence segmentation, n-gram counting, ROUGE and abstractiveness
//! statistics. Tokens are lowercased whitespace runs throughout; there is
//! no stemming and no stopword removal.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tokens ending in a period that do not close a sentence.
pub const ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "etc.", "vs.", "cf.", "al.", "approx.", "mr.", "mrs.", "ms.", "dr.", "prof.", "sr.",
    "jr.", "st.", "no.", "fig.", "u.s.", "u.k.", "inc.", "ltd.", "co.", "jan.", "feb.", "aug.", "sept.",
    "oct.", "nov.", "dec.",
];

/// A segmented answer sentence with its provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub thread_id: String,
    pub answer_id: String,
    pub index: usize,
    pub text: String,
}

fn is_closing(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '}' | '\u{201d}' | '\u{2019}')
}

fn is_opening(c: char) -> bool {
    matches!(c, '"' | '\'' | '(' | '[' | '{' | '\u{201c}' | '\u{2018}')
}

fn ends_sentence(token: &str) -> bool {
    let core = token.trim_end_matches(is_closing);
    if !core.ends_with(['.', '!', '?']) {
        return false;
    }
    let lower = core.to_lowercase();
    !ABBREVIATIONS.contains(&lower.trim_start_matches(is_opening))
}

fn starts_sentence(token: &str) -> bool {
    token
        .trim_start_matches(is_opening)
        .chars()
        .next()
        .is_some_and(|c| c.is_uppercase() || c.is_ascii_digit())
}

/// Rule-based splitter: a boundary follows a token ending in `.`, `!` or
/// `?` (before any closing quotes or brackets) when the next token starts
/// with an uppercase letter or digit and the token is not a listed
/// abbreviation. Whitespace inside a sentence is collapsed to one space.
pub fn segment(text: &str) -> Vec<String> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let mut out = Vec::new();
    let mut start = 0;
    for i in 0..tokens.len() {
        let last = i + 1 == tokens.len();
        if last || (ends_sentence(tokens[i]) && starts_sentence(tokens[i + 1])) {
            out.push(tokens[start..=i].join(" "));
            start = i + 1;
        }
    }
    out
}

/// Segments every answer of a thread into records.
pub fn segment_thread(thread: &crate::corpus::QuestionThread) -> Vec<SentenceRecord> {
    thread
        .answers
        .iter()
        .flat_map(|a| {
            segment(&a.body).into_iter().enumerate().map(move |(index, text)| SentenceRecord {
                thread_id: thread.thread_id.clone(),
                answer_id: a.id.clone(),
                index,
                text,
            })
        })
        .collect()
}

pub fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Multiset of n-grams; keys are the space-joined lowercased tokens.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NGramProfile {
    pub n: usize,
    pub counts: BTreeMap<String, usize>,
}

impl NGramProfile {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    fn from_tokens(toks: &[String], n: usize) -> Self {
        let mut counts = BTreeMap::new();
        if toks.len() >= n {
            for w in toks.windows(n) {
                *counts.entry(w.join(" ")).or_insert(0) += 1;
            }
        }
        Self { n, counts }
    }
}

pub fn ngram_profile(text: &str, n: usize) -> Result<NGramProfile> {
    if n < 1 {
        return Err(Error::InvalidArgument("n-gram order must be >= 1".into()));
    }
    Ok(NGramProfile::from_tokens(&tokens(text), n))
}

/// Fraction of summary n-gram occurrences that never occur in the source.
pub fn novel_ngram_pct(summary: &str, source: &str, n: usize) -> Result<f64> {
    let s = ngram_profile(summary, n)?;
    let total = s.total();
    if total == 0 {
        return Err(Error::UndefinedStatistic(format!("summary has no {n}-grams")));
    }
    let src = ngram_profile(source, n)?;
    let novel: usize = s
        .counts
        .iter()
        .filter(|(g, _)| !src.counts.contains_key(*g))
        .map(|(_, c)| c)
        .sum();
    Ok(novel as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_overlap(overlap: usize, candidate_total: usize, reference_total: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(overlap, candidate_total);
        let recall = ratio(overlap, reference_total);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }
}

/// ROUGE-N with clipped n-gram counts.
pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> Result<RougeScore> {
    let c = ngram_profile(candidate, n)?;
    let r = ngram_profile(reference, n)?;
    let overlap: usize = c
        .counts
        .iter()
        .map(|(g, &cc)| r.counts.get(g).map_or(0, |&rc| cc.min(rc)))
        .sum();
    Ok(RougeScore::from_overlap(overlap, c.total(), r.total()))
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L from the longest common token subsequence, F1 with beta = 1.
pub fn rouge_l(candidate: &str, reference: &str) -> RougeScore {
    let c = tokens(candidate);
    let r = tokens(reference);
    RougeScore::from_overlap(lcs_len(&c, &r), c.len(), r.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextPair {
    pub input: String,
    pub summary: String,
}

/// Mean novel n-gram fraction over the pairs where it is defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NovelStat {
    pub n: usize,
    pub mean: Option<f64>,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub pairs: usize,
    pub mean_input_tokens: f64,
    pub mean_summary_tokens: f64,
    /// Mean over pairs of summary tokens / input tokens.
    pub compression: f64,
    pub novel: Vec<NovelStat>,
}

/// Corpus-level length, compression and novelty statistics.
pub fn dataset_stats(pairs: &[TextPair]) -> Result<DatasetStats> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("dataset statistics need at least one pair".into()));
    }
    let n = pairs.len() as f64;
    let mut input_tokens = 0usize;
    let mut summary_tokens = 0usize;
    let mut compression = 0.0;
    for (i, p) in pairs.iter().enumerate() {
        let it = p.input.split_whitespace().count();
        let st = p.summary.split_whitespace().count();
        if it == 0 {
            return Err(Error::UndefinedStatistic(format!("pair {i} has an empty input")));
        }
        input_tokens += it;
        summary_tokens += st;
        compression += st as f64 / it as f64;
    }
    let novel = (1..=3)
        .map(|order| {
            let values: Vec<f64> = pairs
                .iter()
                .filter_map(|p| novel_ngram_pct(&p.summary, &p.input, order).ok())
                .collect();
            let mean = (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64);
            NovelStat { n: order, mean, pairs: values.len() }
        })
        .collect();
    Ok(DatasetStats {
        pairs: pairs.len(),
        mean_input_tokens: input_tokens as f64 / n,
        mean_summary_tokens: summary_tokens as f64 / n,
        compression: compression / n,
        novel,
    })
}

/// Distinct lowercased tokens, for quick set-overlap checks.
pub fn token_set(text: &str) -> HashSet<String> {
    tokens(text).into_iter().collect()
}
