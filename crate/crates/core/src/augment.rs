//! Unsupervised silver-data construction: relevance gating, average-linkage
//! agglomerative clustering under cosine distance, medoid extraction, and
//! removal of the medoids from the input so that each becomes a bullet of
//! an abstractive target.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::QuestionThread;
use crate::error::{Error, Result};
use crate::geometry::{cosine_distance, norm, EmbeddingMatrix};
use crate::scalar::Scalar;
use crate::scoring::Scorer;
use crate::textproc::{segment_thread, SentenceRecord};

pub const DEFAULT_CUTOFF: f64 = 0.65;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceJudgment {
    pub sentence: SentenceRecord,
    pub score: f64,
    pub relevant: bool,
}

/// Scores every sentence against the question; `relevant` iff
/// `score >= threshold`.
pub fn gate_relevance<S: Scorer + ?Sized>(
    question: &str,
    sentences: &[SentenceRecord],
    scorer: &S,
    threshold: f64,
) -> Result<Vec<RelevanceJudgment>> {
    if sentences.is_empty() {
        return Ok(Vec::new());
    }
    let texts: Vec<String> = sentences.iter().map(|s| s.text.clone()).collect();
    let scores = scorer.relevance(question, &texts).map_err(|e| attach_sentence(e, &sentences[0]))?;
    if scores.len() != sentences.len() {
        return Err(Error::Transport {
            retries: 0,
            message: format!("relevance scorer returned {} scores for {} sentences", scores.len(), sentences.len()),
        });
    }
    sentences
        .iter()
        .zip(scores)
        .map(|(s, score)| {
            if !(0.0..=1.0).contains(&score) {
                return Err(attach_sentence(
                    Error::Precondition(format!("relevance score {score} outside [0, 1]")),
                    s,
                ));
            }
            Ok(RelevanceJudgment { sentence: s.clone(), score, relevant: score >= threshold })
        })
        .collect()
}

fn attach_sentence(e: Error, s: &SentenceRecord) -> Error {
    // Fixture misses identify the exact sentence through their key already.
    let sentence = match &e {
        Error::MissingKey { .. } => format!("{}/{}/{}", s.thread_id, s.answer_id, s.index),
        _ => format!("{}/{}/{} ({:?})", s.thread_id, s.answer_id, s.index, s.text),
    };
    Error::Scorer { sentence, source: Box::new(e) }
}

/// Partition of row indices produced by [`agglomerate`]. Clusters are
/// listed by their smallest member, members ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub clusters: Vec<Vec<usize>>,
    pub cutoff: f64,
}

impl ClusterSet {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// True when every index in `0..n` is in exactly one non-empty cluster.
    pub fn is_partition_of(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for c in &self.clusters {
            if c.is_empty() {
                return false;
            }
            for &i in c {
                if i >= n || seen[i] {
                    return false;
                }
                seen[i] = true;
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// One merge accepted by [`agglomerate_traced`].
#[derive(Debug, Clone, PartialEq)]
pub struct Merge<F> {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub distance: F,
}

/// Pairwise cosine distances of the rows, symmetric with a zero diagonal.
pub fn cosine_distance_matrix<F: Scalar>(m: &EmbeddingMatrix<F>) -> Result<Vec<F>> {
    let n = m.rows();
    for i in 0..n {
        if norm(m.row(i)) == F::zero() {
            return Err(Error::DegenerateVector { row: i });
        }
    }
    let mut d = vec![F::zero(); n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = cosine_distance(m.row(i), m.row(j))?;
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    Ok(d)
}

/// Average-linkage agglomerative clustering: repeatedly merge the pair of
/// clusters with the smallest mean pairwise cosine distance while that
/// distance is at most `cutoff`. Ties go to the lexicographically smallest
/// pair of cluster slots.
pub fn agglomerate<F: Scalar>(m: &EmbeddingMatrix<F>, cutoff: F) -> Result<ClusterSet> {
    agglomerate_traced(m, cutoff).map(|(set, _)| set)
}

pub fn agglomerate_traced<F: Scalar>(m: &EmbeddingMatrix<F>, cutoff: F) -> Result<(ClusterSet, Vec<Merge<F>>)> {
    let n = m.rows();
    if n == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if !(cutoff > F::zero()) {
        return Err(Error::InvalidArgument("cutoff must be positive".into()));
    }
    let dist = cosine_distance_matrix(m)?;

    // Slot i holds a cluster (or None once merged away). `sum[i][j]` is the
    // total pairwise distance between the members of slots i and j.
    let mut members: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    let mut sum = dist.clone();
    let mut merges = Vec::new();

    loop {
        let mut best: Option<(usize, usize, F)> = None;
        for i in 0..n {
            let Some(ci) = &members[i] else { continue };
            for j in (i + 1)..n {
                let Some(cj) = &members[j] else { continue };
                let avg = sum[i * n + j] / F::from_count(ci.len() * cj.len());
                if best.is_none_or(|(_, _, b)| avg < b) {
                    best = Some((i, j, avg));
                }
            }
        }
        let Some((i, j, d)) = best else { break };
        if d > cutoff {
            break;
        }
        let right = members[j].take().expect("live slot");
        let left = members[i].as_mut().expect("live slot");
        merges.push(Merge { left: left.clone(), right: right.clone(), distance: d });
        left.extend(right);
        left.sort_unstable();
        for k in 0..n {
            if k == i || members[k].is_none() {
                continue;
            }
            let s = sum[i * n + k] + sum[j * n + k];
            sum[i * n + k] = s;
            sum[k * n + i] = s;
        }
    }

    let mut clusters: Vec<Vec<usize>> = members.into_iter().flatten().collect();
    clusters.sort_by_key(|c| c[0]);
    Ok((ClusterSet { clusters, cutoff: cutoff.as_f64() }, merges))
}

/// Medoid of a cluster: the member with the smallest mean cosine distance
/// to the other members, ties to the lowest index.
pub fn pick_centroid<F: Scalar>(cluster: &[usize], m: &EmbeddingMatrix<F>) -> Result<usize> {
    if cluster.len() < 2 {
        return Err(Error::Precondition(format!("centroid needs a cluster of >= 2, got {}", cluster.len())));
    }
    let mut sorted = cluster.to_vec();
    sorted.sort_unstable();
    let mut best: Option<(usize, F)> = None;
    for &i in &sorted {
        let mut total = F::zero();
        for &j in &sorted {
            if i != j {
                total = total + cosine_distance(m.row(i), m.row(j)).map_err(|e| match e {
                    Error::DegenerateVector { row } => Error::DegenerateVector { row: if row == 0 { i } else { j } },
                    other => other,
                })?;
            }
        }
        let mean = total / F::from_count(sorted.len() - 1);
        if best.is_none_or(|(_, b)| mean < b) {
            best = Some((i, mean));
        }
    }
    Ok(best.expect("non-empty cluster").0)
}

/// One silver training example; also the silver JSONL record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SilverExample {
    pub question: String,
    #[serde(rename = "input", with = "sentence_texts")]
    pub input_sentences: Vec<SentenceRecord>,
    #[serde(rename = "bullets")]
    pub summary_bullets: Vec<String>,
    pub thread_id: String,
}

/// Silver records carry only sentence text on the wire.
mod sentence_texts {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::textproc::SentenceRecord;

    pub fn serialize<S: Serializer>(v: &[SentenceRecord], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|r| r.text.as_str()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<SentenceRecord>, D::Error> {
        let texts = Vec::<String>::deserialize(d)?;
        Ok(texts
            .into_iter()
            .enumerate()
            .map(|(index, text)| SentenceRecord { thread_id: String::new(), answer_id: String::new(), index, text })
            .collect())
    }
}

/// Assembles a silver example. `clusters` index into the relevant
/// judgments (in order) and `centroids[k]` is the medoid of cluster `k`
/// when it has two or more members. Bullets follow each cluster's earliest
/// member; the input is the relevant sentences minus every sentence whose
/// text equals a bullet. Returns `None` when no cluster has two members.
pub fn build_silver(
    thread: &QuestionThread,
    judgments: &[RelevanceJudgment],
    clusters: &ClusterSet,
    centroids: &[Option<usize>],
) -> Option<SilverExample> {
    let relevant: Vec<&SentenceRecord> = judgments.iter().filter(|j| j.relevant).map(|j| &j.sentence).collect();

    let mut picked: Vec<(usize, usize)> = clusters
        .clusters
        .iter()
        .zip(centroids)
        .filter(|(c, _)| c.len() >= 2)
        .filter_map(|(c, centroid)| centroid.map(|m| (c.iter().copied().min().unwrap_or(m), m)))
        .collect();
    if picked.is_empty() {
        return None;
    }
    picked.sort_unstable();

    let bullets: Vec<String> = picked.iter().map(|&(_, m)| relevant[m].text.clone()).collect();
    let bullet_set: HashSet<&str> = bullets.iter().map(String::as_str).collect();
    let input_sentences = relevant
        .iter()
        .filter(|s| !bullet_set.contains(s.text.as_str()))
        .map(|s| (*s).clone())
        .collect();

    Some(SilverExample {
        question: thread.question_text(),
        input_sentences,
        summary_bullets: bullets,
        thread_id: thread.thread_id.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub cutoff: f64,
    pub threshold: f64,
    /// Worker threads; 0 means all available cores.
    pub jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { cutoff: DEFAULT_CUTOFF, threshold: DEFAULT_THRESHOLD, jobs: 0 }
    }
}

/// Runs the full pipeline on one thread.
pub fn process_thread<S: Scorer + ?Sized, E: Scorer + ?Sized>(
    thread: &QuestionThread,
    scorer: &S,
    embedder: &E,
    config: &PipelineConfig,
) -> Result<Option<SilverExample>> {
    let sentences = segment_thread(thread);
    let judgments = gate_relevance(&thread.question_text(), &sentences, scorer, config.threshold)?;
    let relevant: Vec<String> = judgments.iter().filter(|j| j.relevant).map(|j| j.sentence.text.clone()).collect();
    if relevant.len() < 2 {
        return Ok(None);
    }
    let vectors = embedder.embed(&relevant)?;
    let m = EmbeddingMatrix::from_rows(&vectors)?;
    let clusters = agglomerate(&m, config.cutoff)?;
    let centroids = clusters
        .clusters
        .iter()
        .map(|c| if c.len() >= 2 { pick_centroid(c, &m).map(Some) } else { Ok(None) })
        .collect::<Result<Vec<_>>>()?;
    Ok(build_silver(thread, &judgments, &clusters, &centroids))
}

/// Processes every thread, in parallel when `config.jobs != 1`, and
/// returns the examples ordered by `thread_id`. Threads that fail are
/// logged and skipped; an unavailable backend fails before any work.
pub fn run_pipeline<S: Scorer + ?Sized, E: Scorer + ?Sized>(
    corpus: &[QuestionThread],
    scorer: &S,
    embedder: &E,
    config: &PipelineConfig,
) -> Result<Vec<SilverExample>> {
    scorer.health()?;
    embedder.health()?;

    let work = |t: &QuestionThread| match process_thread(t, scorer, embedder, config) {
        Ok(ex) => ex,
        Err(e) => {
            log::warn!("thread {} skipped: {e}", t.thread_id);
            None
        }
    };
    let mut out: Vec<SilverExample> = if config.jobs == 1 {
        corpus.iter().filter_map(work).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| corpus.par_iter().filter_map(work).collect())
    };
    out.sort_by(|a, b| a.thread_id.cmp(&b.thread_id));
    Ok(out)
}
