//! Question threads: ingestion from JSONL or a StackExchange `Posts.xml`
//! dump, and the thread-level filtering heuristics.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use quick_xml::events::Event;
use quick_xml::Reader;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of maximal non-whitespace runs.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "RawAnswer", into = "RawAnswer")]
pub struct Answer {
    pub id: String,
    pub body: String,
    pub score: i64,
    word_count: usize,
}

impl Answer {
    pub fn new(id: impl Into<String>, body: impl Into<String>, score: i64) -> Self {
        let body = body.into();
        let word_count = word_count(&body);
        Self { id: id.into(), body, score, word_count }
    }

    pub fn word_count(&self) -> usize {
        self.word_count
    }
}

#[derive(Serialize, Deserialize)]
struct RawAnswer {
    id: String,
    body: String,
    score: i64,
}

impl From<RawAnswer> for Answer {
    fn from(r: RawAnswer) -> Self {
        Answer::new(r.id, r.body, r.score)
    }
}

impl From<Answer> for RawAnswer {
    fn from(a: Answer) -> Self {
        RawAnswer { id: a.id, body: a.body, score: a.score }
    }
}

/// One question with its scored answers; also the JSONL record schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionThread {
    pub thread_id: String,
    pub forum: String,
    pub title: String,
    #[serde(rename = "question")]
    pub question_body: String,
    pub tags: Vec<String>,
    pub answers: Vec<Answer>,
}

impl QuestionThread {
    /// Title and body as one question string.
    pub fn question_text(&self) -> String {
        match (self.title.trim(), self.question_body.trim()) {
            (t, "") => t.to_string(),
            ("", b) => b.to_string(),
            (t, b) => format!("{t} {b}"),
        }
    }

    pub fn total_words(&self) -> usize {
        self.answers.iter().map(Answer::word_count).sum()
    }

    pub fn longest_answer(&self) -> usize {
        self.answers.iter().map(Answer::word_count).max().unwrap_or(0)
    }
}

/// Open interval `(lower, upper)` over word counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordRange {
    pub lower: usize,
    pub upper: usize,
}

impl WordRange {
    pub fn new(lower: usize, upper: usize) -> Result<Self> {
        if lower >= upper {
            return Err(Error::InvalidArgument(format!("interval ({lower}, {upper}) is empty")));
        }
        Ok(Self { lower, upper })
    }

    pub fn contains(&self, v: f64) -> bool {
        v > self.lower as f64 && v < self.upper as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub min_answers: usize,
    pub total_words: WordRange,
    pub avg_words: WordRange,
    /// Reject when the longest answer has at least this many words.
    pub max_longest_answer: Option<usize>,
    pub require_nonneg_score: bool,
}

impl FilterPolicy {
    /// Thresholds used to select threads for manual annotation.
    pub fn manual() -> Self {
        Self {
            min_answers: 4,
            total_words: WordRange { lower: 100, upper: 1500 },
            avg_words: WordRange { lower: 50, upper: 300 },
            max_longest_answer: None,
            require_nonneg_score: true,
        }
    }

    /// Looser thresholds used to select threads for silver-data augmentation.
    pub fn augmentation() -> Self {
        Self {
            min_answers: 3,
            total_words: WordRange { lower: 100, upper: 1000 },
            avg_words: WordRange { lower: 50, upper: 300 },
            max_longest_answer: Some(400),
            require_nonneg_score: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_answers < 1 {
            return Err(Error::InvalidArgument("min_answers must be >= 1".into()));
        }
        WordRange::new(self.total_words.lower, self.total_words.upper)?;
        WordRange::new(self.avg_words.lower, self.avg_words.upper)?;
        Ok(())
    }
}

/// First failing filter rule, in evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    TooFewAnswers,
    LongestAnswer,
    TotalLength,
    AverageLength,
}

impl RejectReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::TooFewAnswers => "too-few-answers",
            RejectReason::LongestAnswer => "longest-answer",
            RejectReason::TotalLength => "total-length",
            RejectReason::AverageLength => "average-length",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Keeps only answers with a non-negative score, preserving order.
pub fn drop_negative_answers(mut thread: QuestionThread) -> QuestionThread {
    thread.answers.retain(|a| a.score >= 0);
    thread
}

/// Applies `policy` to `thread`. Negative-score answers are expected to be
/// removed beforehand when the policy asks for it.
pub fn passes_filter(thread: &QuestionThread, policy: &FilterPolicy) -> Result<(), RejectReason> {
    let n = thread.answers.len();
    if n < policy.min_answers {
        return Err(RejectReason::TooFewAnswers);
    }
    if let Some(cap) = policy.max_longest_answer {
        if thread.longest_answer() >= cap {
            return Err(RejectReason::LongestAnswer);
        }
    }
    let total = thread.total_words();
    if !policy.total_words.contains(total as f64) {
        return Err(RejectReason::TotalLength);
    }
    if !policy.avg_words.contains(total as f64 / n as f64) {
        return Err(RejectReason::AverageLength);
    }
    Ok(())
}

/// Threads parsed from a source plus the count of records that were skipped.
#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub threads: Vec<QuestionThread>,
    pub skipped: usize,
}

/// Reads JSONL or `Posts.xml`, sniffing the format from the first
/// non-blank byte. Posts.xml threads take `forum` as their forum name.
pub fn ingest<R: BufRead>(mut source: R, forum: &str) -> Result<Ingested> {
    let first = loop {
        let buf = source.fill_buf()?;
        match buf.iter().position(|b| !b.is_ascii_whitespace()) {
            Some(pos) => break Some(buf[pos]),
            None if buf.is_empty() => break None,
            None => {
                let len = buf.len();
                source.consume(len);
            }
        }
    };
    let ingested = match first {
        Some(b'<') => ingest_posts_xml(source, forum)?,
        Some(_) => ingest_jsonl(source)?,
        None => Ingested::default(),
    };
    if ingested.threads.is_empty() {
        return Err(Error::EmptyCorpus { skipped: ingested.skipped });
    }
    Ok(ingested)
}

/// Opens `path` and ingests it. For XML dumps the forum name is the name
/// of the directory holding the file (as in the per-site dump layout).
pub fn ingest_path(path: &Path) -> Result<Ingested> {
    let file = File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let forum = path
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|s| s.to_str())
        .unwrap_or("unknown")
        .to_string();
    ingest(BufReader::new(file), &forum)
}

pub fn ingest_jsonl<R: BufRead>(source: R) -> Result<Ingested> {
    let mut out = Ingested::default();
    let mut seen = HashSet::new();
    for (lineno, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<QuestionThread>(&line) {
            Ok(t) if !t.answers.is_empty() && seen.insert(t.thread_id.clone()) => out.threads.push(t),
            Ok(t) => {
                log::debug!("line {}: thread {} empty or duplicate, skipped", lineno + 1, t.thread_id);
                out.skipped += 1;
            }
            Err(e) => {
                log::debug!("line {}: malformed record skipped: {e}", lineno + 1);
                out.skipped += 1;
            }
        }
    }
    Ok(out)
}

#[derive(Default)]
struct Question {
    title: String,
    body: String,
    tags: Vec<String>,
}

/// Reads the `<row .../>` elements of a StackExchange `Posts.xml`.
/// Questions without answers and answers without a known parent count as
/// skipped records.
pub fn ingest_posts_xml<R: BufRead>(source: R, forum: &str) -> Result<Ingested> {
    let mut reader = Reader::from_reader(source);
    let mut buf = Vec::new();
    let mut question_order: Vec<String> = Vec::new();
    let mut questions: HashMap<String, Question> = HashMap::new();
    let mut answers: BTreeMap<String, Vec<Answer>> = BTreeMap::new();
    let mut skipped = 0usize;

    loop {
        let event = match reader.read_event_into(&mut buf) {
            Ok(ev) => ev,
            Err(e) => {
                log::warn!("xml error at byte {}: {e}", reader.buffer_position());
                skipped += 1;
                break;
            }
        };
        match event {
            Event::Empty(ref e) | Event::Start(ref e) if e.name().as_ref() == b"row" => {
                let mut attrs: HashMap<String, String> = HashMap::new();
                let mut bad = false;
                for a in e.attributes() {
                    match a {
                        Ok(a) => match a.unescape_value() {
                            Ok(v) => {
                                attrs.insert(String::from_utf8_lossy(a.key.as_ref()).into_owned(), v.into_owned());
                            }
                            Err(_) => bad = true,
                        },
                        Err(_) => bad = true,
                    }
                }
                let id = attrs.get("Id").cloned();
                match (bad, id, attrs.get("PostTypeId").map(String::as_str)) {
                    (false, Some(id), Some("1")) => {
                        if questions.contains_key(&id) {
                            skipped += 1;
                            continue;
                        }
                        question_order.push(id.clone());
                        questions.insert(
                            id,
                            Question {
                                title: attrs.get("Title").cloned().unwrap_or_default(),
                                body: strip_html(attrs.get("Body").map(String::as_str).unwrap_or("")),
                                tags: parse_tags(attrs.get("Tags").map(String::as_str).unwrap_or("")),
                            },
                        );
                    }
                    (false, Some(id), Some("2")) => {
                        let parent = attrs.get("ParentId").cloned();
                        let score = attrs.get("Score").and_then(|s| s.parse::<i64>().ok());
                        match (parent, score) {
                            (Some(parent), Some(score)) => {
                                let body = strip_html(attrs.get("Body").map(String::as_str).unwrap_or(""));
                                answers.entry(parent).or_default().push(Answer::new(id, body, score));
                            }
                            _ => skipped += 1,
                        }
                    }
                    // Other post types (wiki, tag excerpts...) are not records we model.
                    (false, Some(_), Some(_)) => {}
                    _ => skipped += 1,
                }
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }

    let mut threads = Vec::new();
    for qid in question_order {
        let q = questions.remove(&qid).unwrap_or_default();
        match answers.remove(&qid) {
            Some(ans) if !ans.is_empty() => threads.push(QuestionThread {
                thread_id: qid,
                forum: forum.to_string(),
                title: q.title,
                question_body: q.body,
                tags: q.tags,
                answers: ans,
            }),
            _ => skipped += 1,
        }
    }
    skipped += answers.values().map(Vec::len).sum::<usize>();
    Ok(Ingested { threads, skipped })
}

/// Tags come either as `<a><b>` or `|a|b|`.
fn parse_tags(raw: &str) -> Vec<String> {
    raw.split(['<', '>', '|'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Drops HTML markup from a post body, decodes the handful of entities
/// StackExchange emits, and collapses whitespace.
pub fn strip_html(html: &str) -> String {
    let mut out = String::with_capacity(html.len());
    let mut in_tag = false;
    for c in html.chars() {
        match c {
            '<' => {
                in_tag = true;
                out.push(' ');
            }
            '>' if in_tag => in_tag = false,
            _ if !in_tag => out.push(c),
            _ => {}
        }
    }
    let decoded = out
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&nbsp;", " ")
        .replace("&amp;", "&");
    decoded.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Reads a forum allow-list: one forum name per line, `#` comments allowed.
pub fn read_allow_list<R: Read>(source: R) -> Result<HashSet<String>> {
    let mut set = HashSet::new();
    for line in BufReader::new(source).lines() {
        let line = line?;
        let name = line.split('#').next().unwrap_or("").trim();
        if !name.is_empty() {
            set.insert(name.to_string());
        }
    }
    Ok(set)
}
