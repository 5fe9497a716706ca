//! Boundary to neural scoring: sentence embeddings, entailment and
//! question/sentence relevance, served either from a hash-keyed fixture
//! file or a JSON-over-HTTP sidecar.
//!
//! Wire protocol (version 1):
//!
//! ```text
//! POST /v1/embed     {"texts": [...]}                      -> {"vectors": [[...]]}
//! POST /v1/entail    {"pairs": [["premise","claim"], ...]} -> {"probs": [...]}
//! POST /v1/relevance {"question": str, "sentences": [...]} -> {"probs": [...]}
//! GET  /v1/health                                          -> {"status": "ok", "dim": D}
//! ```
//!
//! Errors are `{"error": str}` with a non-200 status.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FIXTURE_VERSION: u32 = 1;
/// Largest payload sent in one HTTP request; bigger requests are chunked.
pub const MAX_BATCH: usize = 64;

/// Stable text key: lowercase, whitespace-collapsed, 64-bit FNV-1a, hex.
pub fn text_hash(text: &str) -> String {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let normalized = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    let mut h = OFFSET;
    for b in normalized.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    format!("{h:016x}")
}

pub fn pair_key(a: &str, b: &str) -> String {
    format!("{}|{}", text_hash(a), text_hash(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScoreRequest {
    Embed { texts: Vec<String> },
    Entail { pairs: Vec<(String, String)> },
    Relevance { question: String, sentences: Vec<String> },
}

impl ScoreRequest {
    pub fn validate(&self) -> Result<()> {
        let empty = |s: &String| s.trim().is_empty();
        let bad = match self {
            ScoreRequest::Embed { texts } => texts.is_empty() || texts.iter().any(empty),
            ScoreRequest::Entail { pairs } => pairs.is_empty() || pairs.iter().any(|(p, c)| empty(p) || empty(c)),
            ScoreRequest::Relevance { question, sentences } => {
                empty(question) || sentences.is_empty() || sentences.iter().any(empty)
            }
        };
        if bad {
            return Err(Error::InvalidArgument("score request payload must be non-empty texts".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScoreResponse {
    Vectors(Vec<Vec<f64>>),
    Probs(Vec<f64>),
}

/// A scoring capability. Implementations return one result per input,
/// in input order.
pub trait Scorer: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
    /// Entailment probability of each `(premise, claim)` pair.
    fn entail(&self, pairs: &[(String, String)]) -> Result<Vec<f64>>;
    fn relevance(&self, question: &str, sentences: &[String]) -> Result<Vec<f64>>;
    /// Fails when the backend cannot serve requests.
    fn health(&self) -> Result<()>;
}

impl<S: Scorer + ?Sized> Scorer for Arc<S> {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        (**self).embed(texts)
    }
    fn entail(&self, pairs: &[(String, String)]) -> Result<Vec<f64>> {
        (**self).entail(pairs)
    }
    fn relevance(&self, question: &str, sentences: &[String]) -> Result<Vec<f64>> {
        (**self).relevance(question, sentences)
    }
    fn health(&self) -> Result<()> {
        (**self).health()
    }
}

pub fn score<S: Scorer + ?Sized>(req: &ScoreRequest, backend: &S) -> Result<ScoreResponse> {
    req.validate()?;
    Ok(match req {
        ScoreRequest::Embed { texts } => ScoreResponse::Vectors(backend.embed(texts)?),
        ScoreRequest::Entail { pairs } => ScoreResponse::Probs(backend.entail(pairs)?),
        ScoreRequest::Relevance { question, sentences } => {
            ScoreResponse::Probs(backend.relevance(question, sentences)?)
        }
    })
}

/// Precomputed scores keyed by [`text_hash`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFixture {
    pub version: u32,
    pub dim: usize,
    #[serde(default)]
    pub embeddings: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub entailments: BTreeMap<String, f64>,
    #[serde(default)]
    pub relevance: BTreeMap<String, f64>,
}

impl ScoreFixture {
    pub fn new(dim: usize) -> Self {
        Self {
            version: FIXTURE_VERSION,
            dim,
            embeddings: BTreeMap::new(),
            entailments: BTreeMap::new(),
            relevance: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != FIXTURE_VERSION {
            return Err(Error::Schema(format!("unsupported fixture version {}", self.version)));
        }
        if self.dim == 0 {
            return Err(Error::Schema("dim must be >= 1".into()));
        }
        for (key, v) in &self.embeddings {
            if v.len() != self.dim {
                return Err(Error::Schema(format!(
                    "embedding {key} has length {}, expected {}",
                    v.len(),
                    self.dim
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Schema(format!("embedding {key} has non-finite values")));
            }
        }
        for (name, map) in [("entailments", &self.entailments), ("relevance", &self.relevance)] {
            for (key, p) in map {
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::Schema(format!("{name} {key} = {p} outside [0, 1]")));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

pub fn load_fixture(path: &Path) -> Result<ScoreFixture> {
    let file = File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let fixture: ScoreFixture = serde_json::from_reader(BufReader::new(file))?;
    fixture.validate()?;
    Ok(fixture)
}

impl Scorer for ScoreFixture {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        texts
            .iter()
            .map(|t| {
                let key = text_hash(t);
                self.embeddings.get(&key).cloned().ok_or(Error::MissingKey { kind: "embedding", key })
            })
            .collect()
    }

    fn entail(&self, pairs: &[(String, String)]) -> Result<Vec<f64>> {
        pairs
            .iter()
            .map(|(p, c)| {
                let key = pair_key(p, c);
                self.entailments.get(&key).copied().ok_or(Error::MissingKey { kind: "entailment", key })
            })
            .collect()
    }

    fn relevance(&self, question: &str, sentences: &[String]) -> Result<Vec<f64>> {
        sentences
            .iter()
            .map(|s| {
                let key = pair_key(question, s);
                self.relevance.get(&key).copied().ok_or(Error::MissingKey { kind: "relevance", key })
            })
            .collect()
    }

    fn health(&self) -> Result<()> {
        Ok(())
    }
}

/// Client for a scoring sidecar speaking the v1 wire protocol.
pub struct HttpScorer {
    base: String,
    agent: ureq::Agent,
    retries: u32,
}

#[derive(Serialize)]
struct EmbedBody<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedReply {
    vectors: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct EntailBody<'a> {
    pairs: Vec<[&'a str; 2]>,
}

#[derive(Serialize)]
struct RelevanceBody<'a> {
    question: &'a str,
    sentences: &'a [String],
}

#[derive(Deserialize)]
struct ProbsReply {
    probs: Vec<f64>,
}

#[derive(Deserialize)]
struct HealthReply {
    status: String,
}

impl HttpScorer {
    pub fn new(endpoint: &str) -> Self {
        Self {
            base: endpoint.trim_end_matches('/').to_string(),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(120)).build(),
            retries: 2,
        }
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    fn post<B: Serialize, T: for<'de> Deserialize<'de>>(&self, route: &str, body: &B) -> Result<T> {
        let url = format!("{}{route}", self.base);
        let mut last = String::new();
        for attempt in 0..=self.retries {
            match self.agent.post(&url).send_json(body) {
                Ok(resp) => {
                    return resp.into_json::<T>().map_err(|e| Error::Transport {
                        retries: attempt,
                        message: format!("malformed response from {url}: {e}"),
                    })
                }
                Err(ureq::Error::Status(code, resp)) => {
                    let detail = resp.into_string().unwrap_or_default();
                    let message = serde_json::from_str::<serde_json::Value>(&detail)
                        .ok()
                        .and_then(|v| v.get("error").and_then(|e| e.as_str()).map(str::to_string))
                        .unwrap_or(detail);
                    last = format!("{url} returned {code}: {message}");
                    // Client errors will not succeed on retry.
                    if code < 500 {
                        return Err(Error::Transport { retries: attempt, message: last });
                    }
                }
                Err(e) => last = format!("{url}: {e}"),
            }
            log::warn!("scoring request failed (attempt {}): {last}", attempt + 1);
        }
        Err(Error::Transport { retries: self.retries, message: last })
    }

    fn check_len(&self, got: usize, want: usize) -> Result<()> {
        if got != want {
            return Err(Error::Transport {
                retries: 0,
                message: format!("sidecar returned {got} results for {want} inputs"),
            });
        }
        Ok(())
    }
}

impl Scorer for HttpScorer {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(MAX_BATCH) {
            let reply: EmbedReply = self.post("/v1/embed", &EmbedBody { texts: chunk })?;
            self.check_len(reply.vectors.len(), chunk.len())?;
            out.extend(reply.vectors);
        }
        Ok(out)
    }

    fn entail(&self, pairs: &[(String, String)]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(MAX_BATCH) {
            let body = EntailBody { pairs: chunk.iter().map(|(p, c)| [p.as_str(), c.as_str()]).collect() };
            let reply: ProbsReply = self.post("/v1/entail", &body)?;
            self.check_len(reply.probs.len(), chunk.len())?;
            out.extend(reply.probs);
        }
        Ok(out)
    }

    fn relevance(&self, question: &str, sentences: &[String]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(sentences.len());
        for chunk in sentences.chunks(MAX_BATCH) {
            let reply: ProbsReply = self.post("/v1/relevance", &RelevanceBody { question, sentences: chunk })?;
            self.check_len(reply.probs.len(), chunk.len())?;
            out.extend(reply.probs);
        }
        Ok(out)
    }

    fn health(&self) -> Result<()> {
        let url = format!("{}/v1/health", self.base);
        let reply: HealthReply = self
            .agent
            .get(&url)
            .call()
            .map_err(|e| Error::Transport { retries: 0, message: format!("{url}: {e}") })?
            .into_json()
            .map_err(|e| Error::Transport { retries: 0, message: format!("{url}: {e}") })?;
        if reply.status != "ok" {
            return Err(Error::Transport { retries: 0, message: format!("{url} reports status {}", reply.status) });
        }
        Ok(())
    }
}

/// Deterministic offline scorer built from surface features only:
/// signed feature-hashed bag-of-words embeddings, token-coverage
/// entailment and a content/overlap relevance heuristic. Used to build
/// fixtures when no model sidecar is available.
#[derive(Debug, Clone)]
pub struct LexicalScorer {
    pub dim: usize,
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "if", "then", "so", "of", "to", "in", "on", "at", "for", "with",
    "by", "from", "as", "is", "are", "was", "were", "be", "been", "being", "it", "its", "this", "that",
    "these", "those", "i", "you", "he", "she", "we", "they", "me", "my", "your", "our", "their", "them",
    "do", "does", "did", "have", "has", "had", "not", "no", "can", "will", "would", "should", "could",
    "just", "also", "very", "really", "there", "what", "which", "who", "how", "when", "where", "why",
    "all", "any", "some", "more", "most", "than", "too", "up", "out", "about", "into", "over", "after",
    "before", "again", "only", "own", "same", "other", "such", "each", "few", "both", "am", "i'm", "it's",
    "don't", "you're", "get", "got", "one", "much", "many", "may", "might", "must", "well", "even",
];

impl LexicalScorer {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    /// Lowercased alphanumeric words minus stopwords.
    pub fn content_tokens(text: &str) -> Vec<String> {
        text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
            .map(|w| w.trim_matches('\'').to_lowercase())
            .filter(|w| !w.is_empty() && !STOPWORDS.contains(&w.as_str()))
            .collect()
    }

    fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let toks = Self::content_tokens(text);
        let toks = if toks.is_empty() { vec![text.trim().to_lowercase()] } else { toks };
        for t in &toks {
            let h = u64::from_str_radix(&text_hash(t), 16).unwrap_or(0);
            let idx = (h % self.dim as u64) as usize;
            let sign = if (h >> 32) & 1 == 0 { 1.0 } else { -1.0 };
            v[idx] += sign;
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
        } else {
            v[0] = 1.0;
        }
        v
    }
}

impl Scorer for LexicalScorer {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn entail(&self, pairs: &[(String, String)]) -> Result<Vec<f64>> {
        Ok(pairs
            .iter()
            .map(|(premise, claim)| {
                if text_hash(premise) == text_hash(claim) {
                    return 0.98;
                }
                let p: std::collections::HashSet<String> = Self::content_tokens(premise).into_iter().collect();
                let c = Self::content_tokens(claim);
                if c.is_empty() {
                    return 0.5;
                }
                let covered = c.iter().filter(|t| p.contains(*t)).count() as f64 / c.len() as f64;
                0.02 + 0.9 * covered
            })
            .collect())
    }

    fn relevance(&self, question: &str, sentences: &[String]) -> Result<Vec<f64>> {
        let q: std::collections::HashSet<String> = Self::content_tokens(question).into_iter().collect();
        Ok(sentences
            .iter()
            .map(|s| {
                let toks = Self::content_tokens(s);
                let overlap = toks.iter().any(|t| q.contains(t));
                (0.15 * toks.len() as f64 + if overlap { 0.3 } else { 0.0 }).min(1.0)
            })
            .collect())
    }

    fn health(&self) -> Result<()> {
        Ok(())
    }
}

/// Where scores come from, as named on the command line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backend {
    Fixture(std::path::PathBuf),
    Service(String),
    Lexical(usize),
}

impl Backend {
    /// `http(s)://...` is a service, `lexical` or `lexical:DIM` the offline
    /// scorer, anything else a fixture path.
    pub fn parse(spec: &str) -> Result<Self> {
        if spec.starts_with("http://") || spec.starts_with("https://") {
            Ok(Backend::Service(spec.to_string()))
        } else if let Some(rest) = spec.strip_prefix("lexical") {
            let dim = match rest.strip_prefix(':') {
                Some(d) => d.parse().map_err(|_| Error::InvalidArgument(format!("bad lexical dim in {spec}")))?,
                None if rest.is_empty() => 64,
                None => return Ok(Backend::Fixture(spec.into())),
            };
            Ok(Backend::Lexical(dim))
        } else {
            Ok(Backend::Fixture(spec.into()))
        }
    }

    pub fn open(&self) -> Result<Arc<dyn Scorer>> {
        Ok(match self {
            Backend::Fixture(p) => Arc::new(load_fixture(p)?),
            Backend::Service(url) => Arc::new(HttpScorer::new(url)),
            Backend::Lexical(dim) => Arc::new(LexicalScorer::new(*dim)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_fnv1a_of_normalized_text() {
        // FNV-1a of the empty string is the offset basis.
        assert_eq!(text_hash(""), "cbf29ce484222325");
        // Published FNV-1a 64 test vector for "a".
        assert_eq!(text_hash("a"), "af63dc4c8601ec8c");
        assert_eq!(text_hash("  Hello\n  World "), text_hash("hello world"));
        assert_ne!(text_hash("hello world"), text_hash("helloworld"));
    }

    fn fixture() -> ScoreFixture {
        let mut f = ScoreFixture::new(2);
        for (i, t) in ["one", "two", "three"].iter().enumerate() {
            f.embeddings.insert(text_hash(t), vec![i as f64, 1.0]);
        }
        f.entailments.insert(pair_key("one", "two"), 0.25);
        f.relevance.insert(pair_key("q", "one"), 0.75);
        f
    }

    #[test]
    fn fixture_lookup_in_request_order() {
        let f = fixture();
        let texts: Vec<String> = ["three", "one", "two"].iter().map(|s| s.to_string()).collect();
        match score(&ScoreRequest::Embed { texts }, &f).unwrap() {
            ScoreResponse::Vectors(v) => {
                assert_eq!(v.len(), 3);
                assert_eq!(v[0], vec![2.0, 1.0]);
                assert_eq!(v[1], vec![0.0, 1.0]);
                assert!(v.iter().all(|x| x.len() == 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fixture_miss_names_hashes() {
        let f = fixture();
        let err = f.entail(&[("two".into(), "one".into())]).unwrap_err();
        match err {
            Error::MissingKey { kind, key } => {
                assert_eq!(kind, "entailment");
                assert_eq!(key, pair_key("two", "one"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn requests_must_be_non_empty() {
        let f = fixture();
        assert!(score(&ScoreRequest::Embed { texts: vec![] }, &f).is_err());
        assert!(score(&ScoreRequest::Embed { texts: vec![" ".into()] }, &f).is_err());
        assert!(score(&ScoreRequest::Relevance { question: "q".into(), sentences: vec![] }, &f).is_err());
    }

    #[test]
    fn fixture_validation() {
        let mut f = fixture();
        f.validate().unwrap();
        f.embeddings.insert("deadbeef".into(), vec![1.0]);
        assert!(matches!(f.validate(), Err(Error::Schema(m)) if m.contains("deadbeef")));
        let mut f = fixture();
        f.entailments.insert("x|y".into(), 1.5);
        assert!(f.validate().is_err());
        assert!(ScoreFixture::new(8).validate().is_ok());
    }

    #[test]
    fn backend_parsing() {
        assert_eq!(Backend::parse("http://localhost:1/").unwrap(), Backend::Service("http://localhost:1/".into()));
        assert_eq!(Backend::parse("lexical").unwrap(), Backend::Lexical(64));
        assert_eq!(Backend::parse("lexical:16").unwrap(), Backend::Lexical(16));
        assert_eq!(Backend::parse("lexicon.json").unwrap(), Backend::Fixture("lexicon.json".into()));
        assert_eq!(Backend::parse("fx.json").unwrap(), Backend::Fixture("fx.json".into()));
    }

    #[test]
    fn lexical_scorer_shapes() {
        let s = LexicalScorer::new(16);
        let v = s.embed(&["The cat sat.".into()]).unwrap();
        assert_eq!(v[0].len(), 16);
        let n: f64 = v[0].iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
        let e = s.entail(&[("A man sleeps".into(), "A man sleeps".into())]).unwrap();
        assert!(e[0] > 0.9);
        let r = s.relevance("Which credit card?", &["Thanks!".into(), "Get a secured credit card first.".into()]).unwrap();
        assert!(r[0] < 0.5 && r[1] > 0.5);
    }
}
