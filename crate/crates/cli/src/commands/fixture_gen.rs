use std::collections::BTreeMap;

use anyhow::{bail, ensure, Context, Result};
use persumm_core::corpus::ingest_path;
use persumm_core::scoring::{pair_key, text_hash, Backend, ScoreFixture};
use persumm_core::textproc::segment_thread;
use serde::Deserialize;
use serde_json::json;

use crate::config::{require, RunConfig};
use crate::io::{emit_report, read_jsonl, read_lines};

#[derive(Debug, Deserialize)]
struct RelevanceRequest {
    question: String,
    sentences: Vec<String>,
}

/// Unique requests in first-seen order.
#[derive(Default)]
struct Requests {
    texts: BTreeMap<String, String>,
    text_order: Vec<String>,
    pairs: BTreeMap<String, (String, String)>,
    pair_order: Vec<String>,
    relevance: Vec<RelevanceRequest>,
}

impl Requests {
    fn text(&mut self, t: &str) {
        let key = text_hash(t);
        if !self.texts.contains_key(&key) {
            self.texts.insert(key.clone(), t.to_string());
            self.text_order.push(key);
        }
    }

    fn pair(&mut self, premise: &str, claim: &str) {
        let key = pair_key(premise, claim);
        if !self.pairs.contains_key(&key) {
            self.pairs.insert(key.clone(), (premise.to_string(), claim.to_string()));
            self.pair_order.push(key);
        }
    }
}

pub fn run(cfg: &mut RunConfig) -> Result<()> {
    let endpoint = require(&cfg.endpoint, "endpoint")?.clone();
    let mut req = Requests::default();

    if let Some(p) = &cfg.texts {
        read_lines(p)?.iter().for_each(|t| req.text(t));
    }
    if let Some(p) = &cfg.pairs {
        let pairs: Vec<(String, String)> = read_jsonl(p)?;
        pairs.iter().for_each(|(a, b)| req.pair(a, b));
    }
    if let Some(p) = &cfg.relevance {
        req.relevance.extend(read_jsonl::<RelevanceRequest>(p)?);
    }
    // A thread corpus expands to everything augment, reward-eval and
    // rl-demo ask for: sentence embeddings, question relevance and every
    // within-thread sentence pair.
    if let Some(p) = &cfg.threads {
        for thread in ingest_path(p)?.threads {
            let sentences: Vec<String> = segment_thread(&thread).into_iter().map(|s| s.text).collect();
            for s in &sentences {
                req.text(s);
            }
            for premise in &sentences {
                for claim in &sentences {
                    req.pair(premise, claim);
                }
            }
            req.relevance.push(RelevanceRequest { question: thread.question_text(), sentences });
        }
    }
    ensure!(!req.text_order.is_empty(), "fixture-gen needs at least one text (--texts or --threads) to fix the embedding dim");

    let backend = Backend::parse(&endpoint)?.open().with_context(|| format!("opening {endpoint}"))?;
    backend.health()?;

    let texts: Vec<String> = req.text_order.iter().map(|k| req.texts[k].clone()).collect();
    let vectors = backend.embed(&texts)?;
    let dim = vectors[0].len();
    let mut fixture = ScoreFixture::new(dim);
    for (k, v) in req.text_order.iter().zip(vectors) {
        fixture.embeddings.insert(k.clone(), v);
    }

    let pairs: Vec<(String, String)> = req.pair_order.iter().map(|k| req.pairs[k].clone()).collect();
    if !pairs.is_empty() {
        for (k, p) in req.pair_order.iter().zip(backend.entail(&pairs)?) {
            fixture.entailments.insert(k.clone(), p);
        }
    }
    for r in &req.relevance {
        if r.sentences.is_empty() {
            continue;
        }
        for (s, p) in r.sentences.iter().zip(backend.relevance(&r.question, &r.sentences)?) {
            fixture.relevance.insert(pair_key(&r.question, s), p);
        }
    }
    if let Err(e) = fixture.validate() {
        bail!("backend returned an invalid fixture: {e}");
    }
    fixture.save(require(&cfg.output, "out")?)?;

    let report = json!({
        "config": cfg.echo(),
        "dim": dim,
        "embeddings": fixture.embeddings.len(),
        "entailments": fixture.entailments.len(),
        "relevance": fixture.relevance.len(),
    });
    emit_report(cfg.report.as_deref(), &report)
}
