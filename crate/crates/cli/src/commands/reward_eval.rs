use anyhow::{bail, ensure, Context, Result};
use persumm_core::augment::DEFAULT_THRESHOLD;
use persumm_core::rewards::{reward_bundles, PremiseSet};
use persumm_core::scoring::Scorer;
use persumm_core::textproc::segment;
use serde::Deserialize;
use serde_json::json;

use super::open_backends;
use crate::config::{require, RunConfig};
use crate::io::{emit_report, read_jsonl};

/// A list of sentences, or one text to be segmented.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Sentences {
    List(Vec<String>),
    Text(String),
}

impl Sentences {
    fn into_vec(self) -> Vec<String> {
        match self {
            Sentences::List(v) => v,
            Sentences::Text(t) => segment(&t),
        }
    }
}

#[derive(Debug, Deserialize)]
struct SummaryRecord {
    thread_id: Option<String>,
    #[serde(alias = "bullets")]
    summary: Sentences,
}

#[derive(Debug, Deserialize)]
struct InputRecord {
    thread_id: Option<String>,
    question: Option<String>,
    input: Sentences,
}

pub fn run(cfg: &mut RunConfig) -> Result<()> {
    let premises = *cfg.premises.get_or_insert(PremiseSet::All);
    if premises == PremiseSet::RelevantOnly {
        cfg.threshold.get_or_insert(DEFAULT_THRESHOLD);
    }
    let summaries: Vec<SummaryRecord> = read_jsonl(require(&cfg.summaries, "summaries")?)?;
    let inputs: Vec<InputRecord> = read_jsonl(require(&cfg.inputs, "inputs")?)?;
    ensure!(
        summaries.len() == inputs.len(),
        "{} summaries but {} inputs; records pair up by line",
        summaries.len(),
        inputs.len()
    );
    let (scores, embeddings) = open_backends(cfg)?;

    let mut ids = Vec::with_capacity(summaries.len());
    let mut examples = Vec::with_capacity(summaries.len());
    for (i, (s, inp)) in summaries.into_iter().zip(inputs).enumerate() {
        let id = match (s.thread_id, inp.thread_id) {
            (Some(a), Some(b)) if a != b => bail!("line {}: summary {a} paired with input {b}", i + 1),
            (a, b) => a.or(b).unwrap_or_else(|| format!("line-{}", i + 1)),
        };
        let mut input = inp.input.into_vec();
        if premises == PremiseSet::RelevantOnly {
            let question = inp.question.with_context(|| format!("{id}: relevant premises need a question"))?;
            let threshold = cfg.threshold.unwrap_or(DEFAULT_THRESHOLD);
            let probs = scores.relevance(&question, &input).with_context(|| format!("{id}: relevance"))?;
            input = input.into_iter().zip(probs).filter(|(_, p)| *p >= threshold).map(|(s, _)| s).collect();
            ensure!(!input.is_empty(), "{id}: no input sentence reaches the relevance threshold");
        }
        ids.push(id);
        examples.push((s.summary.into_vec(), input));
    }

    let bundles = reward_bundles(&examples, &*scores, &*embeddings)?;
    let n = bundles.len().max(1) as f64;
    let mean = |f: fn(&persumm_core::rewards::RewardBundle) -> f64| bundles.iter().map(f).sum::<f64>() / n;
    let per_example: Vec<_> = ids
        .iter()
        .zip(&examples)
        .zip(&bundles)
        .map(|((id, (summary, input)), b)| {
            json!({
                "thread_id": id,
                "summary_sentences": summary.len(),
                "premises": input.len(),
                "nli": b.nli,
                "semantic_area_raw": b.semantic_area_raw,
                "semantic_area": b.semantic_area,
            })
        })
        .collect();
    let report = json!({
        "config": cfg.echo(),
        "count": bundles.len(),
        "means": {
            "nli": mean(|b| b.nli),
            "semantic_area_raw": mean(|b| b.semantic_area_raw),
            "semantic_area": mean(|b| b.semantic_area),
        },
        "examples": per_example,
    });
    emit_report(cfg.report.as_deref(), &report)
}
