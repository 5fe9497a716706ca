use std::collections::BTreeMap;
use std::fs::File;

use anyhow::{bail, Context, Result};
use persumm_core::corpus::{drop_negative_answers, ingest_path, passes_filter, read_allow_list, RejectReason};
use serde_json::json;

use crate::config::{require, RunConfig};
use crate::io::{emit_report, write_jsonl};

pub fn run(cfg: &mut RunConfig) -> Result<()> {
    let policy = match (&cfg.filter, cfg.policy) {
        (Some(p), _) => p.clone(),
        (None, Some(name)) => name.constants(),
        (None, None) => bail!("missing --policy (flag or config file)"),
    };
    policy.validate()?;
    cfg.filter = Some(policy.clone());

    let input = require(&cfg.input, "in")?;
    let ingested = ingest_path(input)?;
    let allowed = match &cfg.forums {
        Some(p) => Some(read_allow_list(File::open(p).with_context(|| format!("opening {}", p.display()))?)?),
        None => None,
    };

    let mut rejected: BTreeMap<RejectReason, usize> = [
        RejectReason::TooFewAnswers,
        RejectReason::LongestAnswer,
        RejectReason::TotalLength,
        RejectReason::AverageLength,
    ]
    .into_iter()
    .map(|r| (r, 0))
    .collect();
    let mut excluded_forum = 0;
    let mut accepted = Vec::new();
    let total = ingested.threads.len();
    for thread in ingested.threads {
        if allowed.as_ref().is_some_and(|a| !a.contains(&thread.forum)) {
            excluded_forum += 1;
            continue;
        }
        let thread = if policy.require_nonneg_score { drop_negative_answers(thread) } else { thread };
        match passes_filter(&thread, &policy) {
            Ok(()) => accepted.push(thread),
            Err(reason) => *rejected.entry(reason).or_default() += 1,
        }
    }
    log::info!("{} of {total} threads accepted", accepted.len());

    write_jsonl(require(&cfg.output, "out")?, &accepted)?;
    let report = json!({
        "config": cfg.echo(),
        "threads": total,
        "skipped_records": ingested.skipped,
        "excluded_forum": excluded_forum,
        "accepted": accepted.len(),
        "rejected": rejected,
    });
    emit_report(Some(require(&cfg.report, "report")?), &report)
}
