use anyhow::{ensure, Result};
use persumm_core::augment::{run_pipeline, PipelineConfig, DEFAULT_CUTOFF, DEFAULT_THRESHOLD};
use persumm_core::corpus::ingest_path;
use serde_json::json;

use super::open_backends;
use crate::config::{require, RunConfig};
use crate::io::{emit_report, write_jsonl};

pub fn run(cfg: &mut RunConfig) -> Result<()> {
    let cutoff = *cfg.cutoff.get_or_insert(DEFAULT_CUTOFF);
    let threshold = *cfg.threshold.get_or_insert(DEFAULT_THRESHOLD);
    ensure!(cutoff > 0.0 && cutoff.is_finite(), "--cutoff must be positive, got {cutoff}");
    ensure!((0.0..=1.0).contains(&threshold), "--threshold must be in [0, 1], got {threshold}");
    let jobs = cfg.jobs.unwrap_or(0);

    let corpus = ingest_path(require(&cfg.input, "in")?)?;
    let (scores, embeddings) = open_backends(cfg)?;
    let examples = run_pipeline(&corpus.threads, &*scores, &*embeddings, &PipelineConfig { cutoff, threshold, jobs })?;
    log::info!("{} silver examples from {} threads", examples.len(), corpus.threads.len());
    write_jsonl(require(&cfg.output, "out")?, &examples)?;

    if let Some(path) = &cfg.report {
        let report = json!({
            "config": cfg.echo(),
            "threads": corpus.threads.len(),
            "skipped_records": corpus.skipped,
            "examples": examples.len(),
            "bullets": examples.iter().map(|e| e.summary_bullets.len()).sum::<usize>(),
            "input_sentences": examples.iter().map(|e| e.input_sentences.len()).sum::<usize>(),
        });
        emit_report(Some(path), &report)?;
    }
    Ok(())
}
