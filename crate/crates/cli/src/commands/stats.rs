use anyhow::Result;
use persumm_core::textproc::{dataset_stats, TextPair};
use serde_json::json;

use crate::config::{require, RunConfig};
use crate::io::{emit_report, read_jsonl};

pub fn run(cfg: &mut RunConfig) -> Result<()> {
    let pairs: Vec<TextPair> = read_jsonl(require(&cfg.pairs, "pairs")?)?;
    let stats = dataset_stats(&pairs)?;
    emit_report(cfg.report.as_deref(), &json!({ "config": cfg.echo(), "stats": stats }))
}
