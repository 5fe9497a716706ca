pub mod augment;
pub mod filter;
pub mod fixture_gen;
pub mod reward_eval;
pub mod rl_demo;
pub mod stats;

use std::sync::Arc;

use anyhow::{Context, Result};
use persumm_core::scoring::{Backend, Scorer};

use crate::config::{require, RunConfig};

/// Opens the score and embedding backends, sharing one instance when both
/// flags name the same source.
pub fn open_backends(cfg: &RunConfig) -> Result<(Arc<dyn Scorer>, Arc<dyn Scorer>)> {
    let scores = require(&cfg.scores, "scores")?;
    let embeddings = require(&cfg.embeddings, "embeddings")?;
    let open = |spec: &str| -> Result<Arc<dyn Scorer>> {
        Backend::parse(spec)?.open().with_context(|| format!("opening backend {spec}"))
    };
    let s = open(scores)?;
    let e = if embeddings == scores { s.clone() } else { open(embeddings)? };
    Ok((s, e))
}
