use anyhow::{ensure, Context, Result};
use persumm_core::augment::SilverExample;
use persumm_core::rewards::{RewardKind, RewardSchedule};
use persumm_core::rltrain::{collect_traces, grad_check, ml_step, train_step, FrozenSample, StepDiagnostics};
use persumm_core::seed::stream_rng;
use persumm_core::{Policy, Task, Weights};
use serde_json::json;

use super::open_backends;
use crate::config::{require, RunConfig};
use crate::io::{emit_report, read_jsonl};

pub const DEFAULT_STEPS: usize = 200;
pub const DEFAULT_LR: f64 = 0.5;
pub const DEFAULT_WARMUP: usize = 100;
/// Steps averaged at each end of the curve for the improvement check.
pub const WINDOW: usize = 20;

pub fn run(cfg: &mut RunConfig) -> Result<()> {
    let seed = *cfg.seed.get_or_insert(0);
    let steps = *cfg.steps.get_or_insert(DEFAULT_STEPS);
    let warmup = *cfg.warmup.get_or_insert(DEFAULT_WARMUP);
    let lr = *cfg.lr.get_or_insert(DEFAULT_LR);
    let gammas = *cfg.gammas.get_or_insert_with(Weights::default);
    ensure!(lr.is_finite() && lr >= 0.0, "--lr must be a non-negative number, got {lr}");

    let silver: Vec<SilverExample> = read_jsonl(require(&cfg.silver, "silver")?)?;
    ensure!(!silver.is_empty(), "no silver examples to train on");
    let (scores, embeddings) = open_backends(cfg)?;
    let tasks: Vec<Task> = silver
        .iter()
        .map(|ex| Task::from_silver(ex, &*scores, &*embeddings).with_context(|| format!("task {}", ex.thread_id)))
        .collect::<Result<_>>()?;
    let batch = (*cfg.batch.get_or_insert(tasks.len())).clamp(1, tasks.len());

    // Start from a policy fitted to the silver bullets, as reward
    // fine-tuning would start from a model trained on the standard loss.
    let mut policy = Policy::zeros(tasks[0].features.dim());
    let mut nll = Vec::with_capacity(warmup);
    for _ in 0..warmup {
        nll.push(ml_step(&mut policy, &tasks, lr)?);
    }

    let mut schedule = RewardSchedule::default();
    let mut rollouts = stream_rng(seed, "rollouts");
    let mut batches = stream_rng(seed, "minibatch");
    let mut curve: Vec<StepDiagnostics> = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut idx = rand::seq::index::sample(&mut batches, tasks.len(), batch).into_vec();
        idx.sort_unstable();
        let mb: Vec<Task> = idx.iter().map(|&i| tasks[i].clone()).collect();
        curve.push(train_step(&mut policy, &mb, &mut schedule, &gammas, lr, &mut rollouts)?);
    }

    let window = WINDOW.min(steps / 2);
    let mean = |c: &[StepDiagnostics]| c.iter().map(|d| d.mean_sampled_reward_raw).sum::<f64>() / c.len().max(1) as f64;
    let first = mean(&curve[..window]);
    let last = mean(&curve[steps - window..]);

    // Gradient check at the final weights with one frozen draw.
    let mut probe = stream_rng(seed, "grad-check");
    let (traces, _) = collect_traces(&policy, &tasks, RewardKind::Nli, &mut probe)?;
    let frozen: Vec<FrozenSample<f64>> = traces.iter().map(FrozenSample::from).collect();
    let mixed = grad_check(&policy, &tasks, &frozen, &gammas)?;
    let nll_only = grad_check(&policy, &tasks, &frozen, &Weights::new(0.0, 1.0)?)?;
    log::info!("window mean sampled reward {first:.4} -> {last:.4}; grad check {:.2e}", mixed.max_rel_error);

    let report = json!({
        "config": cfg.echo(),
        "tasks": tasks.len(),
        "warmup": { "steps": warmup, "nll_first": nll.first(), "nll_last": nll.last() },
        "curve": curve,
        "window": { "size": window, "first_mean": first, "last_mean": last, "improved": last > first },
        "grad_check": { "mixed": mixed, "nll_only": nll_only },
        "weights": policy.weights,
    });
    emit_report(cfg.report.as_deref(), &report)
}
