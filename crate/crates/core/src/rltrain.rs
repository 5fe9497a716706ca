//! Self-critical policy-gradient training with a mixed RL / maximum
//! likelihood objective, exercised on a small extractive policy.
//!
//! The policy picks summary sentences one at a time from a candidate pool,
//! or STOP. Each candidate `i` has logit `w . e_i + b` (its embedding plus
//! a bias); STOP has a fixed logit of zero. Already-selected candidates are
//! masked out.
//!
//! Losses for one example, with `y*` the gold selection, `y^s` a sampled
//! rollout and `ŷ` the greedy rollout:
//!
//! ```text
//! L_ml    = -Σ_t log p(y*_t | y*_<t, x)
//! L_rl    = (r(ŷ) - r(y^s)) Σ_t log p(y^s_t | y^s_<t, x)
//! L_mixed = γ_rl L_rl + γ_ml L_ml
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::SilverExample;
use crate::error::{Error, Result};
use crate::geometry::{dot, EmbeddingMatrix};
use crate::rewards::{minmax_normalize, nli_from_table, semantic_area_from_embeddings, RewardKind, RewardSchedule};
use crate::scalar::Scalar;
use crate::scoring::Scorer;

/// Maximum number of selections in one rollout.
pub const STEP_CAP: usize = 10;
/// Central-difference step used by [`grad_check`].
pub const GRAD_CHECK_STEP: f64 = 1e-5;
/// Gradient components smaller than this are compared absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Select(usize),
    Stop,
}

/// One extractive episode: candidate sentences with their embeddings,
/// the gold selection, and the entailment table against the premises.
#[derive(Debug, Clone)]
pub struct ExtractiveTask<F> {
    pub candidates: Vec<String>,
    pub features: EmbeddingMatrix<F>,
    /// Gold candidate indices in selection order.
    pub gold: Vec<usize>,
    /// `entail[c][p]`: probability that premise `p` entails candidate `c`.
    pub entail: Vec<Vec<F>>,
}

impl<F: Scalar> ExtractiveTask<F> {
    pub fn new(candidates: Vec<String>, features: EmbeddingMatrix<F>, gold: Vec<usize>, entail: Vec<Vec<F>>) -> Result<Self> {
        let k = candidates.len();
        if k == 0 {
            return Err(Error::InvalidArgument("task needs at least one candidate".into()));
        }
        if features.rows() != k {
            return Err(Error::DimensionMismatch { expected: k, got: features.rows() });
        }
        if entail.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: entail.len() });
        }
        let premises = entail[0].len();
        if premises == 0 || entail.iter().any(|r| r.len() != premises) {
            return Err(Error::InvalidArgument("entailment table must be rectangular and non-empty".into()));
        }
        if gold.iter().any(|&g| g >= k) {
            return Err(Error::InvalidArgument("gold index out of range".into()));
        }
        Ok(Self { candidates, features, gold, entail })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Gold action sequence: the gold selections, then STOP unless the
    /// step cap is reached.
    pub fn gold_actions(&self) -> Vec<Action> {
        let mut a: Vec<Action> = self.gold.iter().take(STEP_CAP).map(|&g| Action::Select(g)).collect();
        if a.len() < STEP_CAP {
            a.push(Action::Stop);
        }
        a
    }

    /// Unnormalized reward of a selection. NLI of an empty selection is 0.
    pub fn raw_reward(&self, kind: RewardKind, actions: &[Action]) -> Result<F> {
        let selected = selections(actions);
        match kind {
            RewardKind::Nli => {
                if selected.is_empty() {
                    return Ok(F::zero());
                }
                let table: Vec<Vec<F>> = selected.iter().map(|&i| self.entail[i].clone()).collect();
                nli_from_table(&table)
            }
            RewardKind::SemanticArea => semantic_area_from_embeddings(&self.features.select(&selected)),
        }
    }

    /// Builds a task from a silver example: candidates are the input
    /// sentences followed by the bullets, the gold selection is the
    /// bullets, and the premises are the input sentences.
    pub fn from_silver<S: Scorer + ?Sized, E: Scorer + ?Sized>(
        example: &SilverExample,
        entail: &S,
        embedder: &E,
    ) -> Result<ExtractiveTask<f64>> {
        let premises: Vec<String> = example.input_sentences.iter().map(|s| s.text.clone()).collect();
        if premises.is_empty() {
            return Err(Error::Precondition(format!("silver example {} has no input", example.thread_id)));
        }
        let mut candidates = premises.clone();
        let first_bullet = candidates.len();
        candidates.extend(example.summary_bullets.iter().cloned());
        let gold = (first_bullet..candidates.len()).collect();

        let vectors = embedder.embed(&candidates)?;
        let features = EmbeddingMatrix::from_rows(&vectors)?;
        let pairs: Vec<(String, String)> = candidates
            .iter()
            .flat_map(|c| premises.iter().map(move |p| (p.clone(), c.clone())))
            .collect();
        let probs = entail.entail(&pairs)?;
        let table = probs.chunks(premises.len()).map(<[f64]>::to_vec).collect();
        ExtractiveTask::new(candidates, features, gold, table)
    }
}

/// Candidate indices chosen by an action sequence, in order.
pub fn selections(actions: &[Action]) -> Vec<usize> {
    actions
        .iter()
        .filter_map(|a| match a {
            Action::Select(i) => Some(*i),
            Action::Stop => None,
        })
        .collect()
}

/// Linear softmax policy over candidates plus STOP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy<F> {
    /// Embedding weights followed by the selection bias.
    pub weights: Vec<F>,
}

/// Log-probabilities of the available actions at one step.
struct StepDist<F> {
    actions: Vec<Action>,
    log_probs: Vec<F>,
}

impl<F: Scalar> StepDist<F> {
    fn log_prob(&self, a: Action) -> Option<F> {
        self.actions.iter().position(|&x| x == a).map(|i| self.log_probs[i])
    }
}

impl<F: Scalar> ToyPolicy<F> {
    pub fn zeros(dim: usize) -> Self {
        Self { weights: vec![F::zero(); dim + 1] }
    }

    pub fn dim(&self) -> usize {
        self.weights.len() - 1
    }

    fn logit(&self, task: &ExtractiveTask<F>, i: usize) -> F {
        let d = self.dim();
        dot(&self.weights[..d], task.features.row(i)) + self.weights[d]
    }

    fn feature(&self, task: &ExtractiveTask<F>, a: Action) -> Vec<F> {
        let d = self.dim();
        let mut phi = vec![F::zero(); d + 1];
        if let Action::Select(i) = a {
            phi[..d].copy_from_slice(task.features.row(i));
            phi[d] = F::one();
        }
        phi
    }

    fn check(&self, task: &ExtractiveTask<F>) -> Result<()> {
        if task.features.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: task.features.dim() });
        }
        Ok(())
    }

    fn step_dist(&self, task: &ExtractiveTask<F>, taken: &[bool]) -> StepDist<F> {
        let mut actions: Vec<Action> = (0..task.len()).filter(|&i| !taken[i]).map(Action::Select).collect();
        actions.push(Action::Stop);
        let logits: Vec<F> = actions
            .iter()
            .map(|&a| match a {
                Action::Select(i) => self.logit(task, i),
                Action::Stop => F::zero(),
            })
            .collect();
        let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
        let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<F>().ln();
        StepDist { actions, log_probs: logits.into_iter().map(|l| l - lse).collect() }
    }

    /// Per-step log-probabilities of `actions` under teacher forcing.
    /// An action that is unavailable at its step has probability zero.
    pub fn log_probs(&self, task: &ExtractiveTask<F>, actions: &[Action]) -> Result<Vec<F>> {
        self.check(task)?;
        let mut taken = vec![false; task.len()];
        let mut out = Vec::with_capacity(actions.len());
        for (step, &a) in actions.iter().enumerate() {
            let dist = self.step_dist(task, &taken);
            let lp = dist.log_prob(a).ok_or(Error::InfiniteLoss {
                step,
                action: match a {
                    Action::Select(i) => i,
                    Action::Stop => task.len(),
                },
            })?;
            out.push(lp);
            if let Action::Select(i) = a {
                taken[i] = true;
            }
        }
        Ok(out)
    }

    /// `Σ_t log p(a_t)` and its gradient with respect to the weights.
    pub fn log_prob_with_grad(&self, task: &ExtractiveTask<F>, actions: &[Action]) -> Result<(F, Vec<F>)> {
        self.check(task)?;
        let mut taken = vec![false; task.len()];
        let mut total = F::zero();
        let mut grad = vec![F::zero(); self.weights.len()];
        for (step, &a) in actions.iter().enumerate() {
            let dist = self.step_dist(task, &taken);
            let lp = dist.log_prob(a).ok_or(Error::InfiniteLoss {
                step,
                action: match a {
                    Action::Select(i) => i,
                    Action::Stop => task.len(),
                },
            })?;
            total = total + lp;
            // d log softmax(a) = phi(a) - Σ_j p_j phi(j)
            for (g, f) in grad.iter_mut().zip(self.feature(task, a)) {
                *g = *g + f;
            }
            for (&b, &lpb) in dist.actions.iter().zip(&dist.log_probs) {
                let p = lpb.exp();
                for (g, f) in grad.iter_mut().zip(self.feature(task, b)) {
                    *g = *g - p * f;
                }
            }
            if let Action::Select(i) = a {
                taken[i] = true;
            }
        }
        Ok((total, grad))
    }

    fn rollout<R: Rng + ?Sized>(&self, task: &ExtractiveTask<F>, mut rng: Option<&mut R>) -> (Vec<Action>, Vec<F>) {
        let mut taken = vec![false; task.len()];
        let mut actions = Vec::new();
        let mut lps = Vec::new();
        while actions.len() < STEP_CAP {
            let dist = self.step_dist(task, &taken);
            let idx = match rng.as_deref_mut() {
                Some(r) => {
                    let u = F::lit(r.gen::<f64>());
                    let mut acc = F::zero();
                    let mut pick = dist.actions.len() - 1;
                    for (j, &lp) in dist.log_probs.iter().enumerate() {
                        acc = acc + lp.exp();
                        if u < acc {
                            pick = j;
                            break;
                        }
                    }
                    pick
                }
                None => {
                    // Greedy: Select(i) precedes STOP and lower i come first,
                    // so the first maximum is the lowest action index.
                    let mut best = 0;
                    for (j, &lp) in dist.log_probs.iter().enumerate() {
                        if lp > dist.log_probs[best] {
                            best = j;
                        }
                    }
                    best
                }
            };
            let a = dist.actions[idx];
            actions.push(a);
            lps.push(dist.log_probs[idx]);
            match a {
                Action::Select(i) => taken[i] = true,
                Action::Stop => break,
            }
        }
        (actions, lps)
    }

    pub fn sample<R: Rng + ?Sized>(&self, task: &ExtractiveTask<F>, rng: &mut R) -> (Vec<Action>, Vec<F>) {
        self.rollout(task, Some(rng))
    }

    pub fn greedy(&self, task: &ExtractiveTask<F>) -> (Vec<Action>, Vec<F>) {
        self.rollout::<rand::rngs::mock::StepRng>(task, None)
    }
}

/// A sampled and a greedy rollout with their rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTrace<F> {
    pub sampled_actions: Vec<Action>,
    pub greedy_actions: Vec<Action>,
    pub sampled_logprobs: Vec<F>,
    pub reward_greedy: F,
    pub reward_sampled: F,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixWeights<F> {
    pub gamma_rl: F,
    pub gamma_ml: F,
}

impl<F: Scalar> MixWeights<F> {
    pub fn new(gamma_rl: F, gamma_ml: F) -> Result<Self> {
        if !(gamma_rl >= F::zero() && gamma_ml >= F::zero()) {
            return Err(Error::InvalidArgument("mixing weights must be non-negative".into()));
        }
        if gamma_rl == F::zero() && gamma_ml == F::zero() {
            return Err(Error::InvalidArgument("mixing weights cannot both be zero".into()));
        }
        Ok(Self { gamma_rl, gamma_ml })
    }
}

impl<F: Scalar> Default for MixWeights<F> {
    fn default() -> Self {
        Self { gamma_rl: F::lit(0.9), gamma_ml: F::lit(0.1) }
    }
}

/// Teacher-forced negative log-likelihood of the gold sequence.
pub fn nll_loss<F: Scalar>(policy: &ToyPolicy<F>, task: &ExtractiveTask<F>, gold: &[Action]) -> Result<F> {
    let lps = policy.log_probs(task, gold)?;
    Ok(-lps.into_iter().sum::<F>())
}

/// `(r(ŷ) - r(y^s)) * Σ_t log p(y^s_t)`.
pub fn self_critical_loss<F: Scalar>(trace: &PolicyTrace<F>) -> F {
    let logp: F = trace.sampled_logprobs.iter().copied().sum();
    (trace.reward_greedy - trace.reward_sampled) * logp
}

pub fn mixed_loss<F: Scalar>(l_rl: F, l_ml: F, w: &MixWeights<F>) -> F {
    w.gamma_rl * l_rl + w.gamma_ml * l_ml
}

/// Sampled rollout and rewards held fixed while the weights vary.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenSample<F> {
    pub sampled_actions: Vec<Action>,
    pub reward_greedy: F,
    pub reward_sampled: F,
}

impl<F: Scalar> From<&PolicyTrace<F>> for FrozenSample<F> {
    fn from(t: &PolicyTrace<F>) -> Self {
        Self { sampled_actions: t.sampled_actions.clone(), reward_greedy: t.reward_greedy, reward_sampled: t.reward_sampled }
    }
}

/// Batch-mean mixed loss, its RL and ML parts, and the analytic gradient.
#[derive(Debug, Clone)]
pub struct Objective<F> {
    pub loss_rl: F,
    pub loss_ml: F,
    pub loss: F,
    pub grad: Vec<F>,
}

pub fn mixed_objective<F: Scalar>(
    policy: &ToyPolicy<F>,
    batch: &[ExtractiveTask<F>],
    frozen: &[FrozenSample<F>],
    w: &MixWeights<F>,
) -> Result<Objective<F>> {
    if batch.is_empty() || batch.len() != frozen.len() {
        return Err(Error::InvalidArgument("batch and frozen samples must be non-empty and aligned".into()));
    }
    let mut loss_rl = F::zero();
    let mut loss_ml = F::zero();
    let mut grad = vec![F::zero(); policy.weights.len()];
    for (task, fs) in batch.iter().zip(frozen) {
        let adv = fs.reward_greedy - fs.reward_sampled;
        let (lp_s, g_s) = policy.log_prob_with_grad(task, &fs.sampled_actions)?;
        loss_rl = loss_rl + adv * lp_s;
        let (lp_g, g_g) = policy.log_prob_with_grad(task, &task.gold_actions())?;
        loss_ml = loss_ml - lp_g;
        for ((g, &a), &b) in grad.iter_mut().zip(&g_s).zip(&g_g) {
            *g = *g + w.gamma_rl * adv * a - w.gamma_ml * b;
        }
    }
    let n = F::from_count(batch.len());
    loss_rl = loss_rl / n;
    loss_ml = loss_ml / n;
    grad.iter_mut().for_each(|g| *g = *g / n);
    Ok(Objective { loss_rl, loss_ml, loss: mixed_loss(loss_rl, loss_ml, w), grad })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub params: usize,
}

/// Compares the analytic gradient of the mixed objective against central
/// finite differences. Relative error per weight is
/// `|a - n| / max(|a|, |n|, GRAD_CHECK_FLOOR)`.
pub fn grad_check<F: Scalar>(
    policy: &ToyPolicy<F>,
    batch: &[ExtractiveTask<F>],
    frozen: &[FrozenSample<F>],
    w: &MixWeights<F>,
) -> Result<GradCheckReport> {
    let analytic = mixed_objective(policy, batch, frozen, w)?.grad;
    let h = F::lit(GRAD_CHECK_STEP);
    let mut probe = policy.clone();
    let mut max_rel = 0.0f64;
    let mut max_abs = 0.0f64;
    for k in 0..policy.weights.len() {
        let base = policy.weights[k];
        probe.weights[k] = base + h;
        let up = mixed_objective(&probe, batch, frozen, w)?.loss;
        probe.weights[k] = base - h;
        let down = mixed_objective(&probe, batch, frozen, w)?.loss;
        probe.weights[k] = base;
        let numeric = ((up - down) / (h + h)).as_f64();
        let a = analytic[k].as_f64();
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        max_abs = max_abs.max(abs);
        max_rel = max_rel.max(rel);
    }
    Ok(GradCheckReport { max_rel_error: max_rel, max_abs_error: max_abs, params: policy.weights.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: u64,
    pub reward: RewardKind,
    /// Mean reward of the sampled rollouts as used in the loss.
    pub mean_sampled_reward: f64,
    pub mean_greedy_reward: f64,
    /// Mean unnormalized reward of the sampled rollouts.
    pub mean_sampled_reward_raw: f64,
    pub mean_selected: f64,
    pub loss_rl: f64,
    pub loss_ml: f64,
    pub loss_mixed: f64,
    pub grad_norm: f64,
}

/// Rolls out the batch and computes rewards for `kind`. Semantic areas are
/// min-max normalized over every greedy and sampled rollout in the batch.
pub fn collect_traces<F: Scalar, R: Rng + ?Sized>(
    policy: &ToyPolicy<F>,
    batch: &[ExtractiveTask<F>],
    kind: RewardKind,
    rng: &mut R,
) -> Result<(Vec<PolicyTrace<F>>, Vec<F>)> {
    let mut rollouts = Vec::with_capacity(batch.len());
    let mut raw = Vec::with_capacity(2 * batch.len());
    for task in batch {
        let (sampled, lps) = policy.sample(task, rng);
        let (greedy, _) = policy.greedy(task);
        raw.push(task.raw_reward(kind, &greedy)?);
        raw.push(task.raw_reward(kind, &sampled)?);
        rollouts.push((sampled, lps, greedy));
    }
    let used = match kind {
        RewardKind::Nli => raw.clone(),
        RewardKind::SemanticArea => minmax_normalize(&raw),
    };
    let traces = rollouts
        .into_iter()
        .enumerate()
        .map(|(i, (sampled_actions, sampled_logprobs, greedy_actions))| PolicyTrace {
            sampled_actions,
            greedy_actions,
            sampled_logprobs,
            reward_greedy: used[2 * i],
            reward_sampled: used[2 * i + 1],
        })
        .collect();
    let raw_sampled = raw.iter().skip(1).step_by(2).copied().collect();
    Ok((traces, raw_sampled))
}

/// One teacher-forced gradient step on the batch-mean NLL alone. Returns
/// the loss before the update.
pub fn ml_step<F: Scalar>(policy: &mut ToyPolicy<F>, batch: &[ExtractiveTask<F>], learning_rate: F) -> Result<F> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("batch must be non-empty".into()));
    }
    let mut loss = F::zero();
    let mut grad = vec![F::zero(); policy.weights.len()];
    for task in batch {
        let (lp, g) = policy.log_prob_with_grad(task, &task.gold_actions())?;
        loss = loss - lp;
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc = *acc - gi;
        }
    }
    let n = F::from_count(batch.len());
    for (wt, g) in policy.weights.iter_mut().zip(grad) {
        *wt = *wt - learning_rate * g / n;
    }
    Ok(loss / n)
}

/// One gradient step on the mixed objective with the reward chosen by the
/// schedule.
pub fn train_step<F: Scalar, R: Rng + ?Sized>(
    policy: &mut ToyPolicy<F>,
    batch: &[ExtractiveTask<F>],
    schedule: &mut RewardSchedule,
    w: &MixWeights<F>,
    learning_rate: F,
    rng: &mut R,
) -> Result<StepDiagnostics> {
    let step = schedule.cursor();
    let kind = schedule.next_reward();
    let (traces, raw_sampled) = collect_traces(policy, batch, kind, rng)?;
    let frozen: Vec<FrozenSample<F>> = traces.iter().map(FrozenSample::from).collect();
    let obj = mixed_objective(policy, batch, &frozen, w)?;

    let n = batch.len() as f64;
    let mean = |it: &mut dyn Iterator<Item = F>| it.map(|v| v.as_f64()).sum::<f64>() / n;
    let grad_norm = obj.grad.iter().map(|g| g.as_f64().powi(2)).sum::<f64>().sqrt();
    let diagnostics = StepDiagnostics {
        step,
        reward: kind,
        mean_sampled_reward: mean(&mut traces.iter().map(|t| t.reward_sampled)),
        mean_greedy_reward: mean(&mut traces.iter().map(|t| t.reward_greedy)),
        mean_sampled_reward_raw: mean(&mut raw_sampled.into_iter()),
        mean_selected: traces.iter().map(|t| selections(&t.sampled_actions).len() as f64).sum::<f64>() / n,
        loss_rl: obj.loss_rl.as_f64(),
        loss_ml: obj.loss_ml.as_f64(),
        loss_mixed: obj.loss.as_f64(),
        grad_norm,
    };
    if !grad_norm.is_finite() {
        return Err(Error::NonFiniteGradient {
            step,
            diagnostics: serde_json::to_string(&diagnostics).unwrap_or_default(),
        });
    }
    for (wt, g) in policy.weights.iter_mut().zip(obj.grad) {
        *wt = *wt - learning_rate * g;
    }
    Ok(diagnostics)
}
