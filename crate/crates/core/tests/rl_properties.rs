use persumm_core::geometry::EmbeddingMatrix;
use persumm_core::rewards::{minmax_normalize, nli_from_table, RewardKind, RewardSchedule};
use persumm_core::rltrain::{
    grad_check, mixed_objective, ml_step, nll_loss, train_step, Action, ExtractiveTask, FrozenSample, MixWeights, ToyPolicy,
    STEP_CAP,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_task(rng: &mut ChaCha8Rng, k: usize, d: usize) -> ExtractiveTask<f64> {
    let rows: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let entail = (0..k).map(|_| (0..3).map(|_| rng.gen::<f64>()).collect()).collect();
    let gold = (0..rng.gen_range(1..=k.min(4))).map(|i| (i * 3 + 1) % k).collect::<Vec<_>>();
    let mut seen = std::collections::HashSet::new();
    let gold = gold.into_iter().filter(|g| seen.insert(*g)).collect();
    ExtractiveTask::new((0..k).map(|i| format!("c{i}")).collect(), EmbeddingMatrix::from_rows(&rows).unwrap(), gold, entail)
        .unwrap()
}

#[test]
fn teacher_forced_nll_descends() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let batch: Vec<_> = (0..4).map(|_| random_task(&mut rng, 6, 3)).collect();
    let frozen: Vec<FrozenSample<f64>> = batch
        .iter()
        .map(|_| FrozenSample { sampled_actions: vec![Action::Stop], reward_greedy: 0.0, reward_sampled: 0.0 })
        .collect();
    let w = MixWeights::new(0.0, 1.0).unwrap();
    let mut policy = ToyPolicy::zeros(3);
    let nll = |p: &ToyPolicy<f64>| batch.iter().map(|t| nll_loss(p, t, &t.gold_actions()).unwrap()).sum::<f64>();
    let mut last = nll(&policy);
    let start = last;
    for _ in 0..50 {
        let obj = mixed_objective(&policy, &batch, &frozen, &w).unwrap();
        for (x, g) in policy.weights.iter_mut().zip(&obj.grad) {
            *x -= 0.1 * g;
        }
        let now = nll(&policy);
        assert!(now <= last + 1e-12, "{now} > {last}");
        last = now;
    }
    assert!(last < start);
}

#[test]
fn ml_step_is_the_nll_only_objective_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let batch: Vec<_> = (0..3).map(|_| random_task(&mut rng, 5, 2)).collect();
    let start = ToyPolicy { weights: vec![0.3, -0.2, 0.1] };
    let frozen: Vec<_> = batch
        .iter()
        .map(|_| FrozenSample { sampled_actions: vec![Action::Stop], reward_greedy: 0.0, reward_sampled: 0.0 })
        .collect();
    let obj = mixed_objective(&start, &batch, &frozen, &MixWeights::new(0.0, 1.0).unwrap()).unwrap();
    let mut p = start.clone();
    let loss = ml_step(&mut p, &batch, 0.25).unwrap();
    assert!((loss - obj.loss_ml).abs() < 1e-12);
    for ((after, before), g) in p.weights.iter().zip(&start.weights).zip(&obj.grad) {
        assert!((after - (before - 0.25 * g)).abs() < 1e-12);
    }
}

#[test]
fn reinforce_estimate_matches_analytic_bandit_gradient() {
    // One candidate with feature 1: select with p = sigmoid(w + b), then
    // STOP is forced. Reward 1 for selecting, 0 for stopping, so
    // d E[r] / dw = d E[r] / db = p (1 - p).
    let task = ExtractiveTask::new(
        vec!["only".to_string()],
        EmbeddingMatrix::from_rows(&[vec![1.0]]).unwrap(),
        vec![0],
        vec![vec![1.0]],
    )
    .unwrap();
    let policy = ToyPolicy { weights: vec![0.4, -0.1] };
    let p = 1.0 / (1.0 + (-(0.4f64 - 0.1)).exp());
    let analytic = p * (1.0 - p);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 20_000;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let (actions, _) = policy.sample(&task, &mut rng);
        let r = task.raw_reward(RewardKind::Nli, &actions).unwrap();
        let (_, g) = policy.log_prob_with_grad(&task, &actions).unwrap();
        samples.push(r * g[0]);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    assert!((mean - analytic).abs() < 3.0 * se, "{mean} vs {analytic} (se {se})");
}

#[test]
fn sampled_first_action_follows_policy_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let task = random_task(&mut rng, 4, 2);
    let policy = ToyPolicy { weights: vec![1.5, -0.5, 0.2] };
    let actions: Vec<Action> = (0..4).map(Action::Select).chain([Action::Stop]).collect();
    let probs: Vec<f64> = actions.iter().map(|a| policy.log_probs(&task, &[*a]).unwrap()[0].exp()).collect();
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let n = 20_000;
    let mut counts = vec![0usize; 5];
    for _ in 0..n {
        let (a, _) = policy.sample(&task, &mut rng);
        counts[actions.iter().position(|x| *x == a[0]).unwrap()] += 1;
    }
    for (c, p) in counts.iter().zip(&probs) {
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((*c as f64 / n as f64 - p).abs() < 4.0 * se + 1e-9);
    }
}

#[test]
fn rollouts_never_repeat_and_respect_the_cap() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let task = random_task(&mut rng, 15, 2);
    let policy = ToyPolicy { weights: vec![0.0, 0.0, 5.0] };
    for _ in 0..200 {
        let (a, lps) = policy.sample(&task, &mut rng);
        assert!(a.len() <= STEP_CAP && a.len() == lps.len());
        let sel = persumm_core::rltrain::selections(&a);
        let uniq: std::collections::HashSet<_> = sel.iter().collect();
        assert_eq!(uniq.len(), sel.len());
        assert_eq!(policy.log_probs(&task, &a).unwrap(), lps);
    }
}

#[test]
fn training_is_reproducible_from_seed() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch: Vec<_> = (0..3).map(|_| random_task(&mut rng, 6, 3)).collect();
        let mut policy = ToyPolicy::zeros(3);
        let mut schedule = RewardSchedule::default();
        let w = MixWeights::default();
        let curve: Vec<_> =
            (0..20).map(|_| train_step(&mut policy, &batch, &mut schedule, &w, 0.5, &mut rng).unwrap()).collect();
        (policy, curve)
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn mixed_gradient_matches_finite_differences(seed in any::<u64>(), k in 2usize..8, d in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch: Vec<_> = (0..3).map(|_| random_task(&mut rng, k, d)).collect();
        let policy = ToyPolicy { weights: (0..=d).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let frozen: Vec<_> = batch
            .iter()
            .map(|t| FrozenSample {
                sampled_actions: policy.sample(t, &mut rng).0,
                reward_greedy: rng.gen(),
                reward_sampled: rng.gen(),
            })
            .collect();
        let report = grad_check(&policy, &batch, &frozen, &MixWeights::default()).unwrap();
        prop_assert!(report.max_rel_error < 1e-4, "{:?}", report);
    }

    #[test]
    fn nli_never_drops_when_premises_are_added(
        table in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 1..5), 1..5),
        extra in 0.0f64..1.0,
    ) {
        let cols = table[0].len();
        let table: Vec<Vec<f64>> = table.into_iter().map(|mut r| { r.resize(cols, 0.5); r }).collect();
        let base = nli_from_table(&table).unwrap();
        let wider: Vec<Vec<f64>> = table.iter().map(|r| { let mut r = r.clone(); r.push(extra); r }).collect();
        prop_assert!(nli_from_table(&wider).unwrap() >= base);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn minmax_preserves_order_and_range(v in prop::collection::vec(-100.0f64..100.0, 1..20)) {
        let n = minmax_normalize(&v);
        prop_assert!(n.iter().all(|x| (0.0..=1.0).contains(x)));
        for i in 0..v.len() {
            for j in 0..v.len() {
                if v[i] < v[j] {
                    prop_assert!(n[i] <= n[j]);
                }
            }
        }
    }
}
