use multiplex_core::grpo::{run_training, sample_outcomes, TrainConfig};
use multiplex_core::io::write_jsonl;
use multiplex_core::metrics::{default_ks, outcomes_from_log, pass_at_k_curve, pass_at_k_unbiased};
use multiplex_core::model::{load_checkpoint, save_checkpoint};
use multiplex_core::pretrain::{pretrain, PretrainConfig};
use multiplex_core::rng::seeded;
use multiplex_core::rollout::{read_trajectory_log, recompute_logprob, rollout};
use multiplex_core::sampler::{build_selection, compute_coefficients, sample_multiplex, shape_distribution};
use multiplex_core::tasks::generate_set;
use multiplex_core::*;
use proptest::prelude::*;

fn small() -> ModelConfig {
    ModelConfig { n_layers: 1, n_heads: 2, d_model: 16, d_ff: 32, max_context: 64, vocab_size: 32 }
}

#[test]
fn pretrain_train_sample_and_score_from_a_log() {
    let dir = tempfile::tempdir().unwrap();
    let spec = TaskSpec::ChainApply { depth: 2, modulus: 5 };
    let mut model = PolicyModel::new(small(), &mut seeded(1)).unwrap();
    let pc = PretrainConfig { steps: 30, batch_size: 4, tasks: vec![spec], ..PretrainConfig::default() };
    let curve = pretrain(&mut model, &pc).unwrap();
    assert_eq!(curve.losses.len(), 30);

    let mut tc = TrainConfig {
        task: spec,
        batch_questions: 4,
        mini_batch_questions: 2,
        group_size: 4,
        total_steps: 3,
        validate_every: 0,
        ..TrainConfig::desk()
    };
    tc.rollout.max_think = 6;
    let report = run_training(&mut model, &tc, Some(dir.path()), |_| {}).unwrap();
    assert_eq!(report.metrics.len(), 3);
    let reloaded = load_checkpoint(&dir.path().join("final.ckpt")).unwrap();
    assert_eq!(reloaded.params().flatten(), model.params().flatten());

    let tasks = generate_set(spec, 9, 0, 5).unwrap();
    let (runs, trajs) = sample_outcomes(&model, &tasks, &tc.rollout, 8, 3).unwrap();
    let log = dir.path().join("log.jsonl");
    write_jsonl(&log, &trajs).unwrap();
    let back = read_trajectory_log(&log).unwrap();
    assert_eq!(back.len(), 40);
    for t in &back {
        let online = trajs.iter().find(|x| x.episode_id == t.episode_id).unwrap().total_logprob;
        assert!((recompute_logprob(&model, t).unwrap() - online).abs() < 1e-6);
    }
    let from_log = outcomes_from_log(&back).unwrap();
    assert_eq!(from_log, runs);
    let curve = pass_at_k_curve(&from_log, &default_ks(8)).unwrap();
    assert!(curve.windows(2).all(|w| w[0].mean <= w[1].mean + 1e-12));

    let path = dir.path().join("copy.ckpt");
    save_checkpoint(&model, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(dir.path().join("final.ckpt")).unwrap());
}

#[test]
fn rollouts_respect_budgets_for_every_mode() {
    let model = PolicyModel::new(small(), &mut seeded(2)).unwrap();
    let tasks = generate_set(TaskSpec::Reverse { length: 3 }, 4, 0, 6).unwrap();
    for mode in [Mode::Multiplex, Mode::DiscreteCoT, Mode::SoftThinking] {
        let cfg = RolloutConfig { mode, max_think: 3, max_answer: 2, ..RolloutConfig::default() };
        for (i, task) in tasks.iter().enumerate() {
            let t = rollout(&model, task, &cfg, i as u64, &mut seeded(i as u64)).unwrap();
            assert!(t.think_len() <= 3 && t.answer_len() <= 2);
            assert!(t.reward == 0.0 || t.reward == 1.0);
            if t.termination == Termination::ThinkBudgetExhausted {
                assert!(t.answer_tokens.is_empty() && t.reward == 0.0);
            }
        }
    }
}

proptest! {
    #[test]
    fn coefficients_stay_on_the_simplex(
        logits in prop::collection::vec(-6.0f64..6.0, 4..40),
        k in 1usize..8,
        t in 0.2f64..3.0,
        p in 0.3f64..=1.0,
        seed in any::<u64>(),
    ) {
        let dist = shape_distribution(&logits, t, p).unwrap();
        let s = sample_multiplex(&dist, k, &mut seeded(seed)).unwrap();
        prop_assert_eq!(s.token_ids.len(), k);
        let sel = build_selection(&s);
        for scheme in [AggregationScheme::Uniform, AggregationScheme::Reweighted] {
            let c = compute_coefficients(&sel, &dist, scheme).unwrap();
            let sum: f64 = c.iter().map(|(_, a)| a).sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(c.iter().all(|(v, a)| a > 0.0 && s.token_ids.contains(&v)));
        }
    }

    #[test]
    fn pass_at_k_is_monotone_and_bounded(n in 1usize..200, c_frac in 0.0f64..=1.0) {
        let c = ((n as f64) * c_frac).round() as usize;
        let mut prev = 0.0;
        for k in 1..=n {
            let v = pass_at_k_unbiased(n, c, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!(v + 1e-12 >= prev);
            prev = v;
        }
        prop_assert!((pass_at_k_unbiased(n, c, 1).unwrap() - c as f64 / n as f64).abs() < 1e-12);
    }
}
