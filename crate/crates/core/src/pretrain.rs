//! Supervised warm-up on worked task traces.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{clip_grad_norm, Adam, AdamConfig, PolicyModel};
use crate::rng::substream;
use crate::tasks::{generate, TaskInstance, TaskSpec, PAD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
    /// Linear warm-up length in steps.
    #[serde(default)]
    pub warmup: usize,
    pub seed: u64,
    /// Mixture of task families; each example picks one uniformly.
    pub tasks: Vec<TaskSpec>,
}

fn default_clip() -> f64 {
    1.0
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 16,
            learning_rate: 3e-3,
            grad_clip: 1.0,
            warmup: 50,
            seed: 0,
            tasks: vec![TaskSpec::Copy { length: 4 }],
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        if self.tasks.is_empty() {
            return Err(Error::Config("at least one task family is required".into()));
        }
        for t in &self.tasks {
            t.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup {
            self.learning_rate * (step + 1) as f64 / self.warmup as f64
        } else {
            self.learning_rate
        }
    }
}

/// Training example `(step, slot)`; ids are unique per pair.
pub fn pretrain_example(cfg: &PretrainConfig, step: usize, slot: usize) -> Result<TaskInstance> {
    let id = (step * cfg.batch_size + slot) as u64;
    let pick = substream(cfg.seed, id, 1).gen_range(0..cfg.tasks.len());
    generate(cfg.tasks[pick], cfg.seed, id)
}

/// Mean per-token loss of every step, in order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub losses: Vec<f64>,
}

impl LossCurve {
    pub fn last(&self) -> Option<f64> {
        self.losses.last().copied()
    }

    /// Trailing moving average of width `w`.
    pub fn smoothed(&self, w: usize) -> Vec<f64> {
        let w = w.max(1);
        (0..self.losses.len())
            .map(|i| {
                let lo = (i + 1).saturating_sub(w);
                let s = &self.losses[lo..=i];
                s.iter().sum::<f64>() / s.len() as f64
            })
            .collect()
    }
}

/// Mean per-token loss over `tasks` (prompt positions excluded).
pub fn evaluate_loss(model: &PolicyModel, tasks: &[TaskInstance]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0;
    for t in tasks {
        let (input, targets) = t.supervised_pair();
        let (s, c) = model.supervised_loss_sum(&input, &targets, Some(PAD))?;
        sum += s;
        count += c;
    }
    if count == 0 {
        return Err(Error::LengthMismatch("no supervised targets".into()));
    }
    Ok(sum / count as f64)
}

/// Trains `model` in place with token-mean cross-entropy and Adam.
///
/// `on_step` sees `(step, loss)` after each update.
pub fn pretrain_with(
    model: &mut PolicyModel,
    cfg: &PretrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<LossCurve> {
    cfg.validate()?;
    let adam_cfg = AdamConfig { learning_rate: cfg.learning_rate, ..AdamConfig::default() };
    let mut opt = Adam::new(adam_cfg, model.params());
    let mut curve = LossCurve::default();
    for step in 0..cfg.steps {
        let batch = (0..cfg.batch_size)
            .map(|slot| pretrain_example(cfg, step, slot).map(|t| t.supervised_pair()))
            .collect::<Result<Vec<_>>>()?;
        let total: usize = batch.iter().map(|(_, t)| t.iter().filter(|&&x| x != PAD).count()).sum();
        if total == 0 {
            return Err(Error::LengthMismatch("batch has no supervised targets".into()));
        }
        let mut grads = model.params().zeros_like();
        let mut sum = 0.0;
        for (input, targets) in &batch {
            sum += model.supervised_loss_grad(input, targets, Some(PAD), 1.0 / total as f64, &mut grads)?.0;
        }
        let loss = sum / total as f64;
        if !loss.is_finite() || !grads.all_finite() {
            return Err(Error::Divergence(format!("non-finite loss {loss} at pretraining step {step}")));
        }
        clip_grad_norm(&mut grads, cfg.grad_clip);
        opt.set_learning_rate(cfg.lr_at(step));
        opt.step(model.params_mut(), &grads);
        if !model.params().all_finite() {
            return Err(Error::Divergence(format!("non-finite parameters after pretraining step {step}")));
        }
        curve.losses.push(loss);
        on_step(step, loss);
    }
    Ok(curve)
}

pub fn pretrain(model: &mut PolicyModel, cfg: &PretrainConfig) -> Result<LossCurve> {
    pretrain_with(model, cfg, |_, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::rng::seeded;
    use crate::tasks::generate_set;

    fn small() -> PolicyModel {
        let cfg = ModelConfig { n_layers: 1, n_heads: 2, d_model: 16, d_ff: 32, max_context: 32, vocab_size: 32 };
        PolicyModel::new(cfg, &mut seeded(3)).unwrap()
    }

    #[test]
    fn zero_steps_is_a_no_op() {
        let mut m = small();
        let before = m.params().flatten();
        let curve = pretrain(&mut m, &PretrainConfig { steps: 0, ..Default::default() }).unwrap();
        assert!(curve.losses.is_empty());
        assert_eq!(before, m.params().flatten());
    }

    #[test]
    fn fixed_seed_gives_identical_curves() {
        let cfg = PretrainConfig { steps: 5, batch_size: 4, ..Default::default() };
        let mut a = small();
        let mut b = small();
        let ca = pretrain(&mut a, &cfg).unwrap();
        let cb = pretrain(&mut b, &cfg).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a.params().flatten(), b.params().flatten());
    }

    #[test]
    fn loss_goes_down_on_copy() {
        let mut m = small();
        let cfg = PretrainConfig { steps: 60, batch_size: 8, tasks: vec![TaskSpec::Copy { length: 3 }], ..Default::default() };
        let curve = pretrain(&mut m, &cfg).unwrap();
        let s = curve.smoothed(10);
        assert!(s[59] < s[9], "{:?}", s);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut m = small();
        for cfg in [
            PretrainConfig { batch_size: 0, ..Default::default() },
            PretrainConfig { tasks: vec![], ..Default::default() },
            PretrainConfig { tasks: vec![TaskSpec::Copy { length: 0 }], ..Default::default() },
            PretrainConfig { learning_rate: f64::NAN, ..Default::default() },
        ] {
            assert!(matches!(pretrain(&mut m, &cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn divergence_is_reported() {
        let mut m = small();
        m.params_mut().lnf_g.fill(f64::NAN);
        let cfg = PretrainConfig { steps: 2, batch_size: 2, ..Default::default() };
        assert!(matches!(pretrain(&mut m, &cfg), Err(Error::Divergence(_))));
    }

    #[test]
    fn held_out_loss_is_finite() {
        let m = small();
        let tasks = generate_set(TaskSpec::Copy { length: 3 }, 99, 1_000_000, 4).unwrap();
        let l = evaluate_loss(&m, &tasks).unwrap();
        assert!(l.is_finite() && l > 0.0);
    }
}
