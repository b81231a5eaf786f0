//! Group-relative policy optimization over multiplex rollouts.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_csv;
use crate::metrics::{mean_step_entropy, pass_at_k_curve, RunOutcomes};
use crate::model::{clip_grad_norm, save_checkpoint, Adam, AdamConfig, Params, PolicyModel};
use crate::rollout::{rollout_many, Diversity, InputSource, Mode, RolloutConfig, RolloutJob, Trajectory, TrajectoryLayout};
use crate::sampler::{shape_distribution, AggregationScheme, ProbVector};
use crate::tasks::{generate, TaskInstance, TaskSpec, EOT};

/// Denominator guard in advantage normalization.
pub const ADVANTAGE_EPS: f64 = 1e-6;
/// Largest tolerated `|ratio - 1|` on a freshly generated batch.
pub const ON_POLICY_TOL: f64 = 1e-6;
/// Trajectories per gradient work unit; fixed so that reduction order does
/// not depend on the thread count.
const GRAD_CHUNK: usize = 8;

const VALIDATION_SEED_SALT: u64 = 0x5EED_0F_7A11;
const VALIDATION_ID_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Questions per training step.
    pub batch_questions: usize,
    /// Questions per optimizer update; equal to `batch_questions` means one
    /// fully on-policy update per step.
    pub mini_batch_questions: usize,
    /// Rollouts per question (G).
    pub group_size: usize,
    pub learning_rate: f64,
    pub kl_coeff: f64,
    pub entropy_coeff: f64,
    pub clip_epsilon: f64,
    pub grad_clip: f64,
    pub total_steps: usize,
    /// Longest prompt accepted, in tokens.
    pub max_prompt_length: usize,
    /// Upper bound on thinking steps plus answer tokens.
    pub max_response_length: usize,
    /// Numeric type of parameters; only `f64` is supported.
    pub precision: String,
    pub validate_every: usize,
    pub validation_questions: usize,
    pub validation_samples: usize,
    pub checkpoint_every: usize,
    pub seed: u64,
    pub task: TaskSpec,
    pub rollout: RolloutConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Desk-scale defaults: 16 questions per step and a learning rate of 1e-4.
    pub fn desk() -> Self {
        Self {
            batch_questions: 16,
            mini_batch_questions: 16,
            group_size: 8,
            learning_rate: 1e-4,
            kl_coeff: 0.0,
            entropy_coeff: 0.0,
            clip_epsilon: 0.2,
            grad_clip: 1.0,
            total_steps: 200,
            max_prompt_length: 64,
            max_response_length: 16,
            precision: "f64".into(),
            validate_every: 25,
            validation_questions: 32,
            validation_samples: 16,
            checkpoint_every: 0,
            seed: 0,
            task: TaskSpec::ChainApply { depth: 3, modulus: 10 },
            rollout: RolloutConfig { k: 3, max_think: 8, max_answer: 4, ..RolloutConfig::default() },
        }
    }

    /// Batch, learning rate and step count of a large-scale
    /// setup; budgets stay sized to the desk model.
    pub fn full() -> Self {
        Self {
            batch_questions: 128,
            mini_batch_questions: 128,
            learning_rate: 1e-6,
            total_steps: 300,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected desk or full)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        self.rollout.validate()?;
        self.task.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.group_size < 2 {
            return err(format!("group_size must be at least 2, got {}", self.group_size));
        }
        if self.batch_questions == 0 || self.mini_batch_questions == 0 {
            return err("batch sizes must be positive".into());
        }
        if !self.batch_questions.is_multiple_of(self.mini_batch_questions) {
            return err("mini_batch_questions must divide batch_questions".into());
        }
        for (name, v) in [("kl_coeff", self.kl_coeff), ("entropy_coeff", self.entropy_coeff), ("clip_epsilon", self.clip_epsilon)] {
            if !(v >= 0.0 && v.is_finite()) {
                return err(format!("{name} must be a nonnegative number, got {v}"));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return err(format!("invalid learning rate {}", self.learning_rate));
        }
        if !(self.grad_clip > 0.0) {
            return err("grad_clip must be positive".into());
        }
        if self.rollout.max_think + self.rollout.max_answer > self.max_response_length {
            return err(format!(
                "max_think + max_answer = {} exceeds max_response_length {}",
                self.rollout.max_think + self.rollout.max_answer,
                self.max_response_length
            ));
        }
        if self.precision != "f64" {
            return err(format!("unsupported precision `{}`; only f64 is implemented", self.precision));
        }
        if self.rollout.mode == Mode::SoftThinking {
            return err("soft thinking is inference-only and cannot be trained".into());
        }
        if self.validate_every > 0 && (self.validation_questions == 0 || self.validation_samples == 0) {
            return err("validation needs at least one question and one sample".into());
        }
        Ok(())
    }

    fn loss_config(&self) -> LossConfig {
        LossConfig { clip_epsilon: self.clip_epsilon, kl_coeff: self.kl_coeff, entropy_coeff: self.entropy_coeff }
    }
}

/// Weights of the surrogate objective terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub clip_epsilon: f64,
    pub kl_coeff: f64,
    pub entropy_coeff: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { clip_epsilon: 0.2, kl_coeff: 0.0, entropy_coeff: 0.0 }
    }
}

/// `(r - mean) / (std + eps)` with the population standard deviation; a
/// group with identical rewards gets all zeros.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::Parameter(format!("group needs at least 2 rewards, got {}", rewards.len())));
    }
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n).sqrt();
    Ok(rewards.iter().map(|r| (r - mean) / (std + ADVANTAGE_EPS)).collect())
}

/// The G rollouts of one question with their advantages.
#[derive(Debug, Clone)]
pub struct GroupBatch {
    pub task: TaskInstance,
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl GroupBatch {
    pub fn new(task: TaskInstance, trajectories: Vec<Trajectory>) -> Result<Self> {
        let rewards: Vec<f64> = trajectories.iter().map(|t| t.reward).collect();
        let advantages = group_advantages(&rewards)?;
        Ok(Self { task, trajectories, rewards, advantages })
    }

    /// A group with caller-supplied advantages.
    pub fn with_advantages(task: TaskInstance, trajectories: Vec<Trajectory>, advantages: Vec<f64>) -> Result<Self> {
        if advantages.len() != trajectories.len() {
            return Err(Error::LengthMismatch(format!(
                "{} advantages for {} trajectories",
                advantages.len(),
                trajectories.len()
            )));
        }
        let rewards = trajectories.iter().map(|t| t.reward).collect();
        Ok(Self { task, trajectories, rewards, advantages })
    }
}

/// Summary of one surrogate evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossStats {
    /// Token-mean surrogate loss.
    pub loss: f64,
    /// Number of log-probability terms.
    pub terms: usize,
    /// Largest `|ratio - 1|` over all terms.
    pub max_ratio_deviation: f64,
    /// Fraction of terms whose clipped branch was active.
    pub clip_fraction: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Partial {
    loss: f64,
    terms: usize,
    max_dev: f64,
    clipped: usize,
}

impl Partial {
    fn merge(mut self, o: Partial) -> Self {
        self.loss += o.loss;
        self.terms += o.terms;
        self.max_dev = self.max_dev.max(o.max_dev);
        self.clipped += o.clipped;
        self
    }
}

/// The distribution a site's token was drawn from, and its support.
fn site_distribution(row: &[f64], cfg: &RolloutConfig, masked: bool) -> Result<ProbVector> {
    let d = shape_distribution(row, cfg.temperature, cfg.top_p)?;
    if masked {
        d.without(EOT)
    } else {
        Ok(d)
    }
}

/// Surrogate loss of one trajectory summed over its terms (not yet
/// normalized); when `grads` is given, adds `scale` times its gradient.
fn trajectory_terms(
    model: &PolicyModel,
    traj: &Trajectory,
    advantage: f64,
    lc: &LossConfig,
    grad: Option<(f64, &mut Params)>,
) -> Result<Partial> {
    let cfg = traj.config;
    if cfg.mode == Mode::SoftThinking {
        return Err(Error::Config("soft-thinking trajectories carry no sampling terms".into()));
    }
    let layout = TrajectoryLayout::of(traj);
    let x = layout.inputs(model)?;
    let (logits, cache) = model.forward(&x)?;
    let want_grad = grad.is_some();
    let mut dlogits = Array2::<f64>::zeros(logits.dim());
    let mut out = Partial::default();
    let inv_t = 1.0 / cfg.temperature;
    for site in &layout.sites {
        let q = site_distribution(logits.row(site.row).as_slice().expect("contiguous"), &cfg, site.eot_masked)?;
        let p = q.prob(site.token);
        if p <= 0.0 {
            return Err(Error::ReplayMismatch(format!("token {} outside the current support", site.token)));
        }
        let lp = p.ln();
        let ratio = (lp - site.behavior_logprob).exp();
        out.max_dev = out.max_dev.max((ratio - 1.0).abs());
        out.terms += 1;
        let lo = 1.0 - lc.clip_epsilon;
        let hi = 1.0 + lc.clip_epsilon;
        let clipped = ratio.clamp(lo, hi);
        let unclipped_term = ratio * advantage;
        let clipped_term = clipped * advantage;
        out.loss -= unclipped_term.min(clipped_term);
        let active = unclipped_term <= clipped_term || ratio == clipped;
        if !active {
            out.clipped += 1;
        }
        // d(loss)/d(log q(token))
        let mut dlp = if active { -advantage * ratio } else { 0.0 };
        if lc.kl_coeff > 0.0 {
            let r_inv = (site.behavior_logprob - lp).exp();
            out.loss += lc.kl_coeff * (r_inv - (site.behavior_logprob - lp) - 1.0);
            dlp += lc.kl_coeff * (1.0 - r_inv);
        }
        let mut h = 0.0;
        if lc.entropy_coeff > 0.0 {
            h = q.entropy();
            out.loss -= lc.entropy_coeff * h;
        }
        if want_grad {
            let mut row = dlogits.row_mut(site.row);
            for (u, &qu) in q.probs().iter().enumerate() {
                if qu <= 0.0 {
                    continue;
                }
                let indicator = if u == site.token { 1.0 } else { 0.0 };
                row[u] += dlp * (indicator - qu) * inv_t;
                if lc.entropy_coeff > 0.0 {
                    // dH/dz_u = -q_u (ln q_u + H) / T
                    row[u] += lc.entropy_coeff * qu * (qu.ln() + h) * inv_t;
                }
            }
        }
    }
    if let Some((scale, grads)) = grad {
        dlogits *= scale;
        let dx = model.backward(&cache, &dlogits, grads);
        let e = grads.embedding.weights_mut();
        for (src, row) in layout.sources.iter().zip(dx.rows()) {
            match src {
                InputSource::Token(t) => e.row_mut(*t).scaled_add(1.0, &row),
                InputSource::Mixture(c) => {
                    for (v, a) in c.iter() {
                        e.row_mut(v).scaled_add(a, &row);
                    }
                }
            }
        }
    }
    Ok(out)
}

fn weighted(batch: &[GroupBatch]) -> Vec<(&Trajectory, f64)> {
    batch
        .iter()
        .flat_map(|g| g.trajectories.iter().zip(g.advantages.iter().copied()))
        .collect()
}

fn finish(p: Partial) -> LossStats {
    let n = p.terms.max(1) as f64;
    LossStats {
        loss: if p.terms == 0 { 0.0 } else { p.loss / n },
        terms: p.terms,
        max_ratio_deviation: p.max_dev,
        clip_fraction: p.clipped as f64 / n,
    }
}

/// Token-mean clipped surrogate loss over every constituent draw (K per
/// thinking step, one per answer token).
pub fn policy_loss(model: &PolicyModel, batch: &[GroupBatch], lc: &LossConfig) -> Result<LossStats> {
    let items = weighted(batch);
    let parts = items
        .par_iter()
        .map(|(t, a)| trajectory_terms(model, t, *a, lc, None))
        .collect::<Result<Vec<_>>>()?;
    Ok(finish(parts.into_iter().fold(Partial::default(), Partial::merge)))
}

/// [`policy_loss`] together with its parameter gradient.
///
/// Multiplex inputs are treated as fixed mixtures of embedding rows: the
/// gradient reaches every aggregated row through its coefficient, while the
/// coefficients themselves are held constant.
pub fn policy_loss_grad(model: &PolicyModel, batch: &[GroupBatch], lc: &LossConfig) -> Result<(LossStats, Params)> {
    let items = weighted(batch);
    let terms: usize = items.iter().map(|(t, _)| t.num_sample_terms()).sum();
    let scale = 1.0 / terms.max(1) as f64;
    let chunks = items
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut g = model.params().zeros_like();
            let mut p = Partial::default();
            for (t, a) in chunk {
                p = p.merge(trajectory_terms(model, t, *a, lc, Some((scale, &mut g)))?);
            }
            Ok((p, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grads = model.params().zeros_like();
    let mut total = Partial::default();
    for (p, g) in chunks {
        grads.add_scaled(&g, 1.0);
        total = total.merge(p);
    }
    Ok((finish(total), grads))
}

/// One row of the training metrics table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub mean_reward: f64,
    pub loss: f64,
    pub mean_step_entropy: f64,
    pub mean_think_len: f64,
    pub mean_answer_len: f64,
    pub consensus_frac: f64,
    pub majority21_frac: f64,
    pub distinct_frac: f64,
    pub grad_norm: f64,
}

fn batch_metrics(step: usize, trajs: &[&Trajectory], loss: f64, grad_norm: f64) -> StepMetrics {
    let n = trajs.len().max(1) as f64;
    let mut counts = [0usize; 3];
    let mut steps = 0usize;
    for s in trajs.iter().flat_map(|t| &t.steps) {
        steps += 1;
        match s.diversity {
            Diversity::Consensus => counts[0] += 1,
            Diversity::Majority21 => counts[1] += 1,
            Diversity::AllDistinct => counts[2] += 1,
            _ => {}
        }
    }
    let frac = |c: usize| if steps == 0 { 0.0 } else { c as f64 / steps as f64 };
    let owned: Vec<Trajectory> = trajs.iter().map(|&t| t.clone()).collect();
    StepMetrics {
        step,
        mean_reward: trajs.iter().map(|t| t.reward).sum::<f64>() / n,
        loss,
        mean_step_entropy: mean_step_entropy(&owned),
        mean_think_len: trajs.iter().map(|t| t.think_len() as f64).sum::<f64>() / n,
        mean_answer_len: trajs.iter().map(|t| t.answer_len() as f64).sum::<f64>() / n,
        consensus_frac: frac(counts[0]),
        majority21_frac: frac(counts[1]),
        distinct_frac: frac(counts[2]),
        grad_norm,
    }
}

/// Training questions of step `step`.
pub fn step_questions(cfg: &TrainConfig, step: usize) -> Result<Vec<TaskInstance>> {
    let first = (step * cfg.batch_questions) as u64;
    (0..cfg.batch_questions as u64).map(|i| generate(cfg.task, cfg.seed, first + i)).collect()
}

/// Fixed held-out questions used for periodic validation.
pub fn validation_questions(cfg: &TrainConfig) -> Result<Vec<TaskInstance>> {
    (0..cfg.validation_questions as u64)
        .map(|i| generate(cfg.task, cfg.seed ^ VALIDATION_SEED_SALT, VALIDATION_ID_BASE + i))
        .collect()
}

/// Rolls out `group_size` episodes per question; episode ids start at
/// `first_episode` and are laid out question-major.
pub fn rollout_groups(
    model: &PolicyModel,
    tasks: &[TaskInstance],
    rollout: &RolloutConfig,
    group_size: usize,
    seed: u64,
    first_episode: u64,
) -> Result<Vec<GroupBatch>> {
    let jobs: Vec<RolloutJob<'_>> = tasks
        .iter()
        .enumerate()
        .flat_map(|(q, task)| {
            (0..group_size).map(move |g| RolloutJob { task, episode_id: first_episode + (q * group_size + g) as u64 })
        })
        .collect();
    let mut trajs = rollout_many(model, &jobs, rollout, seed)?.into_iter();
    tasks
        .iter()
        .map(|t| GroupBatch::new(t.clone(), trajs.by_ref().take(group_size).collect()))
        .collect()
}

/// Generates G rollouts per question, then applies one optimizer update per
/// mini-batch. The first update must see ratios of exactly one.
pub fn train_step(
    model: &mut PolicyModel,
    opt: &mut Adam,
    tasks: &[TaskInstance],
    cfg: &TrainConfig,
    step: usize,
) -> Result<StepMetrics> {
    for t in tasks {
        if t.prompt_tokens.len() > cfg.max_prompt_length {
            return Err(Error::Parameter(format!(
                "prompt of {} tokens exceeds max_prompt_length {}",
                t.prompt_tokens.len(),
                cfg.max_prompt_length
            )));
        }
    }
    let first_episode = (step * tasks.len() * cfg.group_size) as u64;
    let groups = rollout_groups(model, tasks, &cfg.rollout, cfg.group_size, cfg.seed, first_episode)?;
    let lc = cfg.loss_config();
    let mb = cfg.mini_batch_questions.min(groups.len()).max(1);
    let mut losses = Vec::new();
    let mut norm = 0.0;
    for (i, chunk) in groups.chunks(mb).enumerate() {
        let (stats, mut grads) = policy_loss_grad(model, chunk, &lc)?;
        if i == 0 && stats.max_ratio_deviation > ON_POLICY_TOL {
            return Err(Error::StaleBatch(format!(
                "ratio deviates from 1 by {:.3e} on a fresh batch",
                stats.max_ratio_deviation
            )));
        }
        if !stats.loss.is_finite() || !grads.all_finite() {
            return Err(Error::Divergence(format!("non-finite loss or gradient at step {step}")));
        }
        norm = clip_grad_norm(&mut grads, cfg.grad_clip);
        opt.step(model.params_mut(), &grads);
        if !model.params().all_finite() {
            return Err(Error::Divergence(format!("non-finite parameters after step {step}")));
        }
        losses.push(stats.loss);
    }
    let loss = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
    let all: Vec<&Trajectory> = groups.iter().flat_map(|g| &g.trajectories).collect();
    Ok(batch_metrics(step, &all, loss, norm))
}

/// Pass@k of a periodic validation pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub step: usize,
    pub k: usize,
    pub pass_at_k: f64,
    pub stderr: f64,
}

/// Samples `n` rollouts for each question and returns per-question outcomes.
pub fn sample_outcomes(
    model: &PolicyModel,
    tasks: &[TaskInstance],
    rollout: &RolloutConfig,
    n: usize,
    seed: u64,
) -> Result<(Vec<RunOutcomes>, Vec<Trajectory>)> {
    let jobs: Vec<RolloutJob<'_>> = tasks
        .iter()
        .enumerate()
        .flat_map(|(q, task)| (0..n).map(move |g| RolloutJob { task, episode_id: (q * n + g) as u64 }))
        .collect();
    let trajs = rollout_many(model, &jobs, rollout, seed)?;
    let runs = tasks
        .iter()
        .zip(trajs.chunks(n))
        .map(|(t, c)| RunOutcomes::new(t.id, c.iter().map(|x| x.reward == 1.0).collect()))
        .collect();
    Ok((runs, trajs))
}

pub fn validate_model(model: &PolicyModel, cfg: &TrainConfig, step: usize) -> Result<Vec<ValidationRecord>> {
    let tasks = validation_questions(cfg)?;
    let (runs, _) = sample_outcomes(model, &tasks, &cfg.rollout, cfg.validation_samples, cfg.seed ^ VALIDATION_SEED_SALT)?;
    let ks = crate::metrics::default_ks(cfg.validation_samples);
    Ok(pass_at_k_curve(&runs, &ks)?
        .into_iter()
        .map(|r| ValidationRecord { step, k: r.k, pass_at_k: r.mean, stderr: r.stderr })
        .collect())
}

#[derive(Debug, Clone, Default)]
pub struct TrainingReport {
    pub metrics: Vec<StepMetrics>,
    pub validations: Vec<ValidationRecord>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainingReport {
    pub fn entropy_series(&self) -> Vec<f64> {
        self.metrics.iter().map(|m| m.mean_step_entropy).collect()
    }
}

/// Runs `total_steps` of [`train_step`], validating every `validate_every`
/// steps. With `out_dir` set, writes `metrics.csv`, `validation.csv`,
/// periodic `step-N.ckpt` files and `final.ckpt`; a diverged run leaves
/// `diverged.ckpt` with the last finite parameters.
pub fn run_training(
    model: &mut PolicyModel,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    mut on_step: impl FnMut(&StepMetrics),
) -> Result<TrainingReport> {
    cfg.validate()?;
    let mut opt = Adam::new(AdamConfig { learning_rate: cfg.learning_rate, ..AdamConfig::default() }, model.params());
    let mut report = TrainingReport::default();
    for step in 0..cfg.total_steps {
        let tasks = step_questions(cfg, step)?;
        let snapshot = model.params().clone();
        let m = match train_step(model, &mut opt, &tasks, cfg, step) {
            Ok(m) => m,
            Err(e @ Error::Divergence(_)) => {
                if let Some(dir) = out_dir {
                    let restored = PolicyModel::from_params(*model.config(), snapshot)?;
                    save_checkpoint(&restored, &dir.join("diverged.ckpt"))?;
                }
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        on_step(&m);
        report.metrics.push(m);
        let done = step + 1;
        if cfg.validate_every > 0 && done % cfg.validate_every == 0 {
            report.validations.extend(validate_model(model, cfg, done)?);
        }
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
                let p = dir.join(format!("step-{done}.ckpt"));
                save_checkpoint(model, &p)?;
                report.checkpoints.push(p);
            }
        }
    }
    if let Some(dir) = out_dir {
        write_csv(&dir.join("metrics.csv"), &report.metrics)?;
        write_csv(&dir.join("validation.csv"), &report.validations)?;
        let p = dir.join("final.ckpt");
        save_checkpoint(model, &p)?;
        report.checkpoints.push(p);
    }
    Ok(report)
}

/// Scheme and width of a run, for labelling reports.
pub fn run_label(cfg: &RolloutConfig) -> String {
    let scheme = match cfg.scheme {
        AggregationScheme::Uniform => "uniform",
        AggregationScheme::Reweighted => "reweighted",
    };
    format!("{}-k{}-{}", cfg.mode, cfg.width(), scheme)
}
