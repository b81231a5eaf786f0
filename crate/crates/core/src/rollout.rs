//! Trajectory generation: a multiplex thinking phase, an argmax stopping
//! test, then discrete answer decoding. Also replays stored trajectories to
//! recompute their factorized log-probability.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::CoefficientMap;
use crate::error::{Error, Result};
use crate::model::{ContextSequence, PolicyModel};
use crate::rng::{substream, Rng};
use crate::sampler::{
    build_selection, compute_coefficients, sample_multiplex, shape_distribution, step_logprob,
    AggregationScheme, MultiplexSample, ProbVector, Selection,
};
use crate::tasks::{verify, TaskInstance, EOS, EOT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// K sampled tokens aggregated into one continuous token per step.
    Multiplex,
    /// Plain chain-of-thought: one sampled token per step.
    #[serde(rename = "discrete")]
    DiscreteCoT,
    /// Deterministic full-distribution mixture per step (inference-only baseline).
    #[serde(rename = "soft")]
    SoftThinking,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Multiplex => "multiplex",
            Mode::DiscreteCoT => "discrete",
            Mode::SoftThinking => "soft",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiplex" => Ok(Mode::Multiplex),
            "discrete" => Ok(Mode::DiscreteCoT),
            "soft" => Ok(Mode::SoftThinking),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

/// When the thinking phase ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StopRule {
    /// End thinking when the most probable next token is EOT. EOT is never
    /// drawn into a multiplex token.
    #[default]
    Argmax,
    /// End thinking as soon as any of the K draws is EOT.
    AnySampled,
}

impl std::str::FromStr for StopRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "argmax" => Ok(StopRule::Argmax),
            "any-sampled" => Ok(StopRule::AnySampled),
            other => Err(Error::Config(format!("unknown stop rule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    #[serde(rename = "K")]
    pub k: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_think: usize,
    pub max_answer: usize,
    pub scheme: AggregationScheme,
    pub mode: Mode,
    #[serde(default)]
    pub stop_rule: StopRule,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            k: 3,
            temperature: 1.0,
            top_p: 1.0,
            max_think: 8,
            max_answer: 4,
            scheme: AggregationScheme::Reweighted,
            mode: Mode::Multiplex,
            stop_rule: StopRule::Argmax,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if self.max_think == 0 || self.max_answer == 0 {
            return Err(Error::Config("thinking and answer budgets must be at least 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p must lie in (0, 1], got {}", self.top_p)));
        }
        if self.mode == Mode::SoftThinking && self.stop_rule == StopRule::AnySampled {
            return Err(Error::Config("soft thinking draws no samples; use the argmax stop rule".into()));
        }
        Ok(())
    }

    /// Draws per thinking step actually used (discrete CoT is always 1).
    pub fn width(&self) -> usize {
        match self.mode {
            Mode::DiscreteCoT => 1,
            _ => self.k,
        }
    }

    /// The same config with `k` replaced by the effective width.
    pub fn normalized(mut self) -> Self {
        self.k = self.width();
        self
    }
}

/// Sample-multiplicity class of a thinking step.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diversity {
    /// All draws agree.
    Consensus,
    /// K = 3 with two draws agreeing.
    Majority21,
    /// Every draw differs.
    AllDistinct,
    /// Any other multiplicity pattern, sorted decreasing.
    Signature(Vec<usize>),
    /// Soft-thinking mixture; nothing was sampled.
    Dense,
}

pub fn classify_diversity(sel: &Selection) -> Diversity {
    let sig = sel.signature();
    if sig.len() == 1 {
        Diversity::Consensus
    } else if sig == [2, 1] {
        Diversity::Majority21
    } else if sig.len() == sel.k() {
        Diversity::AllDistinct
    } else {
        Diversity::Signature(sig)
    }
}

/// One emitted thinking position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplexStep {
    pub samples: Vec<usize>,
    pub logprobs: Vec<f64>,
    pub coefficients: CoefficientMap,
    /// Entropy (nats) of the shaped distribution at this step.
    pub entropy: f64,
    pub diversity: Diversity,
    /// The multiplex token fed back to the model; rebuilt from
    /// `coefficients` when read from a log.
    #[serde(skip)]
    pub token_vector: Vec<f64>,
}

impl MultiplexStep {
    pub fn sample(&self) -> MultiplexSample {
        MultiplexSample { token_ids: self.samples.clone(), logprobs: self.logprobs.clone() }
    }

    pub fn logprob(&self) -> f64 {
        self.logprobs.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The answer ended with EOS.
    Stopped,
    /// Thinking never ended; no answer was produced.
    ThinkBudgetExhausted,
    /// The answer hit its budget without EOS.
    AnswerBudgetExhausted,
}

/// One episode: prompt, multiplex thinking trace, discrete answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode_id: u64,
    pub question_id: u64,
    #[serde(flatten)]
    pub config: RolloutConfig,
    pub prompt_tokens: Vec<usize>,
    pub steps: Vec<MultiplexStep>,
    /// Draws of the step that ended thinking under the any-sampled rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_samples: Option<MultiplexSample>,
    pub answer_tokens: Vec<usize>,
    pub answer_logprobs: Vec<f64>,
    pub total_logprob: f64,
    pub reward: f64,
    pub termination: Termination,
}

impl Trajectory {
    pub fn think_len(&self) -> usize {
        self.steps.len()
    }

    pub fn answer_len(&self) -> usize {
        self.answer_tokens.len()
    }

    pub fn answered(&self) -> bool {
        self.termination != Termination::ThinkBudgetExhausted
    }

    /// Number of constituent discrete draws carrying a log-probability.
    pub fn num_sample_terms(&self) -> usize {
        self.steps.iter().map(|s| s.samples.len()).sum::<usize>()
            + self.stop_samples.as_ref().map_or(0, |s| s.k())
            + self.answer_tokens.len()
    }

    /// Structural checks for records read from a log.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Schema(format!("episode {}: {m}", self.episode_id)));
        self.config.validate().or_else(|e| bad(e.to_string()))?;
        if self.steps.len() > self.config.max_think {
            return bad("more thinking steps than max_think".into());
        }
        if self.answer_tokens.len() > self.config.max_answer {
            return bad("more answer tokens than max_answer".into());
        }
        if self.answer_tokens.len() != self.answer_logprobs.len() {
            return bad("answer tokens and log-probs differ in length".into());
        }
        for s in &self.steps {
            if s.samples.len() != s.logprobs.len() {
                return bad("step samples and log-probs differ in length".into());
            }
            if s.diversity != Diversity::Dense && s.samples.len() != self.config.width() {
                return bad("step sample count differs from K".into());
            }
            s.coefficients.validate().or_else(|e| bad(e.to_string()))?;
        }
        match self.termination {
            Termination::ThinkBudgetExhausted if !self.answer_tokens.is_empty() => {
                bad("answer present after exhausted thinking budget".into())
            }
            Termination::Stopped if self.answer_tokens.last() != Some(&EOS) => {
                bad("stopped answer does not end in EOS".into())
            }
            Termination::AnswerBudgetExhausted if self.answer_tokens.len() != self.config.max_answer => {
                bad("answer budget termination with a short answer".into())
            }
            _ if !(self.reward == 0.0 || self.reward == 1.0) => bad("reward must be 0 or 1".into()),
            _ => Ok(()),
        }
    }
}

/// Keys every trajectory record must carry.
pub const TRAJECTORY_KEYS: [&str; 13] = [
    "episode_id",
    "question_id",
    "mode",
    "K",
    "scheme",
    "prompt_tokens",
    "steps",
    "answer_tokens",
    "answer_logprobs",
    "total_logprob",
    "reward",
    "termination",
    "temperature",
];

/// Parses and validates one JSONL trajectory record.
pub fn parse_trajectory(line: &str) -> Result<Trajectory> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Schema(e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| Error::Schema("record is not an object".into()))?;
    if let Some(k) = TRAJECTORY_KEYS.iter().find(|k| !obj.contains_key(**k)) {
        return Err(Error::Schema(format!("missing key `{k}`")));
    }
    let traj: Trajectory = serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
    traj.validate()?;
    Ok(traj)
}

/// Reads a trajectory log; errors name the offending line.
pub fn read_trajectory_log(path: &std::path::Path) -> Result<Vec<Trajectory>> {
    let text = std::fs::read_to_string(path)?;
    let trajs = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_trajectory(l).map_err(|e| Error::Schema(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect::<Result<Vec<_>>>()?;
    if trajs.is_empty() {
        return Err(Error::Schema(format!("{}: empty trajectory log", path.display())));
    }
    Ok(trajs)
}

/// True iff the most probable token is `eot` (ties go to the lowest id).
pub fn should_stop(dist: &ProbVector, eot: usize) -> bool {
    dist.argmax() == eot
}

/// The distribution thinking draws come from under `rule`.
pub(crate) fn thinking_distribution(dist: &ProbVector, rule: StopRule) -> Result<ProbVector> {
    match rule {
        StopRule::Argmax => dist.without(EOT),
        StopRule::AnySampled => Ok(dist.clone()),
    }
}

fn next_distribution(model: &PolicyModel, ctx: &ContextSequence, cfg: &RolloutConfig) -> Result<ProbVector> {
    let logits = model.next_token_logits(ctx)?;
    shape_distribution(logits.as_slice().expect("contiguous logits"), cfg.temperature, cfg.top_p)
}

/// Most thinking steps that still leave room for EOT and a full answer.
fn think_capacity(model: &PolicyModel, prompt_len: usize, cfg: &RolloutConfig) -> Result<usize> {
    let max = model.config().max_context;
    if prompt_len == 0 {
        return Err(Error::LengthMismatch("empty prompt".into()));
    }
    if prompt_len + cfg.max_answer > max {
        return Err(Error::ContextOverflow { len: prompt_len + cfg.max_answer, max });
    }
    Ok(cfg.max_think.min(max - prompt_len - cfg.max_answer))
}

fn soft_step(model: &PolicyModel, dist: &ProbVector) -> Result<(CoefficientMap, Array1<f64>)> {
    let masked = dist.without(EOT)?;
    let coeffs = CoefficientMap::new(
        masked.probs().iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(i, &p)| (i, p)).collect(),
    )?;
    let vector = model.embedding().mixture_dense(masked.probs())?;
    Ok((coeffs, vector))
}

/// Samples one trajectory for `task`.
pub fn rollout(
    model: &PolicyModel,
    task: &TaskInstance,
    cfg: &RolloutConfig,
    episode_id: u64,
    rng: &mut Rng,
) -> Result<Trajectory> {
    cfg.validate()?;
    let cfg = cfg.normalized();
    let capacity = think_capacity(model, task.prompt_tokens.len(), &cfg)?;
    let table = model.embedding();
    let mut ctx = ContextSequence::from_rows(model.embed_tokens(&task.prompt_tokens)?);
    let mut steps = Vec::new();
    let mut stop_samples = None;
    let mut total = 0.0;

    let thinking_done = loop {
        let dist = next_distribution(model, &ctx, &cfg)?;
        if cfg.stop_rule == StopRule::Argmax && should_stop(&dist, EOT) {
            break true;
        }
        if steps.len() >= capacity {
            break false;
        }
        let entropy = dist.entropy();
        let step = match cfg.mode {
            Mode::SoftThinking => {
                let (coefficients, vector) = soft_step(model, &dist)?;
                MultiplexStep {
                    samples: vec![],
                    logprobs: vec![],
                    coefficients,
                    entropy,
                    diversity: Diversity::Dense,
                    token_vector: vector.to_vec(),
                }
            }
            Mode::Multiplex | Mode::DiscreteCoT => {
                let draw_from = thinking_distribution(&dist, cfg.stop_rule)?;
                let sample = sample_multiplex(&draw_from, cfg.k, rng)?;
                total += step_logprob(&sample);
                if sample.token_ids.contains(&EOT) {
                    stop_samples = Some(sample);
                    break true;
                }
                let sel = build_selection(&sample);
                let coefficients = compute_coefficients(&sel, &draw_from, cfg.scheme)?;
                let vector = table.aggregate(&coefficients)?;
                MultiplexStep {
                    samples: sample.token_ids,
                    logprobs: sample.logprobs,
                    coefficients,
                    entropy,
                    diversity: classify_diversity(&sel),
                    token_vector: vector.to_vec(),
                }
            }
        };
        ctx.push(Array1::from(step.token_vector.clone()).view())?;
        steps.push(step);
    };

    let mut answer_tokens = Vec::new();
    let mut answer_logprobs = Vec::new();
    let termination = if !thinking_done {
        Termination::ThinkBudgetExhausted
    } else {
        ctx.push(table.row(EOT)?)?;
        let mut term = Termination::AnswerBudgetExhausted;
        for _ in 0..cfg.max_answer {
            let dist = next_distribution(model, &ctx, &cfg)?;
            let s = sample_multiplex(&dist, 1, rng)?;
            let (tok, lp) = (s.token_ids[0], s.logprobs[0]);
            total += lp;
            answer_tokens.push(tok);
            answer_logprobs.push(lp);
            if tok == EOS {
                term = Termination::Stopped;
                break;
            }
            if answer_tokens.len() < cfg.max_answer {
                ctx.push(table.row(tok)?)?;
            }
        }
        term
    };

    let reward = if termination == Termination::ThinkBudgetExhausted { 0.0 } else { verify(&answer_tokens, task) };
    Ok(Trajectory {
        episode_id,
        question_id: task.id,
        config: cfg,
        prompt_tokens: task.prompt_tokens.clone(),
        steps,
        stop_samples,
        answer_tokens,
        answer_logprobs,
        total_logprob: total,
        reward,
        termination,
    })
}

/// One rollout job: a task and the episode id that seeds its stream.
#[derive(Debug, Clone, Copy)]
pub struct RolloutJob<'a> {
    pub task: &'a TaskInstance,
    pub episode_id: u64,
}

/// Runs jobs in parallel; each episode draws from `substream(seed, episode_id, 0)`,
/// so results do not depend on scheduling.
pub fn rollout_many(model: &PolicyModel, jobs: &[RolloutJob<'_>], cfg: &RolloutConfig, seed: u64) -> Result<Vec<Trajectory>> {
    jobs.par_iter()
        .map(|job| {
            let mut rng = substream(seed, job.episode_id, 0);
            rollout(model, job.task, cfg, job.episode_id, &mut rng)
        })
        .collect()
}

fn replay_logprob(dist: &ProbVector, token: usize, what: &str) -> Result<f64> {
    let p = dist.prob(token);
    if p <= 0.0 {
        return Err(Error::ReplayMismatch(format!("{what} token {token} is outside the replayed support")));
    }
    Ok(p.ln())
}

/// Replays `traj` step by step under `model`, rebuilding every multiplex
/// token from the stored draws and freshly computed distributions, and
/// returns the factorized log-probability.
pub fn recompute_logprob(model: &PolicyModel, traj: &Trajectory) -> Result<f64> {
    let cfg = traj.config.normalized();
    let table = model.embedding();
    let mut ctx = ContextSequence::from_rows(model.embed_tokens(&traj.prompt_tokens)?);
    let mut total = 0.0;
    for step in &traj.steps {
        let dist = next_distribution(model, &ctx, &cfg)?;
        let vector = if cfg.mode == Mode::SoftThinking {
            soft_step(model, &dist)?.1
        } else {
            let draw_from = thinking_distribution(&dist, cfg.stop_rule)?;
            for &t in &step.samples {
                total += replay_logprob(&draw_from, t, "thinking")?;
            }
            let sel = build_selection(&step.sample());
            let coeffs = compute_coefficients(&sel, &draw_from, cfg.scheme)
                .map_err(|e| Error::ReplayMismatch(e.to_string()))?;
            table.aggregate(&coeffs)?
        };
        ctx.push(vector.view())?;
    }
    if let Some(stop) = &traj.stop_samples {
        let dist = next_distribution(model, &ctx, &cfg)?;
        for &t in &stop.token_ids {
            total += replay_logprob(&dist, t, "stop")?;
        }
    }
    if traj.answered() {
        ctx.push(table.row(EOT)?)?;
        for (i, &tok) in traj.answer_tokens.iter().enumerate() {
            let dist = next_distribution(model, &ctx, &cfg)?;
            total += replay_logprob(&dist, tok, "answer")?;
            if i + 1 < traj.answer_tokens.len() {
                ctx.push(table.row(tok)?)?;
            }
        }
    }
    Ok(total)
}

/// Where one input row of a replayed trajectory comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSource {
    Token(usize),
    Mixture(CoefficientMap),
}

/// A log-probability term: the token drawn from the distribution predicted
/// at logits row `row`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSite {
    pub row: usize,
    pub token: usize,
    pub behavior_logprob: f64,
    /// Draw came from the distribution with EOT removed.
    pub eot_masked: bool,
}

/// Teacher-forced layout of a trajectory with its stored coefficients.
#[derive(Debug, Clone)]
pub struct TrajectoryLayout {
    pub sources: Vec<InputSource>,
    pub sites: Vec<SampleSite>,
}

impl TrajectoryLayout {
    pub fn of(traj: &Trajectory) -> Self {
        let cfg = traj.config;
        let p = traj.prompt_tokens.len();
        let mut sources: Vec<InputSource> = traj.prompt_tokens.iter().map(|&t| InputSource::Token(t)).collect();
        let mut sites = Vec::new();
        let masked = cfg.stop_rule == StopRule::Argmax;
        for (i, step) in traj.steps.iter().enumerate() {
            for (&token, &lp) in step.samples.iter().zip(&step.logprobs) {
                sites.push(SampleSite { row: p - 1 + i, token, behavior_logprob: lp, eot_masked: masked });
            }
            sources.push(InputSource::Mixture(step.coefficients.clone()));
        }
        let s = traj.steps.len();
        if let Some(stop) = &traj.stop_samples {
            for (&token, &lp) in stop.token_ids.iter().zip(&stop.logprobs) {
                sites.push(SampleSite { row: p - 1 + s, token, behavior_logprob: lp, eot_masked: false });
            }
        }
        if traj.answered() {
            sources.push(InputSource::Token(EOT));
            let n = traj.answer_tokens.len();
            for (j, (&token, &lp)) in traj.answer_tokens.iter().zip(&traj.answer_logprobs).enumerate() {
                sites.push(SampleSite { row: p + s + j, token, behavior_logprob: lp, eot_masked: false });
                if j + 1 < n {
                    sources.push(InputSource::Token(token));
                }
            }
        }
        Self { sources, sites }
    }

    /// Input matrix built from the current embedding table.
    pub fn inputs(&self, model: &PolicyModel) -> Result<Array2<f64>> {
        let table = model.embedding();
        let mut x = Array2::zeros((self.sources.len(), table.dim()));
        for (mut row, src) in x.rows_mut().into_iter().zip(&self.sources) {
            match src {
                InputSource::Token(t) => row.assign(&table.row(*t)?),
                InputSource::Mixture(c) => row.assign(&table.aggregate(c)?),
            }
        }
        Ok(x)
    }
}
