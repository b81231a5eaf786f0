//! Pass@k, entropy-reduction and length/diversity statistics.

use std::collections::BTreeMap;

use num_rational::Ratio;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::rollout::{Diversity, Trajectory};

fn check_nck(n: usize, c: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::Parameter(format!("k = {k} must lie in 1..={n}")));
    }
    if c > n {
        return Err(Error::Parameter(format!("c = {c} exceeds n = {n}")));
    }
    Ok(())
}

/// `1 - C(n-c, k) / C(n, k)` in product form.
pub fn pass_at_k_unbiased(n: usize, c: usize, k: usize) -> Result<f64> {
    check_nck(n, c, k)?;
    if n - c < k {
        return Ok(1.0);
    }
    let miss: f64 = (n - c + 1..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - miss)
}

/// Exact rational value of the same estimator.
pub fn pass_at_k_exact(n: usize, c: usize, k: usize) -> Result<Ratio<u128>> {
    check_nck(n, c, k)?;
    if n > 100 {
        return Err(Error::Parameter(format!("exact pass@k supports n <= 100, got {n}")));
    }
    if n - c < k {
        return Ok(Ratio::from_integer(1));
    }
    let mut miss = Ratio::from_integer(1u128);
    for i in n - c + 1..=n {
        miss *= Ratio::new((i - k) as u128, i as u128);
    }
    Ok(Ratio::from_integer(1) - miss)
}

/// Per-question sample outcomes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOutcomes {
    pub question_id: u64,
    pub outcomes: Vec<bool>,
}

impl RunOutcomes {
    pub fn new(question_id: u64, outcomes: Vec<bool>) -> Self {
        Self { question_id, outcomes }
    }

    pub fn n(&self) -> usize {
        self.outcomes.len()
    }

    pub fn c(&self) -> usize {
        self.outcomes.iter().filter(|&&b| b).count()
    }

    pub fn pass_at_k(&self, k: usize) -> Result<f64> {
        pass_at_k_unbiased(self.n(), self.c(), k)
    }
}

/// Groups trajectories by question, in ascending question id and episode order.
pub fn outcomes_from_log(trajs: &[Trajectory]) -> Result<Vec<RunOutcomes>> {
    if trajs.is_empty() {
        return Err(Error::Schema("empty trajectory log".into()));
    }
    let mut by_q: BTreeMap<u64, Vec<(u64, bool)>> = BTreeMap::new();
    for t in trajs {
        t.validate()?;
        by_q.entry(t.question_id).or_default().push((t.episode_id, t.reward == 1.0));
    }
    Ok(by_q
        .into_iter()
        .map(|(q, mut v)| {
            v.sort_by_key(|&(e, _)| e);
            RunOutcomes::new(q, v.into_iter().map(|(_, b)| b).collect())
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapEstimate {
    pub mean: f64,
    /// Standard deviation of the replicate estimates.
    pub stderr: f64,
}

/// `b` resamples of size `n` with replacement; each is scored with the
/// unbiased estimator.
pub fn pass_at_k_bootstrap(outcomes: &RunOutcomes, k: usize, b: usize, rng: &mut Rng) -> Result<BootstrapEstimate> {
    let n = outcomes.n();
    check_nck(n, outcomes.c(), k)?;
    if b == 0 {
        return Err(Error::Parameter("bootstrap needs at least one resample".into()));
    }
    let reps: Vec<f64> = (0..b)
        .map(|_| {
            let c = (0..n).filter(|_| outcomes.outcomes[rng.gen_range(0..n)]).count();
            pass_at_k_unbiased(n, c, k)
        })
        .collect::<Result<_>>()?;
    let mean = reps.iter().sum::<f64>() / b as f64;
    let var = reps.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / b as f64;
    Ok(BootstrapEstimate { mean, stderr: var.sqrt() })
}

/// One row of a Pass@k curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassAtKRow {
    pub k: usize,
    pub mean: f64,
    pub stderr: f64,
}

/// Macro-averaged Pass@k for each `k`; `stderr` is the standard error of
/// the per-question values.
pub fn pass_at_k_curve(runs: &[RunOutcomes], ks: &[usize]) -> Result<Vec<PassAtKRow>> {
    if runs.is_empty() {
        return Err(Error::Schema("no questions".into()));
    }
    ks.iter()
        .map(|&k| {
            let vals = runs.iter().map(|r| r.pass_at_k(k)).collect::<Result<Vec<_>>>()?;
            let m = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / m;
            let stderr = if vals.len() > 1 {
                (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0) / m).sqrt()
            } else {
                0.0
            };
            Ok(PassAtKRow { k, mean, stderr })
        })
        .collect()
}

/// Powers of two up to `n`.
pub fn default_ks(n: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |k| Some(k * 2)).take_while(|&k| k <= n).collect()
}

/// Percent decrease of mean entropy from the first to the last `window` entries.
pub fn entropy_reduction_ratio(series: &[f64], window: usize) -> Result<f64> {
    if window == 0 {
        return Err(Error::Parameter("window must be positive".into()));
    }
    if series.len() < 2 * window {
        return Err(Error::Parameter(format!(
            "entropy series of length {} is shorter than two windows of {window}",
            series.len()
        )));
    }
    if series.iter().any(|h| !h.is_finite() || *h < 0.0) {
        return Err(Error::Parameter("entropy series has negative or non-finite entries".into()));
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let start = mean(&series[..window]);
    let end = mean(&series[series.len() - window..]);
    if start == 0.0 {
        return Err(Error::UndefinedRatio("starting entropy is zero".into()));
    }
    Ok((start - end) / start * 100.0)
}

/// Mean thinking-step entropy: averaged within each trajectory, then across
/// trajectories that have at least one step. `NaN` when none do.
pub fn mean_step_entropy(trajs: &[Trajectory]) -> f64 {
    let per: Vec<f64> = trajs
        .iter()
        .filter(|t| !t.steps.is_empty())
        .map(|t| t.steps.iter().map(|s| s.entropy).sum::<f64>() / t.steps.len() as f64)
        .collect();
    if per.is_empty() {
        f64::NAN
    } else {
        per.iter().sum::<f64>() / per.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthDiversityStats {
    pub trajectories: usize,
    pub mean_think_len: f64,
    pub mean_answer_len: f64,
    pub mean_reward: f64,
    pub thinking_steps: usize,
    pub consensus_frac: f64,
    pub majority21_frac: f64,
    pub distinct_frac: f64,
    /// Steps with any other multiplicity pattern or soft mixtures.
    pub other_frac: f64,
}

pub fn length_and_diversity_stats(trajs: &[Trajectory]) -> Result<LengthDiversityStats> {
    if trajs.is_empty() {
        return Err(Error::Schema("empty trajectory log".into()));
    }
    let n = trajs.len() as f64;
    let mut counts = [0usize; 4];
    for s in trajs.iter().flat_map(|t| &t.steps) {
        counts[match s.diversity {
            Diversity::Consensus => 0,
            Diversity::Majority21 => 1,
            Diversity::AllDistinct => 2,
            _ => 3,
        }] += 1;
    }
    let steps: usize = counts.iter().sum();
    let frac = |c: usize| if steps == 0 { 0.0 } else { c as f64 / steps as f64 };
    Ok(LengthDiversityStats {
        trajectories: trajs.len(),
        mean_think_len: trajs.iter().map(|t| t.think_len() as f64).sum::<f64>() / n,
        mean_answer_len: trajs.iter().map(|t| t.answer_len() as f64).sum::<f64>() / n,
        mean_reward: trajs.iter().map(|t| t.reward).sum::<f64>() / n,
        thinking_steps: steps,
        consensus_frac: frac(counts[0]),
        majority21_frac: frac(counts[1]),
        distinct_frac: frac(counts[2]),
        other_frac: frac(counts[3]),
    })
}
