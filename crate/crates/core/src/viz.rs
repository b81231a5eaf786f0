//! Plain-text trajectory rendering and plot data export.
//!
//! Thinking steps print one per line. A consensus step prints its token
//! bare; a 2+1 step tags the majority `[M]` and the minority `[m]`; an
//! all-distinct step tags draws `[1]`, `[2]`, ... in draw order. Other
//! multiplicity patterns use `[Nx]` and soft-thinking steps `[~]` followed
//! by their three heaviest tokens.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grpo::StepMetrics;
use crate::metrics::PassAtKRow;
use crate::rollout::{Diversity, MultiplexStep, Trajectory};
use crate::tasks::Vocabulary;

pub const ANSWER_SEPARATOR: &str = "=== answer ===";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RenderOptions {
    /// Wrap majority/minority tokens in ANSI colors.
    pub color: bool,
}

const GREEN: &str = "\x1b[32m";
const YELLOW: &str = "\x1b[33m";
const RESET: &str = "\x1b[0m";

fn paint(text: String, color: &str, opts: RenderOptions) -> String {
    if opts.color {
        format!("{color}{text}{RESET}")
    } else {
        text
    }
}

fn tokens(ids: &[usize], vocab: &Vocabulary) -> Result<String> {
    Ok(ids.iter().map(|&t| vocab.token_text(t)).collect::<Result<Vec<_>>>()?.join(" "))
}

fn render_step(step: &MultiplexStep, vocab: &Vocabulary, opts: RenderOptions) -> Result<String> {
    let text = |t: usize| vocab.token_text(t).map_err(|e| Error::Render(e.to_string()));
    let mut counts: Vec<(usize, usize)> = Vec::new();
    for &t in &step.samples {
        match counts.iter_mut().find(|(id, _)| *id == t) {
            Some((_, c)) => *c += 1,
            None => counts.push((t, 1)),
        }
    }
    Ok(match &step.diversity {
        Diversity::Consensus => {
            let t = step.samples.first().copied().ok_or_else(|| Error::Render("consensus step without samples".into()))?;
            text(t)?
        }
        Diversity::Majority21 => {
            let major = counts.iter().find(|(_, c)| *c == 2).map(|p| p.0);
            let minor = counts.iter().find(|(_, c)| *c == 1).map(|p| p.0);
            let (Some(a), Some(b)) = (major, minor) else {
                return Err(Error::Render("2+1 step whose samples are not 2+1".into()));
            };
            format!("{} {}", paint(format!("[M]{}", text(a)?), GREEN, opts), paint(format!("[m]{}", text(b)?), YELLOW, opts))
        }
        Diversity::AllDistinct => step
            .samples
            .iter()
            .enumerate()
            .map(|(i, &t)| Ok(format!("[{}]{}", i + 1, text(t)?)))
            .collect::<Result<Vec<_>>>()?
            .join(" "),
        Diversity::Signature(_) => {
            let mut sorted = counts.clone();
            sorted.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            sorted
                .iter()
                .map(|&(t, c)| Ok(format!("[{c}x]{}", text(t)?)))
                .collect::<Result<Vec<_>>>()?
                .join(" ")
        }
        Diversity::Dense => {
            let mut top: Vec<(usize, f64)> = step.coefficients.iter().collect();
            top.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let parts = top
                .iter()
                .take(3)
                .map(|&(t, w)| Ok(format!("{}:{w:.2}", text(t)?)))
                .collect::<Result<Vec<_>>>()?;
            format!("[~] {}", parts.join(" "))
        }
    })
}

/// Deterministic text view of a trajectory.
pub fn render_trajectory(traj: &Trajectory, vocab: &Vocabulary, opts: RenderOptions) -> Result<String> {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "episode {} question {} | {} K={} {} | reward {} | {}",
        traj.episode_id,
        traj.question_id,
        traj.config.mode,
        traj.config.width(),
        traj.config.scheme,
        traj.reward,
        serde_json::to_value(traj.termination)?.as_str().unwrap_or("?"),
    );
    let _ = writeln!(out, "prompt: {}", tokens(&traj.prompt_tokens, vocab).map_err(|e| Error::Render(e.to_string()))?);
    for (i, step) in traj.steps.iter().enumerate() {
        let _ = writeln!(out, "{:>3}: {}", i + 1, render_step(step, vocab, opts)?);
    }
    if let Some(stop) = &traj.stop_samples {
        let _ = writeln!(out, "stop: {}", tokens(&stop.token_ids, vocab).map_err(|e| Error::Render(e.to_string()))?);
    }
    let _ = writeln!(out, "{ANSWER_SEPARATOR}");
    let _ = writeln!(out, "{}", tokens(&traj.answer_tokens, vocab).map_err(|e| Error::Render(e.to_string()))?);
    Ok(out)
}

/// One Pass@k point of a multi-run comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub label: String,
    pub mode: String,
    #[serde(rename = "K")]
    pub width: usize,
    pub scheme: String,
    pub k: usize,
    pub mean: f64,
    pub stderr: f64,
}

fn header(cols: &[&str]) -> String {
    format!("# {}\n", cols.join(" "))
}

/// `k mean stderr`, one row per k (plot with a log-scaled x axis).
pub fn passk_series(rows: &[PassAtKRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Schema("empty pass@k table".into()));
    }
    let mut s = header(&["k", "mean", "stderr"]);
    for r in rows {
        let _ = writeln!(s, "{} {} {}", r.k, r.mean, r.stderr);
    }
    Ok(s)
}

/// `step mean_think_len mean_answer_len`.
pub fn length_series(metrics: &[StepMetrics]) -> String {
    let mut s = header(&["step", "mean_think_len", "mean_answer_len"]);
    for m in metrics {
        let _ = writeln!(s, "{} {} {}", m.step, m.mean_think_len, m.mean_answer_len);
    }
    s
}

/// `step mean_step_entropy`.
pub fn entropy_series(metrics: &[StepMetrics]) -> String {
    let mut s = header(&["step", "mean_step_entropy"]);
    for m in metrics {
        let _ = writeln!(s, "{} {}", m.step, m.mean_step_entropy);
    }
    s
}

/// One block per label, in order of first appearance, separated by two
/// blank lines so each block is a separate data-set index.
pub fn compare_series(rows: &[CompareRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Schema("empty comparison table".into()));
    }
    let mut labels: Vec<&str> = Vec::new();
    for r in rows {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
    }
    let mut s = String::new();
    for (i, label) in labels.iter().enumerate() {
        if i > 0 {
            s.push_str("\n\n");
        }
        let _ = writeln!(s, "# series {label}");
        s.push_str(&header(&["k", "mean", "stderr"]));
        for r in rows.iter().filter(|r| r.label == *label) {
            let _ = writeln!(s, "{} {} {}", r.k, r.mean, r.stderr);
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::CoefficientMap;
    use crate::rollout::{RolloutConfig, Termination};
    use crate::tasks::{EOS, TASK_VOCAB_MIN};

    fn step(samples: Vec<usize>, diversity: Diversity) -> MultiplexStep {
        MultiplexStep {
            logprobs: vec![-0.5; samples.len()],
            coefficients: CoefficientMap::singleton(samples.first().copied().unwrap_or(4)),
            samples,
            entropy: 0.3,
            diversity,
            token_vector: vec![],
        }
    }

    fn traj(steps: Vec<MultiplexStep>) -> Trajectory {
        Trajectory {
            episode_id: 3,
            question_id: 1,
            config: RolloutConfig::default(),
            prompt_tokens: vec![5, 14, 6, 1],
            steps,
            stop_samples: None,
            answer_tokens: vec![11, EOS],
            answer_logprobs: vec![-0.1, -0.1],
            total_logprob: -1.0,
            reward: 1.0,
            termination: Termination::Stopped,
        }
    }

    fn vocab() -> Vocabulary {
        Vocabulary::new(TASK_VOCAB_MIN).unwrap()
    }

    /// Recovers per-step diversity from rendered text.
    fn parse(text: &str) -> Vec<Diversity> {
        let body = text.split(ANSWER_SEPARATOR).next().unwrap();
        body.lines()
            .skip(2)
            .filter(|l| !l.starts_with("stop:"))
            .map(|l| {
                let rest = l.split_once(": ").unwrap().1;
                if rest.contains("[M]") {
                    Diversity::Majority21
                } else if rest.contains("[1]") {
                    Diversity::AllDistinct
                } else if rest.starts_with("[~]") {
                    Diversity::Dense
                } else if rest.contains("x]") {
                    Diversity::Signature(
                        rest.split_whitespace().map(|w| w[1..w.find('x').unwrap()].parse().unwrap()).collect(),
                    )
                } else {
                    Diversity::Consensus
                }
            })
            .collect()
    }

    #[test]
    fn consensus_only_has_no_tags() {
        let t = traj(vec![step(vec![4, 4, 4], Diversity::Consensus), step(vec![7, 7, 7], Diversity::Consensus)]);
        let s = render_trajectory(&t, &vocab(), RenderOptions::default()).unwrap();
        assert!(!s.lines().skip(2).any(|l| l.contains('[')), "{s}");
        assert!(s.contains("  1: 0\n") && s.contains("  2: 3\n"));
    }

    #[test]
    fn majority_fixture() {
        let t = traj(vec![step(vec![2, 2, 9], Diversity::Majority21)]);
        let v = Vocabulary::new(32).unwrap();
        let s = render_trajectory(&t, &v, RenderOptions::default()).unwrap();
        let line = s.lines().nth(2).unwrap();
        assert!(line.contains("[M]</think>") && line.contains("[m]5"), "{line}");
        assert!(line.find("[M]").unwrap() < line.find("[m]").unwrap());
    }

    #[test]
    fn empty_thinking_renders_only_the_answer() {
        let s = render_trajectory(&traj(vec![]), &vocab(), RenderOptions::default()).unwrap();
        let lines: Vec<_> = s.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[2], ANSWER_SEPARATOR);
        assert_eq!(lines[3], "7 <eos>");
    }

    #[test]
    fn round_trip_recovers_diversity() {
        let steps = vec![
            step(vec![4, 4, 4], Diversity::Consensus),
            step(vec![5, 6, 5], Diversity::Majority21),
            step(vec![4, 5, 6], Diversity::AllDistinct),
            step(vec![4, 4, 5, 5, 6], Diversity::Signature(vec![2, 2, 1])),
            step(vec![8, 8, 8], Diversity::Consensus),
        ];
        let expect: Vec<_> = steps.iter().map(|s| s.diversity.clone()).collect();
        let t = traj(steps);
        let s = render_trajectory(&t, &vocab(), RenderOptions::default()).unwrap();
        assert_eq!(parse(&s), expect);
        assert_eq!(s, render_trajectory(&t, &vocab(), RenderOptions::default()).unwrap());
        let colored = render_trajectory(&t, &vocab(), RenderOptions { color: true }).unwrap();
        assert!(colored.contains(GREEN));
    }

    #[test]
    fn out_of_vocabulary_is_a_render_error() {
        let t = traj(vec![step(vec![40, 40, 40], Diversity::Consensus)]);
        assert!(matches!(render_trajectory(&t, &vocab(), RenderOptions::default()), Err(Error::Render(_))));
    }

    #[test]
    fn series_shapes() {
        let rows: Vec<_> = [1, 2, 4].iter().map(|&k| PassAtKRow { k, mean: 0.5, stderr: 0.1 }).collect();
        let s = passk_series(&rows).unwrap();
        assert_eq!(s.lines().filter(|l| !l.starts_with('#')).count(), 3);
        let m: Vec<_> = (0..100)
            .map(|step| StepMetrics {
                step,
                mean_reward: 0.0,
                loss: 0.0,
                mean_step_entropy: 1.0,
                mean_think_len: 2.0,
                mean_answer_len: 1.0,
                consensus_frac: 0.0,
                majority21_frac: 0.0,
                distinct_frac: 0.0,
                grad_norm: 0.0,
            })
            .collect();
        assert_eq!(entropy_series(&m).lines().filter(|l| !l.starts_with('#')).count(), 100);
        assert_eq!(length_series(&m).lines().count(), 101);
        let cmp: Vec<_> = ["multiplex-k3", "discrete-k1"]
            .iter()
            .flat_map(|l| [1, 2].map(|k| CompareRow {
                    label: l.to_string(),
                    mode: l[..l.find('-').unwrap()].to_string(),
                    width: 1,
                    scheme: "reweighted".into(),
                    k,
                    mean: 0.1,
                    stderr: 0.0,
                }))
            .collect();
        let s = compare_series(&cmp).unwrap();
        assert_eq!(s.split("\n\n\n").count(), 2);
        assert!(s.contains("# series multiplex-k3") && s.contains("# series discrete-k1"));
        assert!(passk_series(&[]).is_err());
    }
}
