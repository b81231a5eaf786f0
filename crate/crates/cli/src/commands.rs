use std::path::{Path, PathBuf};

use multiplex_core::config::RunConfig;
use multiplex_core::grpo::{run_label, run_training, sample_outcomes, TrainConfig};
use multiplex_core::io::{read_csv, read_jsonl, write_atomic, write_csv, write_jsonl};
use multiplex_core::metrics::{
    default_ks, entropy_reduction_ratio, length_and_diversity_stats, mean_step_entropy, outcomes_from_log,
    pass_at_k_bootstrap, pass_at_k_curve, PassAtKRow, RunOutcomes,
};
use multiplex_core::model::{load_checkpoint, save_checkpoint};
use multiplex_core::pretrain::pretrain_with;
use multiplex_core::rng::{seeded, substream};
use multiplex_core::rollout::{read_trajectory_log, Mode, RolloutConfig};
use multiplex_core::tasks::generate_set;
use multiplex_core::viz::{self, render_trajectory, CompareRow, RenderOptions};
use multiplex_core::{Error, PolicyModel, Result, TaskInstance, Vocabulary};
use serde::{Deserialize, Serialize};

use crate::args::*;

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(Error::Config(format!("{what} `{}` does not exist", path.display())));
    }
    Ok(())
}

fn load_config(arg: &ConfigArg) -> Result<RunConfig> {
    match &arg.config {
        Some(p) => {
            require_file(p, "config file")?;
            RunConfig::load(p)
        }
        None => Ok(RunConfig::default()),
    }
}

fn load_model(path: &Path) -> Result<PolicyModel> {
    require_file(path, "checkpoint")?;
    load_checkpoint(path)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

pub fn gen_tasks(a: &GenTasksArgs) -> Result<()> {
    if a.n == 0 {
        return Err(Error::Config("--n must be positive".into()));
    }
    let tasks = generate_set(a.task, a.seed, a.first_id, a.n)?;
    write_jsonl(&a.out, &tasks)
}

#[derive(Serialize)]
struct LossRow {
    step: usize,
    loss: f64,
}

pub fn pretrain(a: &PretrainArgs) -> Result<()> {
    let mut cfg = load_config(&a.config)?;
    if let Some(s) = a.steps {
        cfg.pretrain.steps = s;
    }
    if let Some(s) = a.seed {
        cfg.pretrain.seed = s;
    }
    cfg.validate()?;
    let mut model = PolicyModel::new(cfg.model, &mut seeded(cfg.pretrain.seed))?;
    let curve = pretrain_with(&mut model, &cfg.pretrain, |step, loss| {
        if step % 100 == 0 {
            eprintln!("pretrain step {step:>5}  loss {loss:.4}");
        }
    })?;
    if let Some(p) = &a.loss_out {
        let rows: Vec<LossRow> = curve.losses.iter().enumerate().map(|(step, &loss)| LossRow { step, loss }).collect();
        write_csv(p, &rows)?;
    }
    save_checkpoint(&model, &a.out)?;
    if let Some(l) = curve.last() {
        eprintln!("final loss {l:.4}; wrote {}", a.out.display());
    }
    Ok(())
}

fn train_config(cfg: &RunConfig, preset: Option<&str>) -> Result<TrainConfig> {
    match preset {
        Some(name) => TrainConfig::preset(name),
        None => Ok(cfg.train.clone()),
    }
}

pub fn train_rl(a: &TrainArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let mut model = load_model(&a.checkpoint)?;
    let mut train = train_config(&cfg, a.preset.as_deref())?;
    if let Some(s) = a.steps {
        train.total_steps = s;
    }
    if let Some(g) = a.group_size {
        train.group_size = g;
    }
    if let Some(lr) = a.learning_rate {
        train.learning_rate = lr;
    }
    if let Some(s) = a.seed {
        train.seed = s;
    }
    if let Some(t) = a.task {
        train.task = t;
    }
    a.rollout.apply(&mut train.rollout)?;
    train.validate()?;
    ensure_dir(&a.out_dir)?;
    let report = run_training(&mut model, &train, Some(&a.out_dir), |m| {
        if m.step % 10 == 0 {
            eprintln!(
                "step {:>4}  reward {:.3}  loss {:+.4}  entropy {:.3}  think {:.2}",
                m.step, m.mean_reward, m.loss, m.mean_step_entropy, m.mean_think_len
            );
        }
    })?;
    eprintln!("{} steps; outputs in {}", report.metrics.len(), a.out_dir.display());
    Ok(())
}

fn load_tasks(path: &Path, vocab: usize) -> Result<Vec<TaskInstance>> {
    require_file(path, "task set")?;
    let tasks: Vec<TaskInstance> = read_jsonl(path)?;
    if tasks.is_empty() {
        return Err(Error::Schema(format!("{}: empty task set", path.display())));
    }
    for t in &tasks {
        t.spec.validate().map_err(|e| Error::Schema(e.to_string()))?;
        let all = t.prompt_tokens.iter().chain(&t.ground_truth);
        if let Some(&bad) = all.clone().find(|&&x| x >= vocab) {
            return Err(Error::Schema(format!("task {} uses token {bad} outside the model vocabulary", t.id)));
        }
        if t.ground_truth.is_empty() {
            return Err(Error::Schema(format!("task {} has an empty ground truth", t.id)));
        }
    }
    Ok(tasks)
}

#[derive(Debug, Serialize, Deserialize)]
struct EvalSummary {
    mode: Mode,
    #[serde(rename = "K")]
    k: usize,
    scheme: String,
    temperature: f64,
    top_p: f64,
    seed: u64,
    questions: usize,
    samples: usize,
    trajectories: usize,
    mean_reward: f64,
    pass_at_1: f64,
    mean_think_len: f64,
    mean_answer_len: f64,
    mean_step_entropy: f64,
    consensus_frac: f64,
    majority21_frac: f64,
    distinct_frac: f64,
    other_frac: f64,
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let model = load_model(&a.checkpoint)?;
    let mut ev = cfg.eval.clone();
    if let Some(n) = a.samples {
        ev.samples = n;
    }
    if let Some(s) = a.seed {
        ev.seed = s;
    }
    a.rollout.apply(&mut ev.rollout)?;
    ev.validate()?;
    let tasks = match &a.tasks {
        Some(p) => load_tasks(p, model.config().vocab_size)?,
        None => generate_set(ev.task, ev.seed, 0, ev.questions)?,
    };
    let (runs, trajs) = sample_outcomes(&model, &tasks, &ev.rollout, ev.samples, ev.seed)?;
    let stats = length_and_diversity_stats(&trajs)?;
    let curve = pass_at_k_curve(&runs, &default_ks(ev.samples))?;
    let rollout = ev.rollout.normalized();
    let summary = EvalSummary {
        mode: rollout.mode,
        k: rollout.k,
        scheme: rollout.scheme.to_string(),
        temperature: rollout.temperature,
        top_p: rollout.top_p,
        seed: ev.seed,
        questions: tasks.len(),
        samples: ev.samples,
        trajectories: stats.trajectories,
        mean_reward: stats.mean_reward,
        pass_at_1: curve[0].mean,
        mean_think_len: stats.mean_think_len,
        mean_answer_len: stats.mean_answer_len,
        mean_step_entropy: mean_step_entropy(&trajs),
        consensus_frac: stats.consensus_frac,
        majority21_frac: stats.majority21_frac,
        distinct_frac: stats.distinct_frac,
        other_frac: stats.other_frac,
    };
    if let Some(p) = &a.log_out {
        write_jsonl(p, &trajs)?;
    }
    if let Some(p) = &a.passk_out {
        write_csv(p, &curve)?;
    }
    write_csv(&a.metrics_out, &[summary])?;
    eprintln!("pass@1 {:.4} over {} questions x {} samples", curve[0].mean, tasks.len(), ev.samples);
    Ok(())
}

fn bootstrap_curve(runs: &[RunOutcomes], ks: &[usize], b: usize, seed: u64) -> Result<Vec<PassAtKRow>> {
    let m = runs.len() as f64;
    ks.iter()
        .map(|&k| {
            let mut mean = 0.0;
            let mut var = 0.0;
            for (i, r) in runs.iter().enumerate() {
                let est = pass_at_k_bootstrap(r, k, b, &mut substream(seed, i as u64, k as u64))?;
                mean += est.mean;
                var += est.stderr * est.stderr;
            }
            Ok(PassAtKRow { k, mean: mean / m, stderr: var.sqrt() / m })
        })
        .collect()
}

pub fn passk(a: &PasskArgs) -> Result<()> {
    require_file(&a.log, "trajectory log")?;
    let trajs = read_trajectory_log(&a.log)?;
    let runs = outcomes_from_log(&trajs)?;
    let n_min = runs.iter().map(|r| r.n()).min().unwrap_or(0);
    let ks = if a.ks.is_empty() { default_ks(n_min) } else { a.ks.clone() };
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > n_min) {
        return Err(Error::Config(format!("k = {k} outside 1..={n_min} (smallest per-question sample count)")));
    }
    let rows = if a.bootstrap > 0 { bootstrap_curve(&runs, &ks, a.bootstrap, a.seed)? } else { pass_at_k_curve(&runs, &ks)? };
    write_csv(&a.out, &rows)
}

pub fn viz(a: &VizArgs) -> Result<()> {
    require_file(&a.log, "trajectory log")?;
    let vocab = Vocabulary::new(a.vocab_size).map_err(|e| Error::Config(e.to_string()))?;
    let trajs = read_trajectory_log(&a.log)?;
    let selected: Vec<_> = trajs
        .iter()
        .filter(|t| a.episode.is_none_or(|e| t.episode_id == e))
        .take(a.limit.unwrap_or(usize::MAX))
        .collect();
    if selected.is_empty() {
        return Err(Error::Config("no trajectory matches the selection".into()));
    }
    let opts = RenderOptions { color: a.color };
    let text = selected
        .iter()
        .map(|t| render_trajectory(t, &vocab, opts))
        .collect::<Result<Vec<_>>>()?
        .join("\n");
    match &a.out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Debug, Serialize)]
struct EntropyRow {
    label: String,
    mode: Mode,
    #[serde(rename = "K")]
    k: usize,
    scheme: String,
    seed: u64,
    steps: usize,
    window: usize,
    h_start: Option<f64>,
    h_end: Option<f64>,
    reduction_pct: Option<f64>,
}

#[derive(Debug, Serialize)]
struct LengthRow {
    label: String,
    mode: Mode,
    #[serde(rename = "K")]
    k: usize,
    step: usize,
    mean_think_len: f64,
    mean_answer_len: f64,
    mean_reward: f64,
}

struct Variant {
    label: String,
    rollout: RolloutConfig,
}

fn variants(modes: &[String], base: &RolloutConfig) -> Result<Vec<Variant>> {
    let mut out: Vec<Variant> = Vec::new();
    for m in modes {
        let mode: Mode = m.trim().parse()?;
        let rollout = RolloutConfig { mode, ..*base }.normalized();
        let label = run_label(&rollout);
        if out.iter().any(|v| v.label == label) {
            return Err(Error::Config(format!("mode `{m}` listed twice")));
        }
        out.push(Variant { label, rollout });
    }
    if out.is_empty() {
        return Err(Error::Config("--modes is empty".into()));
    }
    Ok(out)
}

pub fn compare(a: &CompareArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let base = load_model(&a.checkpoint)?;
    let mut train = cfg.train.clone();
    let mut ev = cfg.eval.clone();
    if let Some(s) = a.steps {
        train.total_steps = s;
    }
    if let Some(g) = a.group_size {
        train.group_size = g;
    }
    if let Some(s) = a.seed {
        train.seed = s;
        ev.seed = s;
    }
    if let Some(n) = a.samples {
        ev.samples = n;
    }
    a.rollout.apply(&mut ev.rollout)?;
    if a.window == 0 {
        return Err(Error::Config("--window must be positive".into()));
    }
    let vars = variants(&a.modes, &ev.rollout)?;
    for v in &vars {
        let mut t = train.clone();
        t.rollout = v.rollout;
        if v.rollout.mode != Mode::SoftThinking {
            t.validate()?;
        }
        RolloutConfig::validate(&v.rollout)?;
    }
    ev.validate()?;

    let tasks = generate_set(ev.task, ev.seed, 0, ev.questions)?;
    let ks = default_ks(ev.samples);
    let mut passk_rows = Vec::new();
    let mut entropy_rows = Vec::new();
    let mut length_rows = Vec::new();
    for v in &vars {
        let mut model = base.clone();
        let trainable = v.rollout.mode != Mode::SoftThinking && train.total_steps > 0;
        let mut series = Vec::new();
        if trainable {
            let t = TrainConfig { rollout: v.rollout, ..train.clone() };
            eprintln!("training {} for {} steps", v.label, t.total_steps);
            let report = run_training(&mut model, &t, None, |_| {})?;
            series = report.entropy_series();
            for m in &report.metrics {
                length_rows.push(LengthRow {
                    label: v.label.clone(),
                    mode: v.rollout.mode,
                    k: v.rollout.k,
                    step: m.step,
                    mean_think_len: m.mean_think_len,
                    mean_answer_len: m.mean_answer_len,
                    mean_reward: m.mean_reward,
                });
            }
        }
        let (h_start, h_end, reduction_pct) = if series.len() >= 2 * a.window {
            let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
            let ratio = entropy_reduction_ratio(&series, a.window).ok();
            (Some(mean(&series[..a.window])), Some(mean(&series[series.len() - a.window..])), ratio)
        } else {
            (None, None, None)
        };
        entropy_rows.push(EntropyRow {
            label: v.label.clone(),
            mode: v.rollout.mode,
            k: v.rollout.k,
            scheme: v.rollout.scheme.to_string(),
            seed: train.seed,
            steps: series.len(),
            window: a.window,
            h_start,
            h_end,
            reduction_pct,
        });
        let (runs, _) = sample_outcomes(&model, &tasks, &v.rollout, ev.samples, ev.seed)?;
        for r in pass_at_k_curve(&runs, &ks)? {
            passk_rows.push(CompareRow {
                label: v.label.clone(),
                mode: v.rollout.mode.to_string(),
                width: v.rollout.k,
                scheme: v.rollout.scheme.to_string(),
                k: r.k,
                mean: r.mean,
                stderr: r.stderr,
            });
        }
        eprintln!("{}: pass@1 {:.4}", v.label, passk_rows.iter().rev().find(|r| r.label == v.label && r.k == 1).map_or(f64::NAN, |r| r.mean));
    }
    ensure_dir(&a.out_dir)?;
    write_csv(&a.out_dir.join("compare_passk.csv"), &passk_rows)?;
    write_csv(&a.out_dir.join("entropy_reduction.csv"), &entropy_rows)?;
    write_csv(&a.out_dir.join("length_curve.csv"), &length_rows)?;
    Ok(())
}

pub fn export_plots(a: &ExportArgs) -> Result<()> {
    let mut files: Vec<(PathBuf, String)> = Vec::new();
    if let Some(p) = &a.metrics {
        require_file(p, "metrics CSV")?;
        let rows: Vec<multiplex_core::grpo::StepMetrics> = read_csv(p)?;
        files.push((a.out_dir.join("length.dat"), viz::length_series(&rows)));
        files.push((a.out_dir.join("entropy.dat"), viz::entropy_series(&rows)));
    }
    if let Some(p) = &a.passk {
        require_file(p, "pass@k CSV")?;
        let rows: Vec<PassAtKRow> = read_csv(p)?;
        files.push((a.out_dir.join("passk.dat"), viz::passk_series(&rows)?));
    }
    if let Some(p) = &a.compare {
        require_file(p, "comparison CSV")?;
        let rows: Vec<CompareRow> = read_csv(p)?;
        files.push((a.out_dir.join("compare_passk.dat"), viz::compare_series(&rows)?));
    }
    if files.is_empty() {
        return Err(Error::Config("nothing to export; pass --metrics, --passk or --compare".into()));
    }
    ensure_dir(&a.out_dir)?;
    for (p, text) in files {
        write_atomic(&p, text.as_bytes())?;
    }
    Ok(())
}
