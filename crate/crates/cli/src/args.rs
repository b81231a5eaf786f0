use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use multiplex_core::rollout::{Mode, RolloutConfig, StopRule};
use multiplex_core::{AggregationScheme, TaskSpec};

#[derive(Debug, Parser)]
#[command(name = "multiplex", version, about = "Multiplex thinking: pretrain, RL-train, evaluate and inspect toy reasoning policies")]
pub struct Cli {
    /// Worker threads for rollouts (outputs do not depend on this).
    #[arg(long, global = true, env = "MULTIPLEX_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a frozen task set as JSONL.
    GenTasks(GenTasksArgs),
    /// Supervised warm-up of a fresh model on worked task traces.
    Pretrain(PretrainArgs),
    /// GRPO training from a checkpoint.
    TrainRl(TrainArgs),
    /// Sample trajectories on a task set and summarize them.
    Eval(EvalArgs),
    /// Pass@k table from a trajectory log.
    Passk(PasskArgs),
    /// Render trajectories as annotated text.
    Viz(VizArgs),
    /// Train and evaluate several rollout modes side by side.
    Compare(CompareArgs),
    /// Convert CSV outputs into plot data files.
    ExportPlots(ExportArgs),
}

/// Overrides for rollout settings; unset flags keep the config value.
#[derive(Debug, Clone, Default, Args)]
pub struct RolloutArgs {
    /// Draws per thinking step (multiplex width).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_parser = ["uniform", "reweighted"])]
    pub scheme: Option<String>,
    #[arg(long, value_parser = ["multiplex", "discrete", "soft"])]
    pub mode: Option<String>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_think: Option<usize>,
    #[arg(long)]
    pub max_answer: Option<usize>,
    #[arg(long, value_parser = ["argmax", "any-sampled"])]
    pub stop_rule: Option<String>,
}

impl RolloutArgs {
    pub fn apply(&self, cfg: &mut RolloutConfig) -> multiplex_core::Result<()> {
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(s) = &self.scheme {
            cfg.scheme = s.parse::<AggregationScheme>()?;
        }
        if let Some(m) = &self.mode {
            cfg.mode = m.parse::<Mode>()?;
        }
        if let Some(p) = self.top_p {
            cfg.top_p = p;
        }
        if let Some(t) = self.temperature {
            cfg.temperature = t;
        }
        if let Some(n) = self.max_think {
            cfg.max_think = n;
        }
        if let Some(n) = self.max_answer {
            cfg.max_answer = n;
        }
        if let Some(r) = &self.stop_rule {
            cfg.stop_rule = r.parse::<StopRule>()?;
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// TOML run configuration.
    #[arg(long, env = "MULTIPLEX_CONFIG")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenTasksArgs {
    /// Task family, e.g. `copy:4`, `modular_add:10`, `chain_apply:3:10`.
    #[arg(long)]
    pub task: TaskSpec,
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub first_id: u64,
    #[arg(long, env = "MULTIPLEX_TASKS_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint to write.
    #[arg(long, env = "MULTIPLEX_CHECKPOINT_OUT")]
    pub out: PathBuf,
    /// Optional per-step loss CSV.
    #[arg(long)]
    pub loss_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Starting checkpoint.
    #[arg(long, env = "MULTIPLEX_CHECKPOINT")]
    pub checkpoint: PathBuf,
    /// Directory for metrics.csv, validation.csv and checkpoints.
    #[arg(long, env = "MULTIPLEX_OUT_DIR")]
    pub out_dir: PathBuf,
    /// Start from a named preset (`desk` or `full`) instead of the config file's [train].
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub task: Option<TaskSpec>,
    #[command(flatten)]
    pub rollout: RolloutArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, env = "MULTIPLEX_CHECKPOINT")]
    pub checkpoint: PathBuf,
    /// Frozen task set (JSONL); generated from the config when absent.
    #[arg(long, env = "MULTIPLEX_TASKS")]
    pub tasks: Option<PathBuf>,
    /// Samples per question.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub rollout: RolloutArgs,
    /// Trajectory log (JSONL).
    #[arg(long, env = "MULTIPLEX_LOG_OUT")]
    pub log_out: Option<PathBuf>,
    /// One-row summary CSV.
    #[arg(long, env = "MULTIPLEX_METRICS_OUT")]
    pub metrics_out: PathBuf,
    /// Pass@k CSV over powers of two up to the sample count.
    #[arg(long)]
    pub passk_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PasskArgs {
    /// Trajectory log (JSONL).
    #[arg(long, env = "MULTIPLEX_LOG")]
    pub log: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated k values; defaults to powers of two up to n.
    #[arg(long, value_delimiter = ',')]
    pub ks: Vec<usize>,
    /// Bootstrap resamples per question; 0 reports the across-question standard error.
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    #[arg(long, env = "MULTIPLEX_LOG")]
    pub log: PathBuf,
    /// Only this episode.
    #[arg(long)]
    pub episode: Option<u64>,
    /// At most this many trajectories.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, default_value_t = 32)]
    pub vocab_size: usize,
    #[arg(long)]
    pub color: bool,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, env = "MULTIPLEX_CHECKPOINT")]
    pub checkpoint: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "multiplex,discrete")]
    pub modes: Vec<String>,
    /// RL steps per trainable mode before evaluation.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Samples per evaluation question; Pass@k is reported up to this k.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Window of the entropy-reduction ratio.
    #[arg(long, default_value_t = 10)]
    pub window: usize,
    #[command(flatten)]
    pub rollout: RolloutArgs,
    #[arg(long, env = "MULTIPLEX_OUT_DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Training metrics CSV.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Pass@k CSV (`k,mean,stderr`).
    #[arg(long)]
    pub passk: Option<PathBuf>,
    /// Comparison Pass@k CSV.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    #[arg(long, env = "MULTIPLEX_OUT_DIR")]
    pub out_dir: PathBuf,
}
