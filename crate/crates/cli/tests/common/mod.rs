#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const CONFIG: &str = r#"
[model]
n_layers = 1
n_heads = 2
d_model = 16
d_ff = 32
max_context = 64

[pretrain]
steps = 20
batch_size = 4
tasks = [{ kind = "chain_apply", depth = 2, modulus = 5 }]

[train]
batch_questions = 4
mini_batch_questions = 2
group_size = 4
total_steps = 4
validate_every = 2
validation_questions = 4
validation_samples = 4
checkpoint_every = 2
task = { kind = "chain_apply", depth = 2, modulus = 5 }
[train.rollout]
K = 3
max_think = 6
max_answer = 3

[eval]
questions = 4
samples = 8
bootstrap = 20
task = { kind = "chain_apply", depth = 2, modulus = 5 }
[eval.rollout]
K = 3
max_think = 6
max_answer = 3
"#;

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_multiplex"));
    for var in ["MULTIPLEX_THREADS", "MULTIPLEX_CONFIG", "MULTIPLEX_CHECKPOINT", "MULTIPLEX_OUT_DIR"] {
        c.env_remove(var);
    }
    c
}

pub fn run(dir: &Path, threads: usize, args: &[&str]) -> Output {
    let out = bin().current_dir(dir).arg("--threads").arg(threads.to_string()).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "multiplex {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn pipeline(dir: &Path, threads: usize) {
    fs::write(dir.join("run.toml"), CONFIG).unwrap();
    let c = ["--config", "run.toml"];
    run(dir, threads, &["gen-tasks", "--task", "chain_apply:2:5", "--n", "4", "--seed", "3", "--out", "tasks.jsonl"]);
    run(dir, threads, &[&["pretrain"], &c[..], &["--out", "pre.ckpt", "--loss-out", "loss.csv"]].concat());
    run(dir, threads, &[&["train-rl"], &c[..], &["--checkpoint", "pre.ckpt", "--out-dir", "rl"]].concat());
    run(
        dir,
        threads,
        &[
            &["eval"],
            &c[..],
            &["--checkpoint", "rl/final.ckpt", "--tasks", "tasks.jsonl", "--log-out", "log.jsonl"],
            &["--metrics-out", "eval.csv", "--passk-out", "passk.csv"],
        ]
        .concat(),
    );
    run(dir, threads, &["passk", "--log", "log.jsonl", "--out", "passk_boot.csv", "--bootstrap", "50", "--seed", "9"]);
    run(dir, threads, &["viz", "--log", "log.jsonl", "--limit", "3", "--out", "viz.txt"]);
    let stdout = run(dir, threads, &["viz", "--log", "log.jsonl", "--episode", "0"]).stdout;
    fs::write(dir.join("viz_stdout.txt"), stdout).unwrap();
    run(
        dir,
        threads,
        &[&["compare"], &c[..], &["--checkpoint", "pre.ckpt", "--modes", "multiplex,discrete,soft"], &["--steps", "4", "--window", "2", "--out-dir", "cmp"]]
            .concat(),
    );
    run(
        dir,
        threads,
        &["export-plots", "--metrics", "rl/metrics.csv", "--passk", "passk.csv", "--compare", "cmp/compare_passk.csv", "--out-dir", "plots"],
    );
}

pub fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

