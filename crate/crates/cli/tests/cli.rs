mod common;

use std::fs;
use std::path::PathBuf;

use common::*;

#[test]
fn every_subcommand_is_byte_reproducible_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path(), 1);
    pipeline(b.path(), 8);
    let fa = files(a.path());
    assert_eq!(fa, files(b.path()));
    for f in [
        "tasks.jsonl",
        "pre.ckpt",
        "loss.csv",
        "rl/metrics.csv",
        "rl/validation.csv",
        "rl/step-2.ckpt",
        "rl/final.ckpt",
        "log.jsonl",
        "eval.csv",
        "passk.csv",
        "passk_boot.csv",
        "viz.txt",
        "viz_stdout.txt",
        "cmp/compare_passk.csv",
        "cmp/entropy_reduction.csv",
        "cmp/length_curve.csv",
        "plots/passk.dat",
        "plots/length.dat",
        "plots/entropy.dat",
        "plots/compare_passk.dat",
    ] {
        assert!(fa.contains(&PathBuf::from(f)), "missing output {f}");
    }
    for f in &fa {
        let x = fs::read(a.path().join(f)).unwrap();
        let y = fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{} differs between thread counts", f.display());
    }

    // a rerun with the same seed reproduces the same bytes
    let c = tempfile::tempdir().unwrap();
    fs::write(c.path().join("run.toml"), CONFIG).unwrap();
    fs::copy(a.path().join("pre.ckpt"), c.path().join("pre.ckpt")).unwrap();
    run(c.path(), 2, &["train-rl", "--config", "run.toml", "--checkpoint", "pre.ckpt", "--out-dir", "rl"]);
    for f in ["rl/metrics.csv", "rl/final.ckpt"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(c.path().join(f)).unwrap());
    }

    // compare report: one Pass@k curve up to k = samples per mode, entropy rows for K = 1 and K = 3
    let (h, rows) = read_csv(&a.path().join("cmp/compare_passk.csv"));
    assert_eq!(h, ["label", "mode", "K", "scheme", "k", "mean", "stderr"]);
    assert_eq!(rows.len(), 3 * 4);
    let ks: Vec<&str> = rows.iter().filter(|r| r[1] == "discrete").map(|r| r[4].as_str()).collect();
    assert_eq!(ks, ["1", "2", "4", "8"]);
    let (h, rows) = read_csv(&a.path().join("cmp/entropy_reduction.csv"));
    assert_eq!(h, ["label", "mode", "K", "scheme", "seed", "steps", "window", "h_start", "h_end", "reduction_pct"]);
    let widths: Vec<(&str, &str)> = rows.iter().map(|r| (r[1].as_str(), r[2].as_str())).collect();
    assert_eq!(widths[..2], [("multiplex", "3"), ("discrete", "1")]);
    for r in &rows[..2] {
        assert_eq!(r[5], "4");
        assert!(r[9].parse::<f64>().unwrap().is_finite());
    }
    assert_eq!(rows[2][9], "", "soft thinking is not trained");
    let (h, rows) = read_csv(&a.path().join("cmp/length_curve.csv"));
    assert_eq!(h, ["label", "mode", "K", "step", "mean_think_len", "mean_answer_len", "mean_reward"]);
    assert_eq!(rows.len(), 8);
}

#[test]
fn missing_checkpoint_is_a_config_error_with_no_outputs() {
    let d = tempfile::tempdir().unwrap();
    let out = bin()
        .current_dir(d.path())
        .args(["eval", "--checkpoint", "nope.ckpt", "--metrics-out", "m.csv", "--log-out", "log.jsonl"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.ckpt"));
    let out = bin().current_dir(d.path()).args(["train-rl", "--checkpoint", "nope.ckpt", "--out-dir", "rl"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(files(d.path()).is_empty());
}

#[test]
fn config_schema_violations_exit_2() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("bad.toml"), "[train]\nbatch_size = 3\n").unwrap();
    let out = bin().current_dir(d.path()).args(["pretrain", "--config", "bad.toml", "--out", "x.ckpt"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch_size"));
    fs::write(d.path().join("bad.toml"), "[eval.rollout]\nK = 0\n").unwrap();
    let out = bin().current_dir(d.path()).args(["pretrain", "--config", "bad.toml", "--out", "x.ckpt"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(files(d.path()).iter().all(|f| f.as_os_str() == "bad.toml"));
}

#[test]
fn usage_errors_exit_2() {
    let out = bin().args(["gen-tasks", "--task", "chain_apply:0:10", "--out", "x"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["eval", "--mode", "bogus", "--checkpoint", "c", "--metrics-out", "m"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn io_failures_exit_3() {
    let d = tempfile::tempdir().unwrap();
    fs::create_dir(d.path().join("taken")).unwrap();
    let out = bin().current_dir(d.path()).args(["gen-tasks", "--task", "copy:3", "--n", "2", "--out", "taken"]).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn malformed_log_names_the_line() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("log.jsonl"), "{\"episode_id\": 1}\n").unwrap();
    let out = bin().current_dir(d.path()).args(["passk", "--log", "log.jsonl", "--out", "p.csv"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("log.jsonl:1"));
    assert!(!d.path().join("p.csv").exists());
}
