mod common;

use std::path::Path;
use std::process::{Command, Output};

fn dama(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dama")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(code(&dama(&["--help"])), 0);
    assert_eq!(code(&dama(&["--version"])), 0);
    assert_eq!(code(&dama(&["train", "--help"])), 0);
    assert_eq!(code(&dama(&[])), 1);
    assert_eq!(code(&dama(&["frobnicate"])), 1);
    assert_eq!(code(&dama(&["report", "--modulated", "m.csv", "--format", "pdf"])), 1);
    let missing = dama(&["report", "--modulated", "/nonexistent/metrics.csv"]);
    assert_eq!(code(&missing), 2);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/metrics.csv"));
}

#[test]
fn synth_writes_every_split() {
    let dir = tempfile::tempdir().unwrap();
    let out = dama(&["synth", "--domains", "4", "--seed", "3", "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for j in 0..4 {
        for split in ["train", "val", "test"] {
            let p = dir.path().join(format!("domain{j}.task.{split}"));
            let text = std::fs::read_to_string(&p).unwrap();
            assert!(!text.is_empty(), "{} is empty", p.display());
            assert!(text.lines().all(|l| l.starts_with("0\t") || l.starts_with("1\t")));
        }
    }
    assert_eq!(code(&dama(&["synth", "--domains", "2", "--utility", "0.5", "--out", s(dir.path())])), 2);
}

#[test]
fn gradcheck_passes() {
    let out = dama(&["gradcheck", "--seed", "3"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("all 74 gradient checks passed"));
}

#[test]
fn train_modulate_eval_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("tiny.toml");
    std::fs::write(&cfg_path, common::tiny_config(4).to_toml()).unwrap();
    let (train, modd) = (dir.path().join("train"), dir.path().join("mod"));

    let out = dama(&["train", "--config", s(&cfg_path), "--out", s(&train)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["checkpoint.dama", "grid.csv", "base_metrics.csv"] {
        assert!(train.join(f).exists(), "{f} missing");
    }
    let grid = std::fs::read_to_string(train.join("grid.csv")).unwrap();
    assert_eq!(grid.lines().next(), Some("gamma,dropout,val_acc,test_acc,final_loss"));
    assert_eq!(grid.lines().count(), 2);

    let ckpt = train.join("checkpoint.dama");
    let out = dama(&["modulate", "--ckpt", s(&ckpt), "--b-grid", "100,200", "--serial", "--out", s(&modd)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["metrics.csv", "lambda.csv", "b_sweep.csv", "report.txt"] {
        assert!(modd.join(f).exists(), "{f} missing");
    }
    // one sweep row per domain and bound
    assert_eq!(std::fs::read_to_string(modd.join("b_sweep.csv")).unwrap().lines().count(), 1 + 2 * 2);

    let eval = dama(&["eval", "--ckpt", s(&ckpt), "--lambdas", s(&modd.join("lambda.csv")), "--split", "val"]);
    assert_eq!(code(&eval), 0, "{}", String::from_utf8_lossy(&eval.stderr));
    let text = String::from_utf8(eval.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("domain,lambda,accuracy,loss,domain_accuracy"));
    assert_eq!(lines.count(), 2);

    // eval with the learned λ reproduces the stage-2 val accuracy
    let metrics = dama::lab::MetricsTable::load(&modd.join("metrics.csv")).unwrap();
    for (row, line) in metrics.rows.iter().zip(text.lines().skip(1)) {
        let acc: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!((100.0 * acc - row.s_vc).abs() < 1e-9, "{line} vs {row:?}");
    }

    let unknown = dir.path().join("unknown.csv");
    std::fs::write(&unknown, "domain,lambda_final\nkitchen,3.0\n").unwrap();
    let out = dama(&["eval", "--ckpt", s(&ckpt), "--lambdas", s(&unknown)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("kitchen"));
    assert_eq!(code(&dama(&["eval", "--ckpt", s(&ckpt), "--split", "train"])), 2);

    let out = dama(&["report", "--base", s(&train.join("base_metrics.csv")), "--modulated", s(&modd.join("metrics.csv"))]);
    assert_eq!(code(&out), 0);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.starts_with("Domain"));
    assert!(table.contains("Avg"));
    let out = dama(&["report", "--modulated", s(&modd.join("metrics.csv")), "--format", "csv"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), std::fs::read_to_string(modd.join("metrics.csv")).unwrap());
}

#[test]
fn bad_config_is_rejected_with_a_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "seed = 1\n\n[train]\nlearning_rate = 3\n").unwrap();
    let out = dama(&["train", "--config", s(&p), "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml:4"), "{err}");
}
