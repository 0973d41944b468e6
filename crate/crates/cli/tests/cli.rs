use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"{
  "data": { "classes": 4, "train_videos": 64, "test_videos": 16, "label_percent": 25.0, "height": 8, "width": 8, "frames": 16 },
  "encoder": { "hidden": [8] },
  "batch": { "labeled": 4, "mu": 2 },
  "schedule": { "pretrain": 1, "warmup": 1, "combined": 2, "finetune": 1, "scale": 1.0 }
}"#;

fn tcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tcl")).args(args).output().expect("binary runs")
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.json");
    std::fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_string()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stdout:\n{}\nstderr:\n{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
}

#[test]
fn train_is_byte_identical_across_invocations() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        ok(&tcl(&["train", "--config", &cfg, "--seed", "3", "--out", out.to_str().unwrap()]));
    }
    for f in ["metrics.csv", "report.json", "summary.json", "config.json", "model.ckpt", "state.ckpt"] {
        assert_eq!(read(&a, f), read(&b, f), "{f} differs");
    }
    let other = tmp.path().join("c");
    ok(&tcl(&["train", "--config", &cfg, "--seed", "4", "--out", other.to_str().unwrap()]));
    assert_ne!(read(&a, "metrics.csv"), read(&other, "metrics.csv"));
}

#[test]
fn interrupted_train_resumes_to_the_same_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let full = tmp.path().join("full");
    let part = tmp.path().join("part");
    ok(&tcl(&["train", "--config", &cfg, "--seed", "5", "--out", full.to_str().unwrap()]));
    ok(&tcl(&["train", "--config", &cfg, "--seed", "5", "--out", part.to_str().unwrap(), "--max-epochs", "2"]));
    assert!(!part.join("report.json").exists());
    let state = part.join("state.ckpt");
    ok(&tcl(&[
        "train",
        "--config",
        &cfg,
        "--seed",
        "5",
        "--out",
        part.to_str().unwrap(),
        "--resume",
        state.to_str().unwrap(),
    ]));
    for f in ["metrics.csv", "report.json", "model.ckpt"] {
        assert_eq!(read(&full, f), read(&part, f), "{f} differs");
    }
}

#[test]
fn eval_reproduces_the_training_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let run = tmp.path().join("run");
    ok(&tcl(&["train", "--config", &cfg, "--seed", "2", "--out", run.to_str().unwrap()]));
    let resolved = run.join("config.json");
    let ev = tmp.path().join("ev");
    ok(&tcl(&[
        "eval",
        "--config",
        resolved.to_str().unwrap(),
        "--checkpoint",
        run.join("model.ckpt").to_str().unwrap(),
        "--out",
        ev.to_str().unwrap(),
    ]));
    assert_eq!(read(&run, "report.json"), read(&ev, "report.json"));
}

#[test]
fn grid_writes_a_rho_table_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let mut outs = Vec::new();
    for name in ["g1", "g2"] {
        let out = tmp.path().join(name);
        let o = tcl(&[
            "grid",
            "--config",
            &cfg,
            "--seed",
            "0,1",
            "--variant",
            "supervised,tcl",
            "--rho",
            "1,0.5,0",
            "--out",
            out.to_str().unwrap(),
        ]);
        ok(&o);
        let table = String::from_utf8(o.stdout).unwrap();
        let header = table.lines().next().unwrap();
        for col in ["rho=1", "rho=0.5", "rho=0"] {
            assert!(header.contains(col), "{header}");
        }
        outs.push(out);
    }
    for f in ["grid.csv", "grid.json", "cells.csv", "domain_shift.csv"] {
        assert_eq!(read(&outs[0], f), read(&outs[1], f), "{f} differs");
    }
    let rows = String::from_utf8(read(&outs[0], "grid.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 2 * 3 * 2);
    assert!(outs[0].join("runs/tcl-p25-rho0-s1/metrics.csv").exists());
}

#[test]
fn gen_data_writes_every_split() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("data");
    ok(&tcl(&["gen-data", "--config", &cfg, "--seed", "1", "--out", out.to_str().unwrap()]));
    for f in ["labeled.tcld", "unlabeled.tcld", "test.tcld", "manifest.json", "config.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn gradcheck_passes() {
    let o = tcl(&["gradcheck", "--instances", "6"]);
    ok(&o);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("L_gc") && text.contains("PASS"), "{text}");
}

#[test]
fn bad_input_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let out = out.to_str().unwrap();

    let missing_seed = tcl(&["train", "--out", out]);
    assert!(!missing_seed.status.success());
    assert!(String::from_utf8_lossy(&missing_seed.stderr).contains("Usage"));

    for args in [vec!["frobnicate"], vec!["train", "--seed", "1", "--out", out, "--bogus"]] {
        let o = tcl(&args);
        assert!(!o.status.success(), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"), "{args:?}");
    }

    let bad_key = tcl(&["train", "--seed", "1", "--out", out, "--set", "loss.tau=2"]);
    assert!(!bad_key.status.success());
    assert!(String::from_utf8_lossy(&bad_key.stderr).contains("loss.tau"));

    let bad_value = tcl(&["train", "--seed", "1", "--out", out, "--set", "data.rho=1.5"]);
    assert!(!bad_value.status.success());
    assert!(String::from_utf8_lossy(&bad_value.stderr).contains("data.rho"));

    let bad_variant = tcl(&["grid", "--seed", "0", "--variant", "nope", "--out", out]);
    assert!(!bad_variant.status.success());
    assert!(String::from_utf8_lossy(&bad_variant.stderr).contains("variant"));
}
