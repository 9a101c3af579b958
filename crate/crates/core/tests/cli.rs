use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn spectrum(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spectrum"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SPECTRUM_SEED")
        .env("RUST_BACKTRACE", "0")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

const SMALL: &[&str] = &["--d-h", "16", "--heads", "2", "--n-layers", "1", "--d-b", "8", "--epochs", "2"];

fn synth(cwd: &Path) {
    ok(&spectrum(
        &["synth", "--out", "data", "--videos", "16", "--d-b", "8", "--seed", "2"],
        cwd,
    ));
}

#[test]
fn synth_train_eval_caption() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    synth(cwd);
    let mut args = vec!["train", "--train", "data/train.jsonl", "--test", "data/test.jsonl", "--out", "ck"];
    args.extend_from_slice(SMALL);
    let log = ok(&spectrum(&args, cwd));
    assert_eq!(log.lines().filter(|l| l.contains("\"kind\":\"epoch\"")).count(), 2);
    for f in ["header.json", "params.spft", "retrieval.json", "report.json", "trainlog.jsonl"] {
        assert!(cwd.join("ck").join(f).exists(), "missing {f}");
    }

    // eval reproduces the report written after training
    ok(&spectrum(&["eval", "--checkpoint", "ck", "--test", "data/test.jsonl", "--out", "r.json"], cwd));
    assert_eq!(
        fs::read(cwd.join("r.json")).unwrap(),
        fs::read(cwd.join("ck/report.json")).unwrap()
    );

    let sweep = ok(&spectrum(
        &[
            "eval", "--checkpoint", "ck", "--test", "data/test.jsonl", "--out", "sw/report.json",
            "--sweep-mask", "V", "--sweep-mask", "V+A+T",
        ],
        cwd,
    ));
    assert_eq!(sweep.lines().count(), 3);
    assert!(cwd.join("sw/report.V.json").exists() && cwd.join("sw/report.VAT.json").exists());

    // architecture mismatch refused, then forced
    let bad = spectrum(&["eval", "--checkpoint", "ck", "--test", "data/test.jsonl", "--d-h", "32"], cwd);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("--force"));
    ok(&spectrum(
        &["eval", "--checkpoint", "ck", "--test", "data/test.jsonl", "--d-h", "32", "--force", "--out", "f.json"],
        cwd,
    ));

    let feats = |v: &str| -> Vec<String> {
        ["app", "mot", "aud"].iter().map(|m| format!("data/features/{v}.{m}.spft")).collect()
    };
    let f = feats("vid0015");
    let cap_args = [
        "caption", "--checkpoint", "ck", "--appearance", &f[0], "--motion", &f[1], "--audio", &f[2],
        "--attention", "att.csv",
    ];
    let first = ok(&spectrum(&cap_args, cwd));
    let dump = fs::read_to_string(cwd.join("att.csv")).unwrap();
    assert_eq!(ok(&spectrum(&cap_args, cwd)), first);
    assert_eq!(fs::read_to_string(cwd.join("att.csv")).unwrap(), dump);
    assert!(dump.starts_with("attribute,probability,attention\n"));
    assert_eq!(dump.lines().count(), 1 + 10);
}

#[test]
fn seed_env_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    synth(cwd);
    let run = |out: &str, seed_flag: &str, env: Option<&str>| {
        let mut args = vec!["train", "--train", "data/train.jsonl", "--out", out, "--seed", seed_flag];
        args.extend_from_slice(SMALL);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_spectrum"));
        cmd.args(&args).current_dir(cwd).env_remove("SPECTRUM_SEED");
        if let Some(e) = env {
            cmd.env("SPECTRUM_SEED", e);
        }
        ok(&cmd.output().unwrap());
        fs::read(cwd.join(out).join("params.spft")).unwrap()
    };
    let a = run("a", "5", None);
    let b = run("b", "1", Some("5"));
    let c = run("c", "1", None);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    let out = spectrum(&["train", "--train", "missing.jsonl", "--out", "ck"], cwd);
    assert!(!out.status.success());
    let out = spectrum(&["train", "--train", "x", "--out", "ck", "--heads", "3"], cwd);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("heads"));
    let out = spectrum(&["train", "--train", "x", "--out", "ck", "--mask", "Q"], cwd);
    assert!(!out.status.success());
}
