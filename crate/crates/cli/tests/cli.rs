//! End-to-end tests of the `socrec` binary: artifact flow between
//! subcommands, exit-code contract, locking, and byte-level idempotence.

use std::path::Path;
use std::process::{Command, Output};

fn socrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_socrec"))
        .args(args)
        .output()
        .expect("binary should spawn")
}

/// Runs a command that must succeed and returns its stdout.
fn ok(args: &[&str]) -> String {
    let out = socrec(args);
    assert!(
        out.status.success(),
        "command {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Runs a command that must fail with `code`; returns its stderr.
fn fails(args: &[&str], code: i32) -> String {
    let out = socrec(args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "command {args:?}:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stderr).unwrap()
}

fn synth_small(dir: &Path, seed: &str) {
    ok(&[
        "synth",
        "--workdir",
        dir.to_str().unwrap(),
        "--n-users",
        "20",
        "--n-items",
        "12",
        "--events-per-user",
        "10",
        "--rho",
        "0.4",
        "--extra-edges",
        "8",
        "--seed",
        seed,
    ]);
}

const TINY_MODEL: &[&str] = &[
    "--set", "d=4", "--set", "heads=2", "--set", "m=3", "--set", "l_t=1", "--set", "l_g=1",
    "--set", "fanouts=2", "--set", "epochs=1", "--set", "negatives=5", "--set", "batch_size=64",
    "--set", "precision=f32",
];

fn train_tiny(dir: &Path) {
    let mut args = vec!["train", "--workdir", dir.to_str().unwrap()];
    args.extend_from_slice(TINY_MODEL);
    ok(&args);
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

#[test]
fn synth_writes_deterministic_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    synth_small(a.path(), "11");
    synth_small(b.path(), "11");
    synth_small(c.path(), "12");
    for file in ["events.tsv", "edges.tsv", "synth_manifest.tsv"] {
        assert_eq!(
            read(&a.path().join(file)),
            read(&b.path().join(file)),
            "{file} must be identical for identical seeds"
        );
    }
    assert_ne!(
        read(&a.path().join("events.tsv")),
        read(&c.path().join("events.tsv")),
        "different seeds produce different data"
    );
}

#[test]
fn full_workflow_connects_all_commands() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().to_str().unwrap();
    synth_small(dir.path(), "3");
    train_tiny(dir.path());
    assert!(dir.path().join("checkpoint.ckpt").exists());
    let train_log = String::from_utf8(read(&dir.path().join("train_log.tsv"))).unwrap();
    assert!(train_log.starts_with("epoch\tmean_loss\twall_seconds\n"));
    assert_eq!(train_log.lines().count(), 2, "header plus one epoch");

    let report = ok(&["eval", "--workdir", w, "--window", "20"]);
    assert!(report.contains("source\tmetric\tbucket\tk\tvalue"));
    assert!(report.contains("\nmodel\trecall\tall\t"));
    assert!(report.contains("\npop\trecall\tall\t"));
    assert!(dir.path().join("report.tsv").exists());

    ok(&["embed", "--workdir", w]);
    for f in ["personal.tsv", "subgraphs.tsv", "social.tsv", "fused.tsv", "manifest.tsv"] {
        assert!(dir.path().join(f).exists(), "{f} missing after embed");
    }

    ok(&["index", "--workdir", w]);
    assert!(dir.path().join("index.bin").exists());

    let similar = ok(&["similar", "--workdir", w, "--user", "2", "--ku", "4"]);
    let lines: Vec<&str> = similar.lines().collect();
    assert_eq!(lines[0], "user\tcosine");
    assert_eq!(lines.len(), 5, "header plus exactly ku rows: {similar}");
    assert!(!lines[1..].iter().any(|l| l.starts_with("2\t")), "never returns the query user");

    let recs = ok(&["recommend", "--workdir", w, "--user", "2", "--k", "3"]);
    let lines: Vec<&str> = recs.lines().collect();
    assert_eq!(lines[0], "item\tscore");
    assert!(lines.len() <= 4, "at most k items: {recs}");
    assert!(lines.len() > 1, "the tiny fixture should produce candidates");
}

#[test]
fn identical_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        synth_small(dir, "9");
        train_tiny(dir);
        let w = dir.to_str().unwrap();
        ok(&["eval", "--workdir", w, "--window", "20"]);
    }
    assert_eq!(
        read(&a.path().join("checkpoint.ckpt")),
        read(&b.path().join("checkpoint.ckpt")),
        "checkpoints must match bit for bit"
    );
    assert_eq!(
        read(&a.path().join("report.tsv")),
        read(&b.path().join("report.tsv")),
        "reports must match bit for bit"
    );

    // Retraining in place overwrites with the same bytes.
    let before = read(&a.path().join("checkpoint.ckpt"));
    train_tiny(a.path());
    assert_eq!(before, read(&a.path().join("checkpoint.ckpt")));
}

#[test]
fn config_violations_exit_2_and_list_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().to_str().unwrap();
    let err = fails(
        &["train", "--workdir", w, "--set", "d=7", "--set", "heads=2", "--set", "m=0"],
        2,
    );
    assert!(err.contains("divisible"), "missing d/heads violation: {err}");
    assert!(err.contains("m must be"), "missing m violation: {err}");

    let err = fails(&["synth", "--workdir", w, "--rho", "1.5"], 2);
    assert!(err.contains("rho"), "{err}");

    // Unknown flags and subcommands are usage errors too.
    fails(&["--definitely-not-a-flag"], 2);
    fails(&["frobnicate"], 2);
    let err = fails(&["train", "--workdir", w, "--set", "no_such_key=1"], 2);
    assert!(err.contains("no_such_key"), "{err}");
}

#[test]
fn missing_artifacts_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().to_str().unwrap();
    let err = fails(&["eval", "--workdir", w, "--window", "10"], 1);
    assert!(err.contains("checkpoint.ckpt"), "{err}");
    let err = fails(&["recommend", "--workdir", w, "--user", "1"], 1);
    assert!(err.contains("index.bin"), "{err}");

    // Social variants refuse to train without the friendship graph.
    synth_small(dir.path(), "5");
    std::fs::remove_file(dir.path().join("edges.tsv")).unwrap();
    let mut args = vec!["train", "--workdir", w];
    args.extend_from_slice(TINY_MODEL);
    let err = fails(&args, 1);
    assert!(err.contains("edges.tsv"), "{err}");
}

#[test]
fn eval_requires_a_positive_window() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().to_str().unwrap();
    synth_small(dir.path(), "4");
    train_tiny(dir.path());
    let err = fails(&["eval", "--workdir", w], 2);
    assert!(err.contains("test_window"), "{err}");
}

#[test]
fn the_lock_guards_writers_and_is_released() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().to_str().unwrap();
    let lock = dir.path().join(".lock");
    std::fs::write(&lock, "12345").unwrap();
    let err = fails(
        &["synth", "--workdir", w, "--n-users", "5", "--n-items", "4", "--events-per-user", "3"],
        1,
    );
    assert!(err.contains(".lock"), "{err}");
    std::fs::remove_file(&lock).unwrap();
    synth_small(dir.path(), "2");
    assert!(!lock.exists(), "a successful command releases the lock");
}

#[test]
fn resume_extends_a_run_but_freezes_the_model_shape() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().to_str().unwrap();
    synth_small(dir.path(), "8");
    train_tiny(dir.path());

    let err = fails(&["train", "--workdir", w, "--resume", "--set", "d=16"], 2);
    assert!(err.contains("epochs"), "should name the allowed keys: {err}");

    let out = ok(&["train", "--workdir", w, "--resume", "--set", "epochs=2"]);
    assert!(out.contains("resumed from epoch 1"), "{out}");
    let log = String::from_utf8(read(&dir.path().join("train_log.tsv"))).unwrap();
    assert_eq!(log.lines().count(), 3, "header plus two epochs:\n{log}");

    // Resuming when everything is already done is a clean no-op.
    let out = ok(&["train", "--workdir", w, "--resume"]);
    assert!(out.contains("nothing to do"), "{out}");
}
