use std::path::Path;
use std::process::{Command, Output};

fn refcomp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_refcomp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn refcomp")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = refcomp(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn toy_corpus(dir: &Path) {
    ok(dir, &["gen-corpus", "--per-class", "6", "--points", "32", "--seed", "1", "--out", "corpus"]);
    ok(dir, &["gen-corpus", "--per-class", "2", "--points", "32", "--crop", "16", "--seed", "2", "--format", "xyz", "--out", "targets"]);
    ok(dir, &["build-refs", "--targets", "targets", "--corpus", "corpus", "--k", "3", "--partial-points", "16", "--out", "refs/train.tsv"]);
}

const TOY: [&str; 6] = ["--set", "arch=toy", "--set", "partial_size=16", "--set", "complete_size=32"];

#[test]
fn toy_pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    toy_corpus(d);
    assert_eq!(std::fs::read_dir(d.join("targets")).unwrap().count(), 9);
    let manifest = std::fs::read_to_string(d.join("refs/train.tsv")).unwrap();
    assert!(manifest.starts_with("#refcomp-manifest v1"));
    assert_eq!(manifest.lines().filter(|l| !l.starts_with('#')).count(), 24);

    let mut train = vec!["train", "--manifest", "refs/train.tsv", "--out", "run", "--mode", "unified", "--set", "epochs=2"];
    train.extend(TOY);
    let stdout = ok(d, &train);
    assert!(stdout.contains("unified mode"), "{stdout}");
    let log = std::fs::read_to_string(d.join("run/train_log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 2 * 1);

    ok(d, &["complete", "--ckpt", "run/final.rfck", "--input", "targets", "--refs", "refs/train.tsv", "--out", "done"]);
    let one = d.join("targets").read_dir().unwrap().next().unwrap().unwrap().path();
    ok(d, &["complete", "--ckpt", "run/final.rfck", "--input", one.to_str().unwrap(), "--refs", "refs/train.tsv", "--out", "single.xyz"]);
    let single = refcomp::corpus::read_cloud(&d.join("single.xyz")).unwrap();
    assert_eq!(single.len(), 32);

    let stdout = ok(d, &["eval", "--pred", "done", "--gt", "targets", "--out", "report.tsv"]);
    for m in ["cd", "ucd", "f1", "mmd"] {
        assert!(stdout.lines().any(|l| l.starts_with(&format!("{m}\t"))), "{stdout}");
    }
    let report = std::fs::read_to_string(d.join("report.tsv")).unwrap();
    assert!(report.starts_with("metric\titem\traw\tscaled\n"));

    let same = ok(d, &["eval", "--pred", "targets", "--gt", "targets", "--out", "same.tsv"]);
    for (m, v) in [("cd", 0.0), ("f1", 1.0), ("mmd", 0.0)] {
        let line = same.lines().find(|l| l.starts_with(&format!("{m}\t"))).unwrap();
        let raw: f64 = line.split('\t').nth(1).unwrap().parse().unwrap();
        assert_eq!(raw, v, "{line}");
    }
}

#[test]
fn user_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(refcomp(d, &["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(refcomp(d, &["--help"]).status.code(), Some(0));
    assert_eq!(
        refcomp(d, &["complete", "--ckpt", "nope.rfck", "--input", "x.xyz", "--refs", "r.tsv", "--out", "o.xyz"]).status.code(),
        Some(1)
    );
    toy_corpus(d);
    let out = refcomp(d, &["build-refs", "--targets", "targets", "--corpus", "corpus", "--k", "3", "--top-n", "50", "--partial-points", "16", "--out", "r2.tsv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lack references"));
    assert_eq!(refcomp(d, &["eval", "--pred", "corpus", "--gt", "targets", "--out", "e.tsv"]).status.code(), Some(1));
    assert_eq!(refcomp(d, &["train", "--manifest", "refs/train.tsv", "--out", "r", "--only-gan"]).status.code(), Some(1));
}

#[test]
fn train_help_lists_config_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let help = ok(tmp.path(), &["train", "--help"]);
    for key in ["learning_rate", "alpha", "degrade_k_train", "max_steps"] {
        assert!(help.contains(key), "{key} missing from help");
    }
}

#[test]
fn verify_suites_pass() {
    let tmp = tempfile::tempdir().unwrap();
    for suite in ["oracle", "invariants"] {
        let out = ok(tmp.path(), &["verify", "--suite", suite, "--seed", "5"]);
        assert!(out.contains("PASS") && !out.contains("FAIL"), "{out}");
    }
    assert_eq!(refcomp(tmp.path(), &["verify", "--suite", "nope"]).status.code(), Some(1));
}
