//! End-to-end CLI checks: exit codes, file formats, reproducibility, and
//! the no-leakage invariant on the pairing file.

use std::fs;
use std::path::Path;
use std::process::Command;

fn mrwb() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mrwb"))
}

fn run_ok(args: &[&str], dir: &Path) {
    let out = mrwb().args(args).current_dir(dir).output().unwrap();
    assert!(
        out.status.success(),
        "mrwb {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Train every stage once into `dir/art` from `dir/data`.
fn train_all(dir: &Path) {
    fs::write(
        dir.join("fast.cfg"),
        "retriever_epochs = 4\nvq_epochs = 20\nsft_steps = 60\ndpo_steps = 20\n",
    )
    .unwrap();
    let cfg = "fast.cfg";
    run_ok(&["gen-data", "--out", "data", "--seed", "0"], dir);
    run_ok(&["train-retriever", "--config", cfg, "--data", "data", "--out", "art"], dir);
    run_ok(&["train-integrator", "--config", cfg, "--data", "data", "--out", "art"], dir);
    run_ok(&["ingest", "--data", "data", "--out", "art"], dir);
    run_ok(&["train-vq", "--config", cfg, "--data", "data", "--out", "art"], dir);
    run_ok(&["train-sft", "--config", cfg, "--data", "data", "--out", "art"], dir);
    run_ok(&["build-dpo", "--config", cfg, "--data", "data", "--out", "art"], dir);
    run_ok(&["train-dpo", "--config", cfg, "--data", "data", "--out", "art"], dir);
}

#[test]
fn full_chain_formats_reproducibility_and_leakage() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    train_all(dir);

    // retrieve --k 1: one tab-separated line per query, rank always 1
    run_ok(
        &["retrieve", "--data", "data", "--artifacts", "art", "--k", "1", "--out", "r1.tsv"],
        dir,
    );
    let r1 = fs::read_to_string(dir.join("r1.tsv")).unwrap();
    assert_eq!(r1.lines().count(), 48);
    for line in r1.lines() {
        let f: Vec<&str> = line.split('\t').collect();
        assert_eq!(f.len(), 4, "bad ranking line: {line}");
        assert_eq!(f[1], "1");
        f[3].parse::<f64>().unwrap();
    }

    // generate: id + space-separated integer tokens
    run_ok(
        &["generate", "--data", "data", "--artifacts", "art", "--policy", "dpo", "--out", "t.tsv"],
        dir,
    );
    let toks = fs::read_to_string(dir.join("t.tsv")).unwrap();
    assert_eq!(toks.lines().count(), 48);
    for line in toks.lines() {
        let (_, rest) = line.split_once('\t').unwrap();
        assert!(rest.split(' ').all(|t| t.parse::<usize>().is_ok()), "bad tokens: {line}");
    }

    // evaluate: report parses as metric.field\tvalue
    run_ok(
        &["evaluate", "--data", "data", "--artifacts", "art", "--tokens", "t.tsv", "--out", "rep.tsv"],
        dir,
    );
    let rep = fs::read_to_string(dir.join("rep.tsv")).unwrap();
    assert!(rep.lines().count() >= 12);
    for line in rep.lines() {
        let (key, val) = line.split_once('\t').unwrap();
        assert!(key.contains('.'), "bad report key: {key}");
        val.parse::<f64>().unwrap();
    }

    // pipeline twice with the same seed: byte-identical outputs
    run_ok(
        &["pipeline", "--data", "data", "--artifacts", "art", "--policy", "dpo", "--out", "p1", "--seed", "7"],
        dir,
    );
    run_ok(
        &["pipeline", "--data", "data", "--artifacts", "art", "--policy", "dpo", "--out", "p2", "--seed", "7"],
        dir,
    );
    for f in ["rankings.tsv", "tokens.tsv", "report.tsv"] {
        assert_eq!(
            fs::read(dir.join("p1").join(f)).unwrap(),
            fs::read(dir.join("p2").join(f)).unwrap(),
            "{f} not reproducible"
        );
    }

    // deleting the text-video pairing file must not change pipeline output
    fs::remove_file(dir.join("data").join("pairs.tsv")).unwrap();
    run_ok(
        &["pipeline", "--data", "data", "--artifacts", "art", "--policy", "dpo", "--out", "p3", "--seed", "7"],
        dir,
    );
    for f in ["rankings.tsv", "tokens.tsv", "report.tsv"] {
        assert_eq!(
            fs::read(dir.join("p1").join(f)).unwrap(),
            fs::read(dir.join("p3").join(f)).unwrap(),
            "{f} depends on the pairing file"
        );
    }
}

#[test]
fn exit_codes_distinguish_validation_from_success() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    run_ok(&["gen-data", "--out", "data", "--seed", "0"], dir);

    // unknown retriever name -> 2
    let out = mrwb()
        .args(["retrieve", "--data", "data", "--artifacts", "art", "--retriever", "best", "--out", "x"])
        .current_dir(dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // missing checkpoint -> 2, and the message names the missing stage
    let out = mrwb()
        .args(["train-sft", "--data", "data", "--out", "art"])
        .current_dir(dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train-retriever"));

    // malformed config -> 2
    fs::write(dir.join("bad.cfg"), "not a key value line\n").unwrap();
    let out = mrwb()
        .args(["gen-data", "--config", "bad.cfg", "--out", "d2"])
        .current_dir(dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_data_is_deterministic_across_invocations() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    run_ok(&["gen-data", "--out", "a", "--seed", "3"], dir);
    run_ok(&["gen-data", "--out", "b", "--seed", "3"], dir);
    run_ok(&["gen-data", "--out", "c", "--seed", "4"], dir);
    for f in ["texts.tsv", "keypoints.tsv", "frames.tsv", "motions.tsv", "pairs.tsv"] {
        assert_eq!(
            fs::read(dir.join("a").join(f)).unwrap(),
            fs::read(dir.join("b").join(f)).unwrap(),
            "{f} differs across identical seeds"
        );
    }
    assert_ne!(
        fs::read(dir.join("a").join("motions.tsv")).unwrap(),
        fs::read(dir.join("c").join("motions.tsv")).unwrap()
    );
}
