use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hgwrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hgwrec")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = hgwrec(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: [&str; 8] = ["--users", "60", "--jobs", "30", "--topics", "3", "--vocab", "60"];
const FAST: [&str; 14] = [
    "--set", "k_topics=4", "--set", "job_ratio=5", "--set", "user_ratio=30", "--set", "hidden=8", "--set", "emb_dim=8",
    "--set", "epochs=2", "--set", "window=8",
];

fn gen(dir: &Path, seed: &str) {
    let mut args = vec!["gen", "--seed", seed, "--out", s(dir)];
    args.extend(SMALL);
    ok(&args);
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn help_and_argument_errors() {
    assert_eq!(hgwrec(&["--help"]).status.code(), Some(0));
    assert_eq!(hgwrec(&["train", "--help"]).status.code(), Some(0));
    assert_eq!(hgwrec(&["gen", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(hgwrec(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn bad_configuration_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, "1");
    let out = tmp.path().join("out");
    let bad = hgwrec(&["topics", "--data", s(&data), "--out", s(&out), "--set", "k_topics=0"]);
    assert_eq!(bad.status.code(), Some(2));
    let unknown = hgwrec(&["topics", "--data", s(&data), "--out", s(&out), "--set", "no_such_key=3"]);
    assert_eq!(unknown.status.code(), Some(2));
    let cfg = tmp.path().join("bad.txt");
    fs::write(&cfg, "lr = banana\n").unwrap();
    assert_eq!(hgwrec(&["topics", "--data", s(&data), "--out", s(&out), "--config", s(&cfg)]).status.code(), Some(2));
}

#[test]
fn refuses_to_overwrite_without_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, "2");
    let mut again = vec!["gen", "--seed", "2", "--out", s(&data)];
    again.extend(SMALL);
    assert_eq!(hgwrec(&again).status.code(), Some(2));
    again.push("--overwrite");
    ok(&again);
}

#[test]
fn generation_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen(&a, "7");
    gen(&b, "7");
    assert_eq!(files(&a), files(&b));
    let c = tmp.path().join("c");
    gen(&c, "8");
    assert_ne!(files(&a), files(&c));
}

#[test]
fn full_pipeline_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, "3");
    for stage in ["ingest", "topics", "cluster", "graph", "train"] {
        let out = tmp.path().join(stage);
        let mut args = vec![stage, "--data", s(&data), "--out", s(&out), "--seed", "3"];
        args.extend(FAST);
        ok(&args);
        assert!(fs::read_dir(&out).unwrap().count() > 0, "{stage} wrote nothing");
    }
    let ckpt = tmp.path().join("train/checkpoint.bin");
    let eval = tmp.path().join("eval");
    let out = ok(&["eval", "--data", s(&data), "--checkpoint", s(&ckpt), "--k", "10", "--out", s(&eval)]);
    assert!(!out.stdout.is_empty());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(eval.join("eval.json")).unwrap()).unwrap();
    for key in ["H@10", "M@10"] {
        let v = report[key].as_f64().unwrap_or_else(|| panic!("missing {key} in {report}"));
        assert!((0.0..=1.0).contains(&v));
    }
    assert!(report["M@10"].as_f64() <= report["H@10"].as_f64());
    assert!(report["popularity"]["H@10"].is_number());

    // every stage reproduces its artifacts from the same inputs
    for stage in ["topics", "cluster", "graph", "train"] {
        let again = tmp.path().join(format!("{stage}2"));
        let mut args = vec![stage, "--data", s(&data), "--out", s(&again), "--seed", "3"];
        args.extend(FAST);
        ok(&args);
        assert_eq!(files(&tmp.path().join(stage)), files(&again), "{stage}");
    }
}
