use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_complexity-lens"));
    cmd.env("RUST_LOG", "warn");
    cmd
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

/// 60 pairs over 3 domains; most complex sides add one rare word.
fn write_corpus(dir: &Path) {
    let simple = [
        "the cat sat on the mat",
        "a dog ran to the park",
        "the old man saw a house",
    ];
    let hard = ["voluminous", "antiquated", "perambulated"];
    let mut pairs = String::new();
    let mut domains = String::new();
    for i in 0..60 {
        let s = simple[i % 3];
        let c = if i % 5 == 4 {
            s.to_owned()
        } else {
            format!("{s} {}", hard[(i / 3) % 3])
        };
        pairs.push_str(&format!("{c}\t{s}\n"));
        domains.push_str(["news", "sci", "kids"][i % 3]);
        domains.push('\n');
    }
    fs::write(dir.join("pairs.tsv"), pairs).unwrap();
    fs::write(dir.join("domains.txt"), domains).unwrap();
}

#[test]
fn evaluate_writes_all_reports_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    let args = |out: &'static str| {
        vec![
            "evaluate",
            "--corpus",
            "pairs.tsv",
            "--domains",
            "domains.txt",
            "--explainer",
            "random",
            "--seed",
            "7",
            "--out",
            out,
        ]
    };
    let first = run(dir.path(), &args("a"));
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(run(dir.path(), &args("b")).status.success());
    for name in [
        "report.json",
        "report.tsv",
        "sentences.jsonl",
        "highlights.txt",
        "highlights.jsonl",
    ] {
        let a = fs::read(dir.path().join("a").join(name)).unwrap();
        let b = fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between runs");
    }
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("a/report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 7);
    assert_eq!(report["per_domain"].as_array().unwrap().len(), 3);
    let text = fs::read_to_string(dir.path().join("a/highlights.txt")).unwrap();
    assert!(text.starts_with("# dataset=corpus explainer=random seed=7\n"));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    fs::write(
        dir.path().join("run.cfg"),
        "corpus = pairs.tsv\nexplainer = oracle\nseed = 1\ndataset = toy\n",
    )
    .unwrap();
    let out = run(
        dir.path(),
        &[
            "evaluate", "--config", "run.cfg", "--seed", "5", "--out", "o", "--format", "json",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("o/report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 5);
    assert_eq!(report["dataset"], "toy");
    assert_eq!(report["macro"]["F1"], 1.0);
    assert!(!dir.path().join("o/report.tsv").exists());
}

#[test]
fn ingest_train_explain_chain() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    let p = dir.path();
    assert!(run(p, &["ingest", "--corpus", "pairs.tsv", "--out", "i"])
        .status
        .success());
    let lines = fs::read_to_string(p.join("i/instances.jsonl")).unwrap();
    // 48 non-identical pairs give two instances, 12 identical ones give one.
    assert_eq!(lines.lines().count(), 48 * 2 + 12);

    assert!(run(
        p,
        &["train", "--corpus", "pairs.tsv", "--set", "min_df=1", "--out", "m"]
    )
    .status
    .success());
    let out = run(
        p,
        &[
            "explain",
            "--corpus",
            "pairs.tsv",
            "--set",
            "min_df=1",
            "--model",
            "m/model.json",
            "--vocab",
            "m/vocab.json",
            "--explainer",
            "shap",
            "--out",
            "e",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let jsonl = fs::read_to_string(p.join("e/highlights.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(jsonl.lines().next().unwrap()).unwrap();
    assert_eq!(first["explainer"], "shap");
    assert!(first["mask"].is_array());

    // A vocabulary that does not match the model is rejected.
    let vocab: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(&fs::read_to_string(p.join("m/vocab.json")).unwrap()).unwrap();
    let trimmed: serde_json::Map<_, _> = vocab.into_iter().skip(1).collect();
    fs::write(p.join("m/other.json"), serde_json::to_string(&trimmed).unwrap()).unwrap();
    let out = run(
        p,
        &[
            "explain",
            "--corpus",
            "pairs.tsv",
            "--model",
            "m/model.json",
            "--vocab",
            "m/other.json",
            "--explainer",
            "shap",
            "--out",
            "e2",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fingerprint"));
}

#[test]
fn correlate_and_report_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("c.tsv"), "a\tb\n1\t2\n2\t4\n3\t6\n").unwrap();
    let out = run(
        p,
        &["correlate", "c.tsv", "--x", "a", "--y", "b", "--method", "pearson"],
    );
    assert!(out.status.success());
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        "method\tn\tcoefficient\npearson\t3\t1.000000\n"
    );

    write_corpus(p);
    assert!(run(
        p,
        &[
            "evaluate",
            "--corpus",
            "pairs.tsv",
            "--explainer",
            "none",
            "--out",
            "r",
            "--format",
            "json"
        ]
    )
    .status
    .success());
    let out = run(p, &["report", "r/report.json"]);
    assert!(out.status.success());
    let tsv = String::from_utf8(out.stdout).unwrap();
    assert!(tsv.lines().nth(1).unwrap().starts_with("corpus\toverall\tnone\t"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(run(p, &["evaluate", "--corpus", "missing.tsv"]).status.code(), Some(1));
    assert_eq!(run(p, &["evaluate", "--no-such-flag"]).status.code(), Some(1));
    fs::write(p.join("bad.tsv"), "no tab here\n").unwrap();
    assert_eq!(run(p, &["evaluate", "--corpus", "bad.tsv"]).status.code(), Some(1));
    write_corpus(p);
    assert_eq!(
        run(
            p,
            &[
                "evaluate",
                "--corpus",
                "pairs.tsv",
                "--classifier",
                "nb",
                "--explainer",
                "shap"
            ]
        )
        .status
        .code(),
        Some(1)
    );
    // A learning rate this large makes training diverge.
    let out = run(
        p,
        &[
            "evaluate",
            "--corpus",
            "pairs.tsv",
            "--set",
            "learning_rate=1e308",
            "--set",
            "l2=0",
            "--out",
            "d",
        ],
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(run(p, &["--help"]).status.code(), Some(0));
}
