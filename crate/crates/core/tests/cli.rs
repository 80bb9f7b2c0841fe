use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fer_core::synthetic::{generate_dataset, FixtureLayout, FixtureSpec};

fn fer(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fer"))
        .args(args)
        .current_dir(cwd)
        .env("FER_OUTPUT_ROOT", cwd.join("default_out"))
        .output()
        .expect("fer runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = fer(args, cwd);
    assert!(
        out.status.success(),
        "fer {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn fixture(dir: &Path, layout: FixtureLayout, subjects: usize) {
    let spec = FixtureSpec {
        layout,
        subjects,
        per_expression: 1,
        image_size: (96, 96),
        distractors: true,
        seed: 5,
    };
    generate_dataset(dir, &spec).unwrap();
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = fer(&[], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&out.stderr).to_string() + &String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("Usage"));
    assert_eq!(fer(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(fer(&["split", "--bogus"], dir.path()).status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_1_with_category() {
    let dir = tempfile::tempdir().unwrap();
    let out = fer(&["scan", "--root", "missing"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.lines().any(|l| l.starts_with("error[")), "{err}");
}

#[test]
fn seeded_split_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("rafd");
    fixture(&root, FixtureLayout::Rafd, 6);
    let args = |out: &str| {
        vec![
            "--seed", "7", "split", "--root", "rafd", "--layout", "rafd", "--ratios", "0.7,0.15,0.15", "--policy",
            "by-subject", "--out", out,
        ]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>()
    };
    for out in ["a.csv", "b.csv"] {
        let a: Vec<String> = args(out);
        ok(&a.iter().map(String::as_str).collect::<Vec<_>>(), dir.path());
    }
    let a = fs::read(dir.path().join("a.csv")).unwrap();
    let b = fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b);
    assert!(dir.path().join("split.run.txt").exists());
}

#[test]
fn stage_chain_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(&d.join("cfee"), FixtureLayout::Cfee, 6);

    let scan = ok(&["scan", "--root", "cfee", "--layout", "cfee", "--out", "scan"], d);
    assert!(scan.contains("42"), "{scan}");
    ok(&["--seed", "3", "split", "--root", "cfee", "--out", "split/manifest.csv"], d);
    ok(
        &[
            "preprocess", "--manifest", "split/manifest.csv", "--out-dir", "faces", "--detector", "synthetic",
            "--on-no-face", "full-frame",
        ],
        d,
    );
    ok(&["--jobs", "1", "saliency", "--manifest", "faces/manifest.csv", "--out-dir", "sal"], d);
    ok(&["product", "--faces-dir", "faces", "--saliency-dir", "sal", "--out-dir", "prod"], d);
    ok(
        &[
            "--seed", "3", "train", "--manifest", "prod/manifest.csv", "--variant", "saliency_product", "--set",
            "epochs=2", "--set", "batch_size=8", "--out", "model/model.fer",
        ],
        d,
    );
    for f in ["model.fer", "model_best.fer", "model_epochs.csv", "model_config.txt", "train.run.txt"] {
        assert!(d.join("model").join(f).exists(), "missing {f}");
    }
    ok(
        &[
            "eval", "--model", "model/model.fer", "--manifest", "prod/manifest.csv", "--variant", "saliency_product",
            "--out-dir", "eval",
        ],
        d,
    );
    let confusion = fs::read_to_string(d.join("eval/confusion.csv")).unwrap();
    assert!(confusion.starts_with("true\\predicted,Angry,Disgusted"));
    ok(
        &["report", "--confusion", "eval/confusion.csv", "--epochs", "model/model_epochs.csv", "--out-dir", "rep"],
        d,
    );
    assert!(d.join("rep/training_curve.png").exists());
    for (dir, cmd) in [
        ("faces", "preprocess"),
        ("sal", "saliency"),
        ("prod", "product"),
        ("eval", "eval"),
        ("rep", "report"),
    ] {
        assert!(d.join(dir).join(format!("{cmd}.run.txt")).exists(), "no run echo for {cmd}");
    }

    // evaluating plain faces with a saliency-product model path mix-up is refused
    let out = fer(
        &["eval", "--model", "model/model.fer", "--manifest", "faces/manifest.csv", "--variant", "saliency_product"],
        d,
    );
    assert_eq!(out.status.code(), Some(1));
}
