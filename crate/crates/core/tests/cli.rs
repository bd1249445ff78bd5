// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn aape(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aape")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn toy(dir: &Path) {
    let spec = dir.join("spec.json");
    fs::write(&spec, r#"{ "random_seeds": 2, "train_per_class": 60, "test_per_class": 60 }"#).unwrap();
    let out = aape(&["toy-run", "--spec", s(&spec), "--out", s(&dir.join("toy"))]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&aape(&["--help"])), 0);
    let v = aape(&["--version"]);
    assert_eq!(code(&v), 0);
    assert!(String::from_utf8_lossy(&v.stdout).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn usage_and_input_errors_exit_one() {
    assert_eq!(code(&aape(&["no-such-command"])), 1);
    assert_eq!(code(&aape(&["select"])), 1);
    let out = aape(&["validate", "--dataset", "/definitely/not/here"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("violation"));
}

#[test]
fn random_masks_require_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    toy(dir.path());
    let ds = dir.path().join("toy/dataset");
    let mask = dir.path().join("m.json");
    assert_eq!(code(&aape(&["mask", "random", "--dataset", s(&ds), "--size", "3", "--out", s(&mask)])), 1);
    assert_eq!(
        code(&aape(&["--seed", "4", "mask", "random", "--dataset", s(&ds), "--size", "3", "--out", s(&mask)])),
        0
    );
}

#[test]
fn warnings_exit_two_only_under_strict() {
    let dir = tempfile::tempdir().unwrap();
    toy(dir.path());
    let sel = dir.path().join("toy/selection.json");
    let mask = dir.path().join("m.json");
    // the two nearby clusters share no selected neurons, so the mask is empty
    let args = ["mask", "targeted", "--selection", s(&sel), "--classes", "class_00,class_01", "--mode", "intersection"];
    let mut plain = args.to_vec();
    plain.extend(["--out", s(&mask)]);
    let out = aape(&plain);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));

    let mut strict = vec!["--strict"];
    strict.extend(plain);
    assert_eq!(code(&aape(&strict)), 2);
}

#[test]
fn repeated_runs_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let d = dir.path().join(run);
        fs::create_dir(&d).unwrap();
        toy(&d);
        let sel = d.join("toy/selection.json");
        let mask = d.join("random.json");
        let overlap = d.join("overlap.csv");
        let svg = d.join("overlap.svg");
        let ov_json = d.join("overlap.json");
        for args in [
            vec!["--seed", "5", "mask", "random", "--selection", s(&sel), "--size", "10", "--out", s(&mask)],
            vec!["overlap", "--selection", s(&sel), "--out", s(&overlap)],
            vec!["overlap", "--selection", s(&sel), "--out", s(&ov_json)],
            vec!["plot", "--overlap", s(&ov_json), "--out", s(&svg)],
        ] {
            assert_eq!(code(&aape(&args)), 0, "{args:?}");
        }
        outputs.push(
            ["toy/selection.json", "toy/overlap.svg", "random.json", "overlap.csv", "overlap.svg"]
                .map(|f| fs::read(d.join(f)).unwrap()),
        );
    }
    assert_eq!(outputs[0], outputs[1]);
}
