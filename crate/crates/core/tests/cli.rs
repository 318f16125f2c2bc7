use std::path::Path;
use std::process::{Command, Output};

use prefdn::image::{read_image, write_image};
use prefdn::synth::noisy_phantoms;
use prefdn::trainer::{parse_curves, CheckpointFile, CURVE_HEADER};
use prefdn::user_loss::parse_choice_log;

fn prefdn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prefdn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn sample_image(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("a.pgm");
    write_image(&noisy_phantoms(1, 20, 0.05, 2).unwrap()[0], &path).unwrap();
    path
}

#[test]
fn denoise_identity_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let a = sample_image(dir.path());
    let b = dir.path().join("b.pgm");
    let o = prefdn(&["denoise", "--in", s(&a), "--out", s(&b), "--sigma", "1,2,4", "--eps", "0,0,0"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (ia, ib) = (read_image(&a).unwrap(), read_image(&b).unwrap());
    assert!(ia.max_abs_diff(&ib).unwrap() <= 1.0 / 65535.0);

    let o = prefdn(&["denoise", "--in", "missing.pgm", "--out", s(&b), "--sigma", "1,2,4", "--eps", "0,0,0"]);
    assert_eq!(code(&o), 1);
    assert!(!o.stderr.is_empty());
    let o = prefdn(&["denoise", "--in", s(&a), "--out", s(&b), "--sigma", "1,2", "--eps", "0,0,0"]);
    assert_eq!(code(&o), 2);
    let o = prefdn(&["denoise", "--in", s(&a), "--out", s(&b), "--sigma", "1,2,40", "--eps", "0,0,0"]);
    assert_eq!(code(&o), 2);
    let o = prefdn(&["denoise", "--in", s(&a), "--out", s(&b), "--sigma", "1,2,4", "--eps", "0,-1,0"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn decompose_writes_offset_bands() {
    let dir = tempfile::tempdir().unwrap();
    let a = sample_image(dir.path());
    let out = dir.path().join("bands");
    let o = prefdn(&["decompose", "--in", s(&a), "--out-dir", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let input = read_image(&a).unwrap();
    let mut sum = read_image(&out.join("residual.pgm")).unwrap();
    for i in 1..=3 {
        let band = read_image(&out.join(format!("band{i}.pgm"))).unwrap();
        sum = sum.add(&band.map(|v| v - 0.5)).unwrap();
    }
    assert!(input.max_abs_diff(&sum).unwrap() < 4.0 / 65535.0);
}

fn simulate(dir: &Path, out: &str, eps: &str, sigma: &str, user: &str) -> Output {
    prefdn(&[
        "simulate",
        "--images",
        s(&dir.join("images")),
        "--out",
        s(&dir.join(out)),
        "--synthesize",
        "4",
        "--synth-size",
        "24",
        "--scenarios-per-image",
        "3",
        "--sigma",
        sigma,
        "--eps",
        eps,
        "--user-id",
        user,
        "--seed",
        "5",
    ])
}

#[test]
fn session_generation_and_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let o = prefdn(&[
        "gen-session",
        "--images",
        s(&dir.path().join("images")),
        "--out",
        s(&dir.path().join("plan")),
        "--synthesize",
        "3",
        "--synth-size",
        "16",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("plan/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["frames"].as_array().unwrap().len(), 12);

    for run in ["one", "two"] {
        let o = simulate(dir.path(), run, "0.01,0.02,0.04", "1,2,4", "u");
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let one = std::fs::read_to_string(dir.path().join("one/choices.jsonl")).unwrap();
    let two = std::fs::read_to_string(dir.path().join("two/choices.jsonl")).unwrap();
    assert_eq!(one, two);
    assert_eq!(parse_choice_log(&one).unwrap().len(), 12);

    std::fs::create_dir_all(dir.path().join("empty")).unwrap();
    let o = prefdn(&[
        "simulate",
        "--images",
        s(&dir.path().join("empty")),
        "--out",
        s(&dir.path().join("x")),
        "--sigma",
        "1,2,4",
        "--eps",
        "0,0,0",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn train_eval_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&simulate(d, "sharp", "0.005,0.01,0.02", "1,2,4", "a")), 0);
    assert_eq!(code(&simulate(d, "smooth", "0.1,0.2,0.3", "2,4,8", "b")), 0);

    for user in ["sharp", "smooth"] {
        let o = prefdn(&[
            "train",
            "--session",
            s(&d.join(user)),
            "--out",
            s(&d.join(format!("models/{user}.json"))),
            "--epochs",
            "60",
            "--batch-size",
            "4",
            "--folds",
            "4",
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).contains("sigmas="));
    }
    let model = CheckpointFile::read(&d.join("models/sharp.json")).unwrap();
    assert_eq!(model.user_id, "a");
    assert!(d.join("models/sharp.test.jsonl").is_file());

    let o = prefdn(&["export-curves", "--model", s(&d.join("models/sharp.json"))]);
    assert_eq!(code(&o), 0);
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.starts_with(CURVE_HEADER));
    assert_eq!(parse_curves(&csv).unwrap().len(), 60);

    let models = format!("{},{}", s(&d.join("models/sharp.json")), s(&d.join("models/smooth.json")));
    let tests = format!("{},{}", s(&d.join("sharp/choices.jsonl")), s(&d.join("smooth/choices.jsonl")));
    let o = prefdn(&["eval", "--models", &models, "--tests", &tests, "--variant", "hybrid"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "model,choices,choices");
    assert!(lines[1].starts_with("sharp,") && lines[2].starts_with("smooth,"));
    for row in &lines[1..] {
        let vals: Vec<f64> = row.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        assert_eq!(vals.len(), 2);
    }

    let o = prefdn(&["eval", "--models", &models, "--tests", &tests, "--variant", "best-match"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn gradcheck_reports_per_parameter_errors() {
    let o = prefdn(&["gradcheck", "--seed", "7", "--size", "12"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8(o.stdout).unwrap();
    assert_eq!(out.lines().count(), 7);
    assert!(out.starts_with("param,value,analytic,numeric,rel_error"));
    let o = prefdn(&["gradcheck", "--seed", "7", "--size", "12", "--tolerance", "0"]);
    assert_eq!(code(&o), 1);
}
