use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gesturekit::dsp::load_rsa;
use gesturekit::eval::EvalReport;
use gesturekit::GestureClass;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gesturekit")).args(args).output().expect("spawn gesturekit")
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

fn stdout(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["selftest", "--bogus"]), 1);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["train", "--arch", "alexnet", "--data", "x", "--out", "y"]), 1);
    assert_eq!(code(&["gen", "--out", "x", "--val-ratio", "1.5"]), 1);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    assert_eq!(code(&["infer", "--model", p(&missing), "--input", p(&missing)]), 2);

    let junk = dir.path().join("junk.rsa");
    fs::write(&junk, b"RSA1 but not really").unwrap();
    let ckpt = dir.path().join("junk.gnn");
    fs::write(&ckpt, b"GNN1\0\0").unwrap();
    assert_eq!(code(&["infer", "--model", p(&ckpt), "--input", p(&junk)]), 2);

    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, "{\"max_epochs\": }").unwrap();
    let out = run(&["train", "--arch", "vgg10", "--data", p(dir.path()), "--out", p(&ckpt), "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("byte"));
}

#[test]
fn selftest_passes() {
    let text = stdout(&["selftest"]);
    assert_eq!(text.lines().count(), 5, "{text}");
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
}

#[test]
fn raw_process_train_eval_infer() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let raw = d.join("click.fmc");
    let rsa = d.join("click.rsa");
    let pgm = d.join("click.pgm");
    stdout(&["gen", "--raw", p(&raw), "--gesture", "CLICK", "--seed", "2"]);
    stdout(&["process", "--input", p(&raw), "--output", p(&rsa), "--label", "CLICK", "--pgm", p(&pgm)]);
    let image = load_rsa(&rsa).unwrap();
    assert_eq!(image.label, Some(GestureClass::Click));
    assert!(fs::read(&pgm).unwrap().starts_with(b"P5"));

    let data = d.join("data");
    stdout(&["gen", "--per-class", "4", "--crops", "2", "--out", p(&data), "--seed", "1"]);
    let ckpt = d.join("t.gnn");
    stdout(&["train", "--arch", "template", "--data", p(&data), "--out", p(&ckpt)]);

    let report = d.join("r.csv");
    stdout(&["eval", "--model", p(&ckpt), "--data", p(&data), "--report", p(&report)]);
    let text = fs::read_to_string(&report).unwrap();
    let parsed = EvalReport::from_csv(&text, &report).unwrap();
    assert_eq!(parsed.to_csv(), text);
    assert!(text.starts_with("class,accuracy,n\n"));

    let all = d.join("all.csv");
    stdout(&["eval", "--model", p(&ckpt), "--data", p(&data), "--report", p(&all), "--split", "all"]);
    assert_eq!(EvalReport::from_csv(&fs::read_to_string(&all).unwrap(), &all).unwrap().n, 32);

    let out = stdout(&["infer", "--model", p(&ckpt), "--input", p(&rsa)]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 5, "{out}");
    let total: f64 = lines[..4]
        .iter()
        .zip(GestureClass::ALL)
        .map(|(l, g)| {
            let (name, prob) = l.split_once(' ').unwrap();
            assert_eq!(name, g.name());
            prob.parse::<f64>().unwrap()
        })
        .sum();
    assert!((total - 1.0).abs() < 1e-5);
    assert!(lines[4].starts_with("predicted "));
}
