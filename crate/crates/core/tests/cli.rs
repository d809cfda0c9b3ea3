use std::path::Path;
use std::process::{Command, Output};

fn eyesim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eyesim")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

const TINY: &str = r#"{"name": "tiny", "layers": [
  {"label": "A", "kind": "conv", "g": 1, "n": 1, "m": 8, "c": 3, "h": 10, "w": 10, "r": 3, "s": 3, "u": 1},
  {"label": "B", "kind": "fc", "g": 1, "n": 1, "m": 10, "c": 8, "h": 4, "w": 4, "r": 4, "s": 4, "u": 1}
]}"#;

fn tiny(dir: &Path) -> String {
    let p = dir.join("tiny.json");
    std::fs::write(&p, TINY).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn simulate_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let model = tiny(dir.path());
    let run = |seed: &str| {
        let o = eyesim(&["simulate", "--model", &model, "--sparsity", "0.6", "--seed", seed, "--bw", "ddr4-3200"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        o.stdout
    };
    let a = run("7");
    assert_eq!(a, run("7"));
    assert_ne!(a, run("8"));
}

#[test]
fn input_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let model = tiny(dir.path());
    assert_eq!(code(&eyesim(&["sweep", "--model", &model, "--scales", "256,abc"])), 2);
    assert_eq!(code(&eyesim(&["analyze", "--model", "no_such_model"])), 2);
    assert_eq!(code(&eyesim(&["simulate", "--model", &model, "--bw", "fast"])), 2);
    assert_eq!(code(&eyesim(&["simulate", "--model", &model, "--variant", "v9"])), 2);
    assert_eq!(code(&eyesim(&["frobnicate"])), 2);
    assert_eq!(code(&eyesim(&["analyze"])), 2);
    let missing = dir.path().join("none");
    std::fs::create_dir(&missing).unwrap();
    let o = eyesim(&["simulate", "--model", &model, "--tensors", missing.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(!o.stderr.is_empty());
}

#[test]
fn help_and_success_exit_with_zero() {
    assert_eq!(code(&eyesim(&["--help"])), 0);
    assert_eq!(code(&eyesim(&["arch", "--variant", "v1"])), 0);
    assert_eq!(code(&eyesim(&["analyze", "--model", "alexnet"])), 0);
}

#[test]
fn example_encodes_and_decodes() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("ex.json");
    let o = eyesim(&["encode", "--example", "--out", json.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
    assert_eq!(v["schema"], "eyesim.csc.v1");
    assert_eq!(v["tensor"]["data"], serde_json::json!([1, 2, 3, 4, 5, 6, 7, 8]));
    assert_eq!(v["tensor"]["counts"], serde_json::json!([0, 1, 1, 1, 0, 5, 0, 2]));
    assert_eq!(v["tensor"]["addresses"], serde_json::json!([0, 2, 5, 6, 6, 8]));

    let eyt = dir.path().join("ex.eyt");
    let o = eyesim(&["encode", "--decode", json.to_str().unwrap(), "--out", eyt.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let again = dir.path().join("again.json");
    let o = eyesim(&["encode", eyt.to_str().unwrap(), "--segment-len", "6", "--out", again.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let w: serde_json::Value = serde_json::from_slice(&std::fs::read(&again).unwrap()).unwrap();
    assert_eq!(w["tensor"]["data"], v["tensor"]["data"]);
    assert_eq!(w["nonzeros"], 8);
}

#[test]
fn out_file_is_complete_and_logged() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("arch.json");
    assert_eq!(code(&eyesim(&["arch", "--out", out.to_str().unwrap()])), 0);
    let body = std::fs::read_to_string(&out).unwrap();
    assert!(serde_json::from_str::<serde_json::Value>(&body).is_ok());
    let log = std::fs::read_to_string(dir.path().join("arch.json.log")).unwrap();
    assert!(log.contains("finished_unix="));
    let stray: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().contains(".tmp"))
        .collect();
    assert!(stray.is_empty());
}

#[test]
fn sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let model = tiny(dir.path());
    let o = eyesim(&["sweep", "--model", &model, "--scales", "64,256", "--variants", "v2", "--format", "csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 3, "{text}");
}
