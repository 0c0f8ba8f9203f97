//! Runs the built binary so that the environment override and the first
//! output line can be observed.

use std::process::Command;

#[test]
fn env_var_sets_output_dir_and_config_comes_first() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("from-env");
    let run = Command::new(env!("CARGO_BIN_EXE_dgn"))
        .args(["--threads", "1", "synth", "--count", "3", "--size", "8"])
        .env("DGN_OUT", &out)
        .output()
        .unwrap();
    assert!(run.status.success());
    let stdout = String::from_utf8(run.stdout).unwrap();
    let first: serde_json::Value = serde_json::from_str(stdout.lines().next().unwrap()).unwrap();
    assert_eq!(first["threads"], 1);
    assert_eq!(first["out"], out.to_str().unwrap());
    assert_eq!(first["command"]["synth"]["count"], 3);
    assert!(out.join("synth-00002.png").exists());
}

#[test]
fn flag_beats_env_var() {
    let root = tempfile::tempdir().unwrap();
    let flag = root.path().join("flag");
    let status = Command::new(env!("CARGO_BIN_EXE_dgn"))
        .args(["synth", "--count", "1", "--size", "8", "--out", flag.to_str().unwrap()])
        .env("DGN_OUT", root.path().join("env"))
        .status()
        .unwrap();
    assert!(status.success());
    assert!(flag.join("synth-00000.png").exists());
    assert!(!root.path().join("env").exists());
}

#[test]
fn exit_code_reaches_the_process() {
    let status = Command::new(env!("CARGO_BIN_EXE_dgn")).arg("nope").status().unwrap();
    assert_eq!(status.code(), Some(1));
}
