mod common;

use std::path::Path;
use std::process::Command;

use floodda::config::ExperimentConfig;

fn floodda(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_floodda")).args(args).output().unwrap()
}

fn write_small_config(dir: &Path) -> String {
    let cfg = common::small_config(&dir.join("out"));
    let path = dir.join("small.ini");
    std::fs::write(&path, cfg.to_ini()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn print_config_output_parses_back_to_the_defaults() {
    let out = floodda(&["print-config"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(ExperimentConfig::parse(&text).unwrap(), ExperimentConfig::default());
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let out = floodda(&["print-config", "--config", &cfg, "--mode", "iwda", "--seed", "9", "--members", "12"]);
    let parsed = ExperimentConfig::parse(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(parsed.mode, floodda::config::Mode::Iwda);
    assert_eq!((parsed.seed, parsed.members), (9, 12));
    assert_eq!(parsed.catchment.ncols, 40);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ini");
    std::fs::write(&bad, "[experiment]\nmembers = one\n").unwrap();
    assert_eq!(floodda(&["truth", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(floodda(&["run", "--members", "1"]).status.code(), Some(2));

    let cfg = write_small_config(dir.path());
    let out = floodda(&["synthesize", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gauge_upstream.csv"));
}

#[test]
fn full_pipeline_through_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    for args in [
        vec!["truth"],
        vec!["synthesize"],
        vec!["run", "--mode", "fr"],
        vec!["run", "--mode", "ihda"],
        vec!["verify"],
    ] {
        let mut a = args.clone();
        a.extend(["--config", &cfg]);
        let out = floodda(&a);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let rmse = std::fs::read_to_string(dir.path().join("out/report/rmse.csv")).unwrap();
    assert_eq!(rmse.lines().count(), 1 + 2 * 3);
    assert!(rmse.lines().any(|l| l.starts_with("ihda,downstream,")));
}
