use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_plume2rate"));
    c.env_remove("PLUME2RATE_DATA_ROOT").env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str], cfg: Option<&Path>, root: &Path) -> Output {
    let mut c = bin();
    c.args(args).arg("--data-root").arg(root);
    if let Some(p) = cfg {
        c.arg("--config").arg(p);
    }
    c.output().unwrap()
}

fn write_cfg(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("cfg.toml");
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn print_config_round_trips() {
    let out = bin().arg("--print-config").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = plume2rate::config::RunConfig::from_str_any(&text, false).unwrap();
    assert_eq!(cfg, plume2rate::config::RunConfig::default());
}

#[test]
fn simulate_succeeds_and_honours_env_root() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_cfg(d.path(), "[simulate]\ncount = 4\n");
    let root = d.path().join("data");
    let out = bin()
        .args(["simulate", "--seed", "3", "--config"])
        .arg(&cfg)
        .env("PLUME2RATE_DATA_ROOT", &root)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_dir(root.join("simulated/samples")).unwrap().count(), 8);
}

#[test]
fn config_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_cfg(d.path(), "[simulate]\nq_range = [30.0, 5.0]\n");
    assert_eq!(run(&["simulate"], Some(&cfg), d.path()).status.code(), Some(2));
    let cfg = write_cfg(d.path(), "[simulate]\nnot_a_key = 1\n");
    assert_eq!(run(&["simulate"], Some(&cfg), d.path()).status.code(), Some(2));
    let out = bin().arg("simulate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_3() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_cfg(d.path(), "[ingest]\nsynthesize_raw = false\n");
    assert_eq!(run(&["ingest"], Some(&cfg), d.path()).status.code(), Some(3));
    let cfg = write_cfg(d.path(), "[simulate]\ncount = 20\n");
    assert_eq!(run(&["simulate"], Some(&cfg), d.path()).status.code(), Some(0));
    assert_eq!(run(&["build-dataset"], Some(&cfg), d.path()).status.code(), Some(0));
    assert_eq!(run(&["evaluate"], Some(&cfg), d.path()).status.code(), Some(3));
}

#[test]
fn unbinned_samples_exit_4_and_are_listed() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_cfg(d.path(), "[simulate]\ncount = 6\nq_range = [10.0, 40.0]\n[dataset]\nbin_edges = [0.0, 5.0]\n");
    assert_eq!(run(&["simulate"], Some(&cfg), d.path()).status.code(), Some(0));
    let out = run(&["build-dataset"], Some(&cfg), d.path());
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.matches("unbinned: sim_").count(), 6, "{err}");
}
