use std::path::{Path, PathBuf};
use std::process::Command;

use hjreg_cli::config::{load, parse_assignment, set_path};
use hjreg_cli::{run, CliError, Kind};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn manifest(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("manifest.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn hjreg(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_hjreg"))
        .args(args)
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

#[test]
fn assignments_parse_as_toml_literals() {
    let (k, v) = parse_assignment("grid.nodes=[11, 21]").unwrap();
    assert_eq!(k, "grid.nodes");
    assert_eq!(v.as_array().unwrap().len(), 2);
    let (_, v) = parse_assignment("lambda = 0.25").unwrap();
    assert_eq!(v.as_float(), Some(0.25));
    let (_, v) = parse_assignment("lagrangian.key=double_well").unwrap();
    assert_eq!(v.as_str(), Some("double_well"));
    assert!(matches!(parse_assignment("no_equals"), Err(CliError::Config(_))));
    assert!(matches!(parse_assignment("=3"), Err(CliError::Config(_))));
}

#[test]
fn dotted_paths_create_tables() {
    let mut t = toml::Table::new();
    set_path(&mut t, "a.b.c", toml::Value::Integer(3)).unwrap();
    assert_eq!(t["a"]["b"]["c"].as_integer(), Some(3));
    set_path(&mut t, "x", toml::Value::Integer(1)).unwrap();
    assert!(set_path(&mut t, "x.y", toml::Value::Integer(2)).is_err());
}

#[test]
fn every_shipped_config_loads() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        let table: toml::Table = toml::from_str(&text).unwrap();
        let kind: Kind = table["kind"].as_str().unwrap().parse().unwrap();
        let cfg = load(Some(&path), kind, &[], &[], None).unwrap();
        assert_eq!(cfg.kind, Some(kind), "{}", path.display());
    }
}

#[test]
fn overrides_take_precedence() {
    let path = configs().join("c09_regularize_convergence.toml");
    let sets = vec!["lambda=0.25".to_string(), "grid.nodes=[81]".to_string()];
    let tols = vec!["final_error_factor=3".to_string()];
    let cfg = load(Some(&path), Kind::Regularize, &sets, &tols, Some(42)).unwrap();
    assert_eq!(cfg.lambda, Some(0.25));
    assert_eq!(cfg.grid.as_ref().unwrap().nodes, vec![81]);
    assert_eq!(cfg.tol("final_error_factor", 4.0), 3.0);
    assert_eq!(cfg.seed, 42);
}

#[test]
fn invalid_configs_are_rejected() {
    let path = configs().join("c09_regularize_convergence.toml");
    assert!(matches!(load(Some(&path), Kind::Singularity, &[], &[], None), Err(CliError::Config(_))));
    assert!(load(Some(&path), Kind::Regularize, &["bogus=1".into()], &[], None).is_err());
    assert!(load(Some(&path), Kind::Regularize, &[], &["final_error_factor=-1".into()], None).is_err());
    assert!(load(Some(Path::new("/nonexistent/x.toml")), Kind::Regularize, &[], &[], None).is_err());
}

#[test]
fn failures_still_write_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let path = configs().join("c09_regularize_convergence.toml");
    let cfg = load(Some(&path), Kind::Regularize, &[], &["not_a_tolerance=1".into()], None);
    let summary = run(Kind::Regularize, cfg, dir.path());
    assert_eq!(summary.exit_code, 2);
    let m = manifest(dir.path());
    assert_eq!(m["status"], "failed");
    assert_eq!(m["error_class"], "config");
    assert!(dir.path().join("timing.json").exists());
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let out = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let c01 = configs().join("c01_fundamental_free_particle.toml");
    let c01 = c01.to_str().unwrap();
    let c11 = configs().join("c11_singularity.toml");
    let c11 = c11.to_str().unwrap();

    assert_eq!(
        hjreg(&["fundamental", "--config", c01, "--set", "fundamental.samples=3", "--out", &out("ok")]),
        0
    );
    assert_eq!(hjreg(&["fundamental", "--config", "/nonexistent.toml", "--out", &out("io")]), 2);
    assert_eq!(hjreg(&["singularity", "--config", c01, "--out", &out("kind")]), 2);
    assert_eq!(
        hjreg(&[
            "fundamental",
            "--config",
            c01,
            "--set",
            "fundamental.samples=2",
            "--set",
            "fundamental.solver_tol=1e-300",
            "--out",
            &out("solver"),
        ]),
        3
    );
    assert_eq!(manifest(&dir.path().join("solver"))["error_class"], "solver");
    assert_eq!(
        hjreg(&[
            "fundamental",
            "--config",
            c01,
            "--set",
            "fundamental.samples=3",
            "--tol",
            "max_rel_error=1e-30",
            "--out",
            &out("violation"),
        ]),
        4
    );
    assert_eq!(
        hjreg(&["singularity", "--config", c11, "--set", "regularize.x0=[0.5]", "--out", &out("smooth")]),
        4
    );
    let m = manifest(&dir.path().join("violation"));
    assert_eq!(m["error_class"], "violation");
    assert_eq!(m["checks"][0]["passed"], false);
}
