use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn pathwise(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pathwise")).args(args).output().expect("binary runs")
}

fn run_in(dir: &Path, sub: &str, config: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--config", config.to_str().unwrap(), "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    pathwise(&args)
}

const BASE: &str = r#"
[problem]
dim = 1
t_end = 0.5
hamiltonian = [{ family = "x_independent", h = "0.5*p1^2" }]
drift = { family = "heat", nu = 0.5 }
path = { source = "brownian", resolution = 64 }
datum = { kind = "gaussian", amplitude = 0.5, width = 0.5 }

[numerics]
lower = [-2.0]
upper = [2.0]
dx = 0.0625
dt = DT
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn malformed_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let bad_dx = BASE.replace("dt = DT", "dt = 0.001").replace("dx = 0.0625", "dx = -0.0625");
    let out = run_in(dir.path(), "solve", &write_config(dir.path(), &bad_dx), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("numerics.dx"), "{}", String::from_utf8_lossy(&out.stderr));

    let unknown = BASE.replace("dt = DT", "dt = 0.001\nsteps = 3");
    let out = run_in(dir.path(), "solve", &write_config(dir.path(), &unknown), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("steps"));

    let missing = run_in(dir.path(), "lift", &dir.path().join("absent.toml"), &[]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn step_restriction_aborts_with_required_dt() {
    let dir = tempfile::tempdir().unwrap();
    // dx²/(2·n·ν) = 0.00390625 for ν = 0.5.
    let out = run_in(dir.path(), "solve", &write_config(dir.path(), &BASE.replace("DT", "0.01")), &[]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("required dt <= 0.00390625"), "{err}");
}

#[test]
fn solve_writes_manifest_with_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &BASE.replace("DT", "0.0025"));
    let out = run_in(dir.path(), "solve", &config, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "solve");
    let config_hash = hex::encode(Sha256::digest(std::fs::read(&config).unwrap()));
    assert_eq!(manifest["config_sha256"], config_hash.as_str());
    for (file, hash) in manifest["artifacts"].as_object().unwrap() {
        let bytes = std::fs::read(dir.path().join(file)).unwrap();
        assert_eq!(hash.as_str().unwrap(), hex::encode(Sha256::digest(&bytes)), "{file}");
    }
    assert!(dir.path().join("solution.csv").exists());
}

#[test]
fn seed_flag_controls_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &BASE.replace("DT", "0.0025"));
    let read = |sub: &str, seed: &str| {
        let out = dir.path().join(sub);
        let res = pathwise(&["lift", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", seed]);
        assert!(res.status.success());
        std::fs::read(out.join("path.csv")).unwrap()
    };
    let a = read("a", "1");
    assert_eq!(a, read("b", "1"));
    assert_ne!(a, read("c", "2"));
}

#[test]
fn verify_on_shipped_quadratic_config_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), "verify", &configs().join("quadratic_1d.toml"), &[]);
    let table = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{table}\n{}", String::from_utf8_lossy(&out.stderr));
    assert!(!table.contains("FAIL"), "{table}");
    for file in ["sub_super.json", "lower.csv", "upper.csv", "probes.json", "summary.txt", "manifest.json"] {
        assert!(dir.path().join(file).exists(), "{file}");
    }
}
