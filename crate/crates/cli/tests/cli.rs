use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
seed = 1
output_dir = "run"

[law]
kind = "preset"
name = "mu2_1d"

[basis]
type = "legendre"
n = 2

[problem]
m = 2
k = 10
epsilon = 0.1
mode = "squared"

[langevin]
n_max = 50
"#;

fn mcot(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcot"))
        .args(args)
        .env("MCOT_OUTPUT_ROOT", root)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_honours_output_root_and_seed_override() {
    let root = tempfile::tempdir().unwrap();
    let cfg = write_config(root.path(), "a.toml", CONFIG);
    let out = mcot(root.path(), &["run", &cfg]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["status"], "ok");
    assert_eq!(summary["params"]["seed"], 1);
    let first = std::fs::read(root.path().join("run/runlog.csv")).unwrap();

    let other = tempfile::tempdir().unwrap();
    let out = mcot(other.path(), &["--seed", "2", "run", &cfg]);
    assert!(out.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["params"]["seed"], 2);
    assert_ne!(
        std::fs::read(other.path().join("run/runlog.csv")).unwrap(),
        first
    );
}

#[test]
fn exit_codes_distinguish_failure_stages() {
    let root = tempfile::tempdir().unwrap();
    let typo = write_config(root.path(), "typo.toml", &CONFIG.replace("n_max", "nmax"));
    assert_eq!(mcot(root.path(), &["run", &typo]).status.code(), Some(2));
    let init = write_config(
        root.path(),
        "init.toml",
        &CONFIG.replace("[langevin]", "[init]\nmax_iters = 1\n\n[langevin]"),
    );
    let out = mcot(root.path(), &["run", &init]);
    assert_eq!(out.status.code(), Some(3));
    assert!(root.path().join("run/summary.json").is_file());
    assert_eq!(
        mcot(root.path(), &["run", "/nonexistent.toml"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn suite_writes_aggregate_and_reports_failures() {
    let root = tempfile::tempdir().unwrap();
    let a = write_config(root.path(), "a.toml", &CONFIG.replace("\"run\"", "\"a\""));
    let b = write_config(
        root.path(),
        "b.toml",
        &CONFIG
            .replace("\"run\"", "\"b\"")
            .replace("[langevin]", "[init]\nmax_iters = 1\n\n[langevin]"),
    );
    let suite = write_config(
        root.path(),
        "suite.toml",
        &format!("output_dir = \"s\"\nconfigs = [{a:?}, {b:?}]\n"),
    );
    let out = mcot(root.path(), &["suite", &suite, "--workers", "2"]);
    assert_eq!(out.status.code(), Some(1));
    let table = std::fs::read_to_string(root.path().join("s/aggregate.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(table.contains("failed:3"));
}

#[test]
fn oracle_prints_the_exact_cost_and_map() {
    let root = tempfile::tempdir().unwrap();
    let map = root.path().join("map.csv");
    let out = mcot(
        root.path(),
        &[
            "oracle1d",
            "mu1_1d",
            "2",
            "0.1",
            "--map",
            map.to_str().unwrap(),
        ],
    );
    assert!(out.status.success());
    let cost: f64 = String::from_utf8(out.stdout)
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!((cost - 2.0 / 1.1).abs() < 1e-12);
    let csv = std::fs::read_to_string(map).unwrap();
    assert!(csv.starts_with("# schema:"));
    assert_eq!(
        mcot(root.path(), &["oracle1d", "mu1_3d", "2", "0.1"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn path_check_between_two_solver_outputs() {
    let root = tempfile::tempdir().unwrap();
    let cfg = write_config(root.path(), "p.toml", CONFIG);
    for (seed, dir) in [("1", "one"), ("2", "two")] {
        let c = write_config(
            root.path(),
            &format!("{dir}.toml"),
            &CONFIG.replace("\"run\"", &format!("\"{dir}\"")),
        );
        assert!(mcot(root.path(), &["--seed", seed, "run", &c])
            .status
            .success());
    }
    let a = root.path().join("one/best_state.csv");
    let b = root.path().join("two/best_state.csv");
    let csv = root.path().join("path.csv");
    let out = mcot(
        root.path(),
        &[
            "path-check",
            a.to_str().unwrap(),
            b.to_str().unwrap(),
            &cfg,
            "--csv",
            csv.to_str().unwrap(),
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let check: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(check["passed"], true);
    assert!(std::fs::read_to_string(csv).unwrap().lines().count() > 100);
}
