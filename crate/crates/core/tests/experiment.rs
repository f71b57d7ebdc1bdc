use std::path::Path;

use mcot::config::{ExperimentConfig, SuiteConfig};
use mcot::experiment::{artifacts, exit_code, run_experiment, run_suite, RunSummary};
use mcot::io::read_snapshot;

const MINIMAL: &str = r#"
seed = 1
output_dir = "minimal"

[law]
kind = "preset"
name = "mu1_1d"

[basis]
type = "legendre"
n = 5
dump = true

[problem]
m = 2
k = 50
epsilon = 0.1

[langevin]
n_max = 100
"#;

fn minimal(dir: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(&MINIMAL.replace("\"minimal\"", &format!("\"{dir}\""))).unwrap()
}

#[test]
fn minimal_run_writes_all_artifacts() {
    let root = tempfile::tempdir().unwrap();
    let s = run_experiment(&minimal("a"), root.path()).unwrap();
    assert_eq!(s.exit_code, exit_code::OK);
    assert_eq!(s.accepted, Some(100));
    let dir = root.path().join("a");
    for f in [
        artifacts::CONFIG,
        artifacts::BASIS,
        artifacts::INIT_REPORT,
        artifacts::RUNLOG,
        artifacts::BEST_STATE,
        "best_state.json",
        artifacts::FINAL_STATE,
        artifacts::PAIR_COUPLING,
        artifacts::RADIAL_COUPLING,
        artifacts::ORACLE_MAP,
        artifacts::ORACLE,
        artifacts::SUMMARY,
    ] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let runlog = std::fs::read_to_string(dir.join(artifacts::RUNLOG)).unwrap();
    // schema line, header, initial state and 100 accepted iterations
    assert_eq!(runlog.lines().count(), 2 + 101);

    let summary: RunSummary =
        serde_json::from_str(&std::fs::read_to_string(dir.join(artifacts::SUMMARY)).unwrap())
            .unwrap();
    assert_eq!(summary.version, env!("CARGO_PKG_VERSION"));
    assert_eq!(summary.params.problem.k, 50);
    let oracle = summary.oracle_cost.unwrap();
    assert!((oracle - 2.0 / 1.1).abs() < 1e-8);
    assert!(summary.best_cost.unwrap() <= oracle * 1.01);

    let snap = read_snapshot(&dir.join(artifacts::BEST_STATE)).unwrap();
    assert_eq!((snap.k, snap.m, snap.d), (50, 2, 1));
    assert_eq!(
        snap.meta.unwrap().iteration,
        summary.best_iteration.unwrap()
    );
}

#[test]
fn repeated_runs_have_identical_runlogs() {
    let root = tempfile::tempdir().unwrap();
    run_experiment(&minimal("one"), root.path()).unwrap();
    run_experiment(&minimal("two"), root.path()).unwrap();
    let read = |d: &str| std::fs::read(root.path().join(d).join(artifacts::RUNLOG)).unwrap();
    assert_eq!(read("one"), read("two"));
}

#[test]
fn init_failure_has_its_own_exit_code() {
    let root = tempfile::tempdir().unwrap();
    let mut cfg = minimal("fail");
    cfg.init.max_iters = 1;
    let err = run_experiment(&cfg, root.path()).unwrap_err();
    assert_eq!(err.exit_code(), exit_code::INIT);
    let summary: RunSummary = serde_json::from_str(
        &std::fs::read_to_string(root.path().join("fail").join(artifacts::SUMMARY)).unwrap(),
    )
    .unwrap();
    assert_eq!(summary.status, "failed");
    assert_eq!(summary.exit_code, exit_code::INIT);
}

#[test]
fn mismatched_basis_is_a_config_error() {
    let root = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace("mu1_1d", "mu1_3d");
    let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
    let err = run_experiment(&cfg, root.path()).unwrap_err();
    assert_eq!(err.exit_code(), exit_code::CONFIG);
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn suite_continues_after_a_failed_run() {
    let root = tempfile::tempdir().unwrap();
    let cfgs = tempfile::tempdir().unwrap();
    write(
        &cfgs.path().join("a.toml"),
        &MINIMAL.replace("\"minimal\"", "\"a\""),
    );
    let failing = MINIMAL
        .replace("\"minimal\"", "\"b\"")
        .replace("[langevin]", "[init]\nmax_iters = 1\n\n[langevin]");
    write(&cfgs.path().join("b.toml"), &failing);
    let suite_path = cfgs.path().join("suite.toml");
    write(
        &suite_path,
        r#"
output_dir = "suite"
workers = 2
configs = ["a.toml", "b.toml"]

[[run]]
seed = 4
output_dir = "c"
law = { kind = "preset", name = "mu2_1d" }
basis = { type = "legendre", n = 4 }
problem = { m = 3, k = 20, epsilon = 0.1, mode = "squared" }
langevin = { n_max = 20 }
"#,
    );
    let (suite, runs) = SuiteConfig::load(&suite_path).unwrap();
    assert_eq!(runs.len(), 3);
    let report = run_suite(&suite, &runs, root.path()).unwrap();
    assert_eq!(report.rows.len(), 3);
    assert_eq!(report.failures(), 1);
    assert_eq!(report.rows[1].exit_code, exit_code::INIT);
    let table = std::fs::read_to_string(&report.aggregate).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 2 + 3);
    assert!(lines[1].starts_with("label,law,M,N,K,beta0,schedule,best_cost,oracle_gap"));
    assert!(lines[2].ends_with(",ok"));
    assert!(lines[3].ends_with(",failed:3"));
    assert!(root
        .path()
        .join("suite/c")
        .join(artifacts::SUMMARY)
        .is_file());
}

#[test]
fn shipped_configs_parse_and_build() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        let runs = if text.contains("[[run]]") || text.contains("configs =") {
            SuiteConfig::load(&path).unwrap().1
        } else {
            vec![ExperimentConfig::load(&path).unwrap()]
        };
        for cfg in runs {
            let (_, problem) = cfg
                .build()
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert!(problem.k() > 0);
            seen += 1;
        }
    }
    // minimal + 6 + 8 + 9 + 4
    assert_eq!(seen, 28);
}
