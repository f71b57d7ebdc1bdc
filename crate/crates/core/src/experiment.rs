//! Experiment driver: init, Langevin, artifacts; and suites of runs.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{resolve_output, ExperimentConfig, SuiteConfig};
use crate::error::Error;
use crate::init::{initialize, InitReport};
use crate::io::{
    pair_coupling_csv, radial_coupling_csv, schema_line, write_snapshot, RunLogWriter, SUITE_SCHEMA,
};
use crate::langevin::{run_with_observer, NoiseSchedule};
use crate::measures::MarginalLaw;
use crate::model::ConstrainedObjective;
use crate::oracle1d::{build_map, OracleRecord};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Process exit codes of the command-line runner.
pub mod exit_code {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const INIT: i32 = 3;
    pub const STALL: i32 = 4;
    pub const SINGULAR_GRAM: i32 = 5;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Setup,
    Init,
    Langevin,
    Output,
}

#[derive(Debug, thiserror::Error)]
#[error("{stage:?} failed: {source}")]
pub struct RunError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl RunError {
    fn at(stage: Stage) -> impl FnOnce(Error) -> Self {
        move |source| Self { stage, source }
    }

    pub fn exit_code(&self) -> i32 {
        match (&self.source, self.stage) {
            (Error::Config(_), _) => exit_code::CONFIG,
            (Error::SingularGram { .. }, _) => exit_code::SINGULAR_GRAM,
            (Error::Stall { .. }, _) => exit_code::STALL,
            (_, Stage::Init) => exit_code::INIT,
            _ => exit_code::OTHER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub version: String,
    pub label: String,
    /// `ok` or `failed`.
    pub status: String,
    pub error: Option<String>,
    pub failed_stage: Option<Stage>,
    pub exit_code: i32,
    pub params: ExperimentConfig,
    pub n_test_functions: Option<usize>,
    pub init: Option<InitReport>,
    pub best_cost: Option<f64>,
    pub best_iteration: Option<usize>,
    pub final_cost: Option<f64>,
    pub accepted: Option<usize>,
    pub rejected: Option<usize>,
    pub oracle_cost: Option<f64>,
    /// `(oracle - best) / oracle`.
    pub relative_gap: Option<f64>,
    pub wall_time_s: f64,
    pub output_dir: PathBuf,
}

impl RunSummary {
    fn new(cfg: &ExperimentConfig, dir: PathBuf) -> Self {
        Self {
            version: VERSION.into(),
            label: cfg.label(),
            status: "failed".into(),
            error: None,
            failed_stage: None,
            exit_code: exit_code::OTHER,
            params: cfg.clone(),
            n_test_functions: None,
            init: None,
            best_cost: None,
            best_iteration: None,
            final_cost: None,
            accepted: None,
            rejected: None,
            oracle_cost: None,
            relative_gap: None,
            wall_time_s: 0.0,
            output_dir: dir,
        }
    }
}

/// Artifact file names inside a run directory.
pub mod artifacts {
    pub const CONFIG: &str = "config.json";
    pub const BASIS: &str = "basis.csv";
    pub const INIT_REPORT: &str = "init_report.json";
    pub const RUNLOG: &str = "runlog.csv";
    pub const BEST_STATE: &str = "best_state.csv";
    pub const FINAL_STATE: &str = "final_state.csv";
    pub const SNAPSHOTS: &str = "snapshots";
    pub const PAIR_COUPLING: &str = "pair_coupling.csv";
    pub const RADIAL_COUPLING: &str = "radial_coupling.csv";
    pub const ORACLE_MAP: &str = "oracle_map.csv";
    pub const ORACLE: &str = "oracle.json";
    pub const SUMMARY: &str = "summary.json";
}

/// Runs one experiment, writing artifacts under `root / cfg.output_dir`.
///
/// `summary.json` is written in every case where the directory could be
/// created, including failures.
pub fn run_experiment(cfg: &ExperimentConfig, root: &Path) -> Result<RunSummary, RunError> {
    let start = Instant::now();
    let dir = resolve_output(root, &cfg.output_dir);
    std::fs::create_dir_all(&dir).map_err(|e| RunError::at(Stage::Setup)(e.into()))?;
    let mut summary = RunSummary::new(cfg, dir.clone());
    let result = execute(cfg, &dir, &mut summary);
    summary.wall_time_s = start.elapsed().as_secs_f64();
    match &result {
        Ok(()) => {
            summary.status = "ok".into();
            summary.exit_code = exit_code::OK;
        }
        Err(e) => {
            summary.error = Some(e.source.to_string());
            summary.failed_stage = Some(e.stage);
            summary.exit_code = e.exit_code();
        }
    }
    let written = serde_json::to_string_pretty(&summary)
        .map_err(Error::from)
        .and_then(|s| Ok(std::fs::write(dir.join(artifacts::SUMMARY), s)?));
    result?;
    written.map_err(RunError::at(Stage::Output))?;
    Ok(summary)
}

fn execute(cfg: &ExperimentConfig, dir: &Path, summary: &mut RunSummary) -> Result<(), RunError> {
    let setup = RunError::at(Stage::Setup);
    let out = |e: Error| RunError::at(Stage::Output)(e);
    std::fs::write(
        dir.join(artifacts::CONFIG),
        serde_json::to_string_pretty(cfg).map_err(|e| setup(e.into()))?,
    )
    .map_err(|e| out(e.into()))?;
    cfg.validate().map_err(RunError::at(Stage::Setup))?;
    let (law, problem) = cfg.build().map_err(RunError::at(Stage::Setup))?;
    summary.n_test_functions = Some(problem.basis().len());
    if cfg.basis.dump {
        std::fs::write(dir.join(artifacts::BASIS), problem.basis().to_csv())
            .map_err(|e| out(e.into()))?;
    }

    let (y0, report) =
        initialize(&problem, &law, &cfg.init, cfg.seed).map_err(RunError::at(Stage::Init))?;
    std::fs::write(
        dir.join(artifacts::INIT_REPORT),
        serde_json::to_string_pretty(&report).map_err(|e| out(e.into()))?,
    )
    .map_err(|e| out(e.into()))?;
    summary.init = Some(report);

    let mut writer = RunLogWriter::create(&dir.join(artifacts::RUNLOG)).map_err(out)?;
    let mut write_err = None;
    let log = run_with_observer(&problem, &y0, &cfg.langevin, |rec, _| {
        if write_err.is_none() {
            if let Err(e) = writer.write(rec) {
                write_err = Some(e);
            }
        }
    });
    // keep the rows streamed so far even if the dynamics failed
    let flushed = writer.finish();
    let log = log.map_err(RunError::at(Stage::Langevin))?;
    if let Some(e) = write_err {
        return Err(out(e));
    }
    flushed.map_err(out)?;

    summary.best_cost = Some(log.best_cost);
    summary.best_iteration = Some(log.best_iteration);
    summary.final_cost = Some(problem.cost(&log.final_state));
    summary.accepted = Some(log.accepted);
    summary.rejected = Some(log.rejected);

    write_snapshot(
        &dir.join(artifacts::BEST_STATE),
        &problem,
        &log.best_state,
        cfg.seed,
        log.best_iteration,
    )
    .map_err(out)?;
    write_snapshot(
        &dir.join(artifacts::FINAL_STATE),
        &problem,
        &log.final_state,
        cfg.seed,
        log.accepted,
    )
    .map_err(out)?;
    if !log.snapshots.is_empty() {
        let snaps = dir.join(artifacts::SNAPSHOTS);
        std::fs::create_dir_all(&snaps).map_err(|e| out(e.into()))?;
        for (n, y) in &log.snapshots {
            write_snapshot(
                &snaps.join(format!("state_{n:08}.csv")),
                &problem,
                y,
                cfg.seed,
                *n,
            )
            .map_err(out)?;
        }
    }
    if cfg.output.pair_coupling {
        let mut f = BufWriter::new(
            File::create(dir.join(artifacts::PAIR_COUPLING)).map_err(|e| out(e.into()))?,
        );
        pair_coupling_csv(&problem, &log.best_state, &mut f).map_err(out)?;
    }
    if cfg.output.radial_coupling {
        let mut f = BufWriter::new(
            File::create(dir.join(artifacts::RADIAL_COUPLING)).map_err(|e| out(e.into()))?,
        );
        radial_coupling_csv(&problem, &log.best_state, &mut f).map_err(out)?;
    }

    if let MarginalLaw::Density1D(_) = law {
        let map = build_map(&law, problem.m()).map_err(out)?;
        let oracle_cost = map
            .optimal_cost(problem.cost_function().epsilon)
            .map_err(out)?;
        let csv = map.plan_support_csv(cfg.output.oracle_grid).map_err(out)?;
        std::fs::write(dir.join(artifacts::ORACLE_MAP), csv).map_err(|e| out(e.into()))?;
        let record = OracleRecord {
            law: cfg.law.label(),
            m: problem.m(),
            epsilon: problem.cost_function().epsilon,
            oracle_cost,
            quantiles: map.quantiles().to_vec(),
        };
        std::fs::write(
            dir.join(artifacts::ORACLE),
            serde_json::to_string_pretty(&record).map_err(|e| out(e.into()))?,
        )
        .map_err(|e| out(e.into()))?;
        summary.oracle_cost = Some(oracle_cost);
        summary.relative_gap = Some((oracle_cost - log.best_cost) / oracle_cost);
    }
    Ok(())
}

/// One row of the suite aggregate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub label: String,
    pub law: String,
    pub m: usize,
    pub n: Option<usize>,
    pub k: usize,
    pub beta0: f64,
    pub schedule: NoiseSchedule,
    pub best_cost: Option<f64>,
    pub oracle_gap: Option<f64>,
    pub wall_time_s: f64,
    pub status: String,
    pub exit_code: i32,
}

pub const SUITE_COLUMNS: &str =
    "label,law,M,N,K,beta0,schedule,best_cost,oracle_gap,wall_time_s,status";

impl SuiteRow {
    fn from_summary(
        cfg: &ExperimentConfig,
        s: Option<&RunSummary>,
        err: Option<&RunError>,
    ) -> Self {
        Self {
            label: cfg.label(),
            law: cfg.law.label(),
            m: cfg.problem.m,
            n: s.and_then(|s| s.n_test_functions).or(cfg.basis.n),
            k: cfg.problem.k,
            beta0: cfg.langevin.beta0,
            schedule: cfg.langevin.noise,
            best_cost: s.and_then(|s| s.best_cost),
            oracle_gap: s.and_then(|s| s.relative_gap),
            wall_time_s: s.map_or(0.0, |s| s.wall_time_s),
            status: match err {
                None => "ok".into(),
                Some(e) => format!("failed:{}", e.exit_code()),
            },
            exit_code: err.map_or(exit_code::OK, RunError::exit_code),
        }
    }

    pub fn csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.label,
            self.law,
            self.m,
            self.n.map_or(String::new(), |n| n.to_string()),
            self.k,
            self.beta0,
            match self.schedule {
                NoiseSchedule::Constant => "constant",
                NoiseSchedule::SqrtDecay => "sqrt_decay",
            },
            opt(self.best_cost),
            opt(self.oracle_gap),
            self.wall_time_s,
            self.status
        )
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub rows: Vec<SuiteRow>,
    pub aggregate: PathBuf,
}

impl SuiteReport {
    pub fn failures(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| r.exit_code != exit_code::OK)
            .count()
    }
}

/// Runs every config with at most `suite.workers` concurrent runs; failed
/// runs are recorded and do not stop the suite. Run directories resolve
/// under `root / suite.output_dir`.
pub fn run_suite(
    suite: &SuiteConfig,
    runs: &[ExperimentConfig],
    root: &Path,
) -> crate::Result<SuiteReport> {
    let base = resolve_output(root, &suite.output_dir);
    std::fs::create_dir_all(&base)?;
    let next = AtomicUsize::new(0);
    let rows: Mutex<Vec<Option<SuiteRow>>> = Mutex::new(vec![None; runs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..suite.workers.min(runs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cfg) = runs.get(i) else { break };
                let row = match run_experiment(cfg, &base) {
                    Ok(s) => SuiteRow::from_summary(cfg, Some(&s), None),
                    Err(e) => {
                        let dir = resolve_output(&base, &cfg.output_dir);
                        let s = std::fs::read_to_string(dir.join(artifacts::SUMMARY))
                            .ok()
                            .and_then(|t| serde_json::from_str::<RunSummary>(&t).ok());
                        SuiteRow::from_summary(cfg, s.as_ref(), Some(&e))
                    }
                };
                rows.lock().expect("no worker panicked")[i] = Some(row);
            });
        }
    });
    let rows: Vec<SuiteRow> = rows
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every run produced a row"))
        .collect();
    let mut text = schema_line(SUITE_SCHEMA);
    text += SUITE_COLUMNS;
    text.push('\n');
    for r in &rows {
        text += &r.csv_line();
        text.push('\n');
    }
    let aggregate = base.join("aggregate.csv");
    std::fs::write(&aggregate, text)?;
    Ok(SuiteReport { rows, aggregate })
}
