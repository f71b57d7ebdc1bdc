use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mcot::config::{output_root, ExperimentConfig, SuiteConfig, OUTPUT_ROOT_ENV};
use mcot::experiment::{exit_code, run_experiment, run_suite, RunError, Stage};
use mcot::io::read_snapshot;
use mcot::oracle1d::build_map;
use mcot::theory::{monotone_path, path_samples_csv, sample_path, verify_path, WeightedAtomSet};
use mcot::{Error, MarginalLaw};

#[derive(Parser)]
#[command(
    name = "mcot",
    version,
    about = "Multi-marginal optimal transport with moment constraints"
)]
struct Cli {
    /// Override the seed of every run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory that relative output paths resolve against.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV)]
    output_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run { config: PathBuf },
    /// Run every experiment of a suite and write the aggregate table.
    Suite {
        config: PathBuf,
        /// Override the number of concurrent runs.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Exact optimal cost for a one-dimensional law.
    Oracle1d {
        /// Preset name, e.g. `mu2_1d`.
        law: String,
        m: usize,
        eps: f64,
        /// Also write the support of the optimal plan on this many grid points.
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long, default_value_t = 201)]
        grid: usize,
    },
    /// Build a cost-monotone path between two saved states.
    PathCheck {
        state_a: PathBuf,
        state_b: PathBuf,
        config: PathBuf,
        /// Uniformly spaced samples along the path.
        #[arg(long, default_value_t = 101)]
        samples: usize,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Write the sampled path here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

/// Message and process exit code.
struct Failure(String, i32);

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        Failure(e.to_string(), e.exit_code())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::InvalidParameter(_) | Error::InvalidLaw(_) => {
                exit_code::CONFIG
            }
            _ => exit_code::OTHER,
        };
        Failure(e.to_string(), code)
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<i32, Failure> {
    let root = cli.output_root.unwrap_or_else(output_root);
    match cli.command {
        Command::Run { config } => {
            let cfg = load(&config, cli.seed)?;
            let s = run_experiment(&cfg, &root)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&s).expect("summary serializes")
            );
            Ok(exit_code::OK)
        }
        Command::Suite { config, workers } => {
            let (mut suite, mut runs) = SuiteConfig::load(&config)?;
            if let Some(w) = workers {
                suite.workers = w.max(1);
            }
            if let Some(s) = cli.seed {
                runs.iter_mut().for_each(|r| r.set_seed(s));
            }
            let report = run_suite(&suite, &runs, &root).map_err(|e| RunError {
                stage: Stage::Output,
                source: e,
            })?;
            for row in &report.rows {
                eprintln!("{}: {}", row.label, row.status);
            }
            println!("{}", report.aggregate.display());
            Ok(if report.failures() == 0 {
                exit_code::OK
            } else {
                exit_code::OTHER
            })
        }
        Command::Oracle1d {
            law,
            m,
            eps,
            map,
            grid,
        } => {
            let law = MarginalLaw::preset(&law)?;
            let t = build_map(&law, m)?;
            println!("{}", t.optimal_cost(eps)?);
            if let Some(path) = map {
                std::fs::write(&path, t.plan_support_csv(grid)?).map_err(Error::from)?;
            }
            Ok(exit_code::OK)
        }
        Command::PathCheck {
            state_a,
            state_b,
            config,
            samples,
            tol,
            csv,
        } => {
            let cfg = load(&config, cli.seed)?;
            let (_, problem) = cfg.build()?;
            let atoms = |p: &Path| -> Result<WeightedAtomSet, Failure> {
                let s = read_snapshot(p)?;
                Ok(WeightedAtomSet::new(s.m, s.d, s.positions, s.weights)?)
            };
            let (a, b) = (atoms(&state_a)?, atoms(&state_b)?);
            let path = monotone_path(&problem, &a, &b, |r| r * r, tol)?;
            let points = sample_path(&problem, &path, samples);
            let check = verify_path(&points, tol);
            if let Some(out) = csv {
                std::fs::write(&out, path_samples_csv(&points)).map_err(Error::from)?;
            }
            println!(
                "{}",
                serde_json::to_string_pretty(&check).expect("check serializes")
            );
            Ok(if check.passed {
                exit_code::OK
            } else {
                exit_code::OTHER
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(Failure(msg, code)) => {
            eprintln!("mcot: {msg}");
            ExitCode::from(code as u8)
        }
    }
}
