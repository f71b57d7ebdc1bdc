//! Declarative run and suite configuration (TOML, unknown keys rejected).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::basis::TestBasis;
use crate::error::{Error, Result};
use crate::init::InitParams;
use crate::langevin::LangevinParams;
use crate::measures::{
    CosineDensity, GaussianComponent, GaussianMixture, MarginalLaw, UniformBall,
};
use crate::model::{CostFunction, McotProblem, WeightFunction, WeightMode};

/// Default initial time step for 1D laws; 3D runs keep the library default.
pub const DEFAULT_DT0_1D: f64 = 1e-3;

/// Environment variable overriding the output root.
pub const OUTPUT_ROOT_ENV: &str = "MCOT_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawConfig {
    Preset {
        name: String,
    },
    /// `constant + sum amp * cos(freq * x)` on `support`.
    Density1d {
        constant: f64,
        #[serde(default)]
        terms: Vec<[f64; 2]>,
        support: [f64; 2],
    },
    GaussianMixture {
        components: Vec<GaussianComponent>,
    },
    UniformBall {
        center: Vec<f64>,
        radius: f64,
    },
}

impl LawConfig {
    pub fn build(&self) -> Result<MarginalLaw> {
        Ok(match self {
            Self::Preset { name } => MarginalLaw::preset(name)?,
            Self::Density1d {
                constant,
                terms,
                support,
            } => MarginalLaw::Density1D(CosineDensity::new(
                *constant,
                terms.iter().map(|t| (t[0], t[1])).collect(),
                (support[0], support[1]),
            )?),
            Self::GaussianMixture { components } => {
                MarginalLaw::GaussianMixture(GaussianMixture::new(components.clone())?)
            }
            Self::UniformBall { center, radius } => {
                MarginalLaw::UniformBall(UniformBall::new(center.clone(), *radius)?)
            }
        })
    }

    pub fn is_one_dimensional(&self) -> bool {
        match self {
            Self::Preset { name } => name.ends_with("_1d"),
            Self::Density1d { .. } => true,
            Self::GaussianMixture { components } => {
                components.first().is_some_and(|c| c.mean.len() == 1)
            }
            Self::UniformBall { center, .. } => center.len() == 1,
        }
    }

    /// Short label for tables.
    pub fn label(&self) -> String {
        match self {
            Self::Preset { name } => name.clone(),
            Self::Density1d { .. } => "density1d".into(),
            Self::GaussianMixture { .. } => "gaussian_mixture".into(),
            Self::UniformBall { .. } => "uniform_ball".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    Legendre,
    Hyperbolic,
    Meancov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    #[serde(rename = "type")]
    pub kind: BasisKind,
    /// Number of test functions; ignored by `meancov`.
    #[serde(default)]
    pub n: Option<usize>,
    /// Decaying `1/(l+1)^2` normalization for hyperbolic bases.
    #[serde(default = "yes")]
    pub scaled: bool,
    /// Write coefficients and targets to `basis.csv`.
    #[serde(default)]
    pub dump: bool,
}

fn yes() -> bool {
    true
}

impl BasisConfig {
    pub fn build(&self, law: &MarginalLaw) -> Result<TestBasis> {
        let need_n = || {
            self.n.ok_or_else(|| {
                Error::Config(format!("basis.n is required for {:?} bases", self.kind))
            })
        };
        match self.kind {
            BasisKind::Legendre => TestBasis::legendre(law, need_n()?),
            BasisKind::Hyperbolic => TestBasis::hyperbolic_cross(law, need_n()?, self.scaled),
            BasisKind::Meancov => TestBasis::mean_covariance(law),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModeConfig {
    #[default]
    Fixed,
    Squared,
    Exponential,
}

impl From<ModeConfig> for WeightMode {
    fn from(m: ModeConfig) -> Self {
        match m {
            ModeConfig::Fixed => WeightMode::Fixed,
            ModeConfig::Squared => WeightMode::Adaptive(WeightFunction::Squared),
            ModeConfig::Exponential => WeightMode::Adaptive(WeightFunction::Exponential),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub m: usize,
    pub k: usize,
    pub epsilon: f64,
    #[serde(default)]
    pub mode: ModeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Grid size for the 1D optimal map export.
    pub oracle_grid: usize,
    pub pair_coupling: bool,
    pub radial_coupling: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            oracle_grid: 201,
            pair_coupling: true,
            radial_coupling: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub seed: u64,
    /// Relative paths resolve against the output root.
    pub output_dir: PathBuf,
    pub law: LawConfig,
    pub basis: BasisConfig,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub init: InitParams,
    #[serde(default)]
    pub langevin: LangevinParams,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.langevin.seed = langevin_seed(cfg.seed);
        let raw: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let dt0_given = raw
            .get("langevin")
            .and_then(|l| l.as_table())
            .is_some_and(|l| l.contains_key("dt0"));
        if !dt0_given && cfg.law.is_one_dimensional() {
            cfg.langevin.dt0 = DEFAULT_DT0_1D;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.langevin.seed = langevin_seed(seed);
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let p = &self.problem;
        if p.m < 2 {
            return bad(format!("problem.m must be at least 2, got {}", p.m));
        }
        if p.k == 0 {
            return bad("problem.k must be positive".into());
        }
        if !(p.epsilon >= 0.0 && p.epsilon.is_finite()) {
            return bad(format!(
                "problem.epsilon must be a nonnegative number, got {}",
                p.epsilon
            ));
        }
        if self.basis.kind != BasisKind::Meancov && self.basis.n.is_none_or(|n| n == 0) {
            return bad("basis.n must be a positive integer".into());
        }
        if self.output.oracle_grid < 2 {
            return bad("output.oracle_grid must be at least 2".into());
        }
        if !(self.init.tol > 0.0 && self.init.h0 > 0.0 && self.init.jitter >= 0.0) {
            return bad("init.tol and init.h0 must be positive, init.jitter nonnegative".into());
        }
        self.langevin
            .validate()
            .map_err(|e| Error::Config(format!("langevin: {e}")))
    }

    /// Builds the law and the problem; fails with `Error::Config` on
    /// inconsistent choices (e.g. a Legendre basis on a 3D law).
    pub fn build(&self) -> Result<(MarginalLaw, McotProblem)> {
        let law = self
            .law
            .build()
            .map_err(|e| Error::Config(format!("law: {e}")))?;
        let basis = self
            .basis
            .build(&law)
            .map_err(|e| Error::Config(format!("basis: {e}")))?;
        let problem = McotProblem::new(
            basis,
            CostFunction::new(self.problem.epsilon)?,
            self.problem.k,
            self.problem.m,
            self.problem.mode.into(),
        )
        .map_err(|e| Error::Config(format!("problem: {e}")))?;
        Ok((law, problem))
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            format!(
                "{}_M{}_N{}_K{}",
                self.law.label(),
                self.problem.m,
                self.basis.n.map_or("mc".to_string(), |n| n.to_string()),
                self.problem.k
            )
        })
    }
}

/// The Langevin noise stream is decoupled from the initial sample.
pub fn langevin_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

/// `$MCOT_OUTPUT_ROOT`, or the current directory.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

pub fn resolve_output(root: &Path, dir: &Path) -> PathBuf {
    if dir.is_absolute() {
        dir.to_path_buf()
    } else {
        root.join(dir)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    /// Directory of the aggregate table, relative to the output root.
    pub output_dir: PathBuf,
    #[serde(default = "one")]
    pub workers: usize,
    /// Run configs, relative to the suite file.
    #[serde(default)]
    pub configs: Vec<PathBuf>,
    /// Inline run configs.
    #[serde(default)]
    pub run: Vec<toml::Table>,
}

fn one() -> usize {
    1
}

impl SuiteConfig {
    pub fn load(path: &Path) -> Result<(Self, Vec<ExperimentConfig>)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let suite: Self =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if suite.workers == 0 {
            return Err(Error::Config("workers must be positive".into()));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let mut runs = Vec::new();
        for c in &suite.configs {
            runs.push(ExperimentConfig::load(&base.join(c))?);
        }
        for (i, table) in suite.run.iter().enumerate() {
            let text = toml::to_string(table).map_err(|e| Error::Config(e.to_string()))?;
            runs.push(
                ExperimentConfig::from_toml_str(&text)
                    .map_err(|e| Error::Config(format!("{} run[{i}]: {e}", path.display())))?,
            );
        }
        if runs.is_empty() {
            return Err(Error::Config(format!(
                "{}: suite has no runs",
                path.display()
            )));
        }
        Ok((suite, runs))
    }
}
