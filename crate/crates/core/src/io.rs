//! CSV and JSON artifacts. Every CSV starts with a `# schema: name/version`
//! line followed by the column header.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::langevin::IterationRecord;
use crate::model::{McotProblem, WeightFunction, WeightMode};

pub const RUNLOG_SCHEMA: &str = "mcot-runlog/1";
pub const SNAPSHOT_SCHEMA: &str = "mcot-snapshot/1";
pub const PAIR_SCHEMA: &str = "mcot-pair-coupling/1";
pub const RADIAL_SCHEMA: &str = "mcot-radial-coupling/1";
pub const ORACLE_MAP_SCHEMA: &str = "mcot-oracle-map/1";
pub const PATH_SCHEMA: &str = "mcot-path/1";
pub const SUITE_SCHEMA: &str = "mcot-suite/1";

pub const RUNLOG_COLUMNS: &str =
    "n,cost,residual_inf,theta,dt,beta,tau,newton_iterations,theta_violation";

pub fn schema_line(schema: &str) -> String {
    format!("# schema: {schema}\n")
}

/// Streams accepted iterations as CSV rows.
pub struct RunLogWriter<W: Write> {
    out: W,
}

impl RunLogWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        Self::new(BufWriter::new(File::create(path)?))
    }
}

impl<W: Write> RunLogWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        out.write_all(schema_line(RUNLOG_SCHEMA).as_bytes())?;
        writeln!(out, "{RUNLOG_COLUMNS}")?;
        Ok(Self { out })
    }

    /// Rejected attempts are skipped.
    pub fn write(&mut self, r: &IterationRecord) -> Result<()> {
        if r.accepted {
            writeln!(
                self.out,
                "{},{},{},{},{},{},{},{},{}",
                r.n,
                r.cost,
                r.residual,
                r.theta,
                r.dt,
                r.beta,
                r.tau,
                r.newton_iterations,
                u8::from(r.theta_violation)
            )?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub schema: String,
    pub k: usize,
    pub m: usize,
    pub d: usize,
    /// `fixed`, `squared` or `exponential`.
    pub mode: String,
    pub seed: u64,
    pub iteration: usize,
    /// Raw adaptive parameters `a_k`, empty in fixed mode.
    #[serde(default)]
    pub weight_params: Vec<f64>,
}

pub fn mode_name(mode: WeightMode) -> &'static str {
    match mode {
        WeightMode::Fixed => "fixed",
        WeightMode::Adaptive(WeightFunction::Squared) => "squared",
        WeightMode::Adaptive(WeightFunction::Exponential) => "exponential",
    }
}

/// Positions and weights of a state, as read back from a snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub k: usize,
    pub m: usize,
    pub d: usize,
    pub positions: Vec<f64>,
    pub weights: Vec<f64>,
    pub meta: Option<SnapshotMeta>,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn snapshot_csv(problem: &McotProblem, y: &[f64]) -> String {
    let (k, m, d) = (problem.k(), problem.m(), problem.d());
    let weights = problem.weights(y);
    let mut s = schema_line(SNAPSHOT_SCHEMA);
    s += "k,m,coord,value,weight\n";
    for kk in 0..k {
        for mm in 0..m {
            for i in 0..d {
                let v = y[(kk * m + mm) * d + i];
                s += &format!("{kk},{mm},{i},{v},{}\n", weights[kk]);
            }
        }
    }
    s
}

/// Writes `path` and its JSON sidecar.
pub fn write_snapshot(
    path: &Path,
    problem: &McotProblem,
    y: &[f64],
    seed: u64,
    iteration: usize,
) -> Result<()> {
    std::fs::write(path, snapshot_csv(problem, y))?;
    let npos = problem.k() * problem.m() * problem.d();
    let meta = SnapshotMeta {
        schema: SNAPSHOT_SCHEMA.into(),
        k: problem.k(),
        m: problem.m(),
        d: problem.d(),
        mode: mode_name(problem.mode()).into(),
        seed,
        iteration,
        weight_params: y[npos..].to_vec(),
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Reads a snapshot CSV; the sidecar is optional.
pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let bad = |line: usize, msg: &str| Error::Config(format!("{}:{line}: {msg}", path.display()));
    let reader = BufReader::new(File::open(path)?);
    let mut rows: Vec<(usize, usize, usize, f64, f64)> = Vec::new();
    let mut header_seen = false;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            if line != "k,m,coord,value,weight" {
                return Err(bad(i + 1, "expected header k,m,coord,value,weight"));
            }
            header_seen = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(i + 1, "expected 5 fields"));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad(i + 1, "bad index"));
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 1, "bad number"));
        rows.push((int(f[0])?, int(f[1])?, int(f[2])?, num(f[3])?, num(f[4])?));
    }
    if rows.is_empty() {
        return Err(bad(0, "no rows"));
    }
    let k = rows.iter().map(|r| r.0).max().unwrap_or(0) + 1;
    let m = rows.iter().map(|r| r.1).max().unwrap_or(0) + 1;
    let d = rows.iter().map(|r| r.2).max().unwrap_or(0) + 1;
    if rows.len() != k * m * d {
        return Err(bad(0, "rows do not form a full K x M x d grid"));
    }
    let mut positions = vec![f64::NAN; k * m * d];
    let mut weights = vec![f64::NAN; k];
    for &(kk, mm, i, v, w) in &rows {
        positions[(kk * m + mm) * d + i] = v;
        weights[kk] = w;
    }
    if positions.iter().any(|v| v.is_nan()) {
        return Err(bad(0, "duplicate rows"));
    }
    let side = sidecar_path(path);
    let meta = if side.exists() {
        Some(serde_json::from_str(&std::fs::read_to_string(side)?)?)
    } else {
        None
    };
    Ok(Snapshot {
        k,
        m,
        d,
        positions,
        weights,
        meta,
    })
}

/// Ordered pairs `(x^k_m, x^k_m')`, `m != m'`, each with mass
/// `w_k / (M (M - 1))`: atoms of the symmetrized two-point marginal.
pub fn pair_coupling_csv(problem: &McotProblem, y: &[f64], out: &mut impl Write) -> Result<()> {
    let (k, m, d) = (problem.k(), problem.m(), problem.d());
    let weights = problem.weights(y);
    out.write_all(schema_line(PAIR_SCHEMA).as_bytes())?;
    let mut header = String::from("k,m,m2,weight");
    for i in 0..d {
        header += &format!(",x{i}");
    }
    for i in 0..d {
        header += &format!(",y{i}");
    }
    writeln!(out, "{header}")?;
    let norm = (m * (m - 1)) as f64;
    for kk in 0..k {
        let w = weights[kk] / norm;
        for a in 0..m {
            for b in (0..m).filter(|&b| b != a) {
                write!(out, "{kk},{a},{b},{w}")?;
                for idx in [a, b] {
                    for i in 0..d {
                        write!(out, ",{}", y[(kk * m + idx) * d + i])?;
                    }
                }
                writeln!(out)?;
            }
        }
    }
    Ok(())
}

/// Ordered pairs of radii `(|x^k_m|, |x^k_m'|)`, weighted as in
/// [`pair_coupling_csv`].
pub fn radial_coupling_csv(problem: &McotProblem, y: &[f64], out: &mut impl Write) -> Result<()> {
    let (k, m, d) = (problem.k(), problem.m(), problem.d());
    let weights = problem.weights(y);
    out.write_all(schema_line(RADIAL_SCHEMA).as_bytes())?;
    writeln!(out, "k,m,m2,weight,r1,r2")?;
    let norm = (m * (m - 1)) as f64;
    let radius = |kk: usize, mm: usize| {
        let p = &y[(kk * m + mm) * d..(kk * m + mm + 1) * d];
        p.iter().map(|v| v * v).sum::<f64>().sqrt()
    };
    for kk in 0..k {
        let w = weights[kk] / norm;
        for a in 0..m {
            for b in (0..m).filter(|&b| b != a) {
                writeln!(out, "{kk},{a},{b},{w},{},{}", radius(kk, a), radius(kk, b))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::TestBasis;
    use crate::measures::MarginalLaw;
    use crate::model::CostFunction;

    fn problem(mode: WeightMode) -> McotProblem {
        let law = MarginalLaw::preset("mu1_1d").unwrap();
        McotProblem::new(
            TestBasis::legendre(&law, 3).unwrap(),
            CostFunction::new(0.1).unwrap(),
            3,
            2,
            mode,
        )
        .unwrap()
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = std::env::temp_dir().join(format!("mcot_io_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = problem(WeightMode::Adaptive(WeightFunction::Squared));
        let y = vec![-0.5, 0.5, 0.1, -0.1, 0.3, -0.7, 1.0, 0.5, 1.2];
        let path = dir.join("state.csv");
        write_snapshot(&path, &p, &y, 7, 12).unwrap();
        let snap = read_snapshot(&path).unwrap();
        assert_eq!((snap.k, snap.m, snap.d), (3, 2, 1));
        assert_eq!(snap.positions, &y[..6]);
        assert_eq!(snap.weights, p.weights(&y));
        let meta = snap.meta.unwrap();
        assert_eq!(meta.weight_params, &y[6..]);
        assert_eq!(
            (meta.seed, meta.iteration, meta.mode.as_str()),
            (7, 12, "squared")
        );
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn coupling_rows() {
        let p = problem(WeightMode::Fixed);
        let y = vec![-0.5, 0.5, 0.1, -0.1, 0.3, -0.7];
        let mut buf = Vec::new();
        pair_coupling_csv(&p, &y, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "k,m,m2,weight,x0,y0");
        assert_eq!(lines.len(), 2 + 3 * 2);
        let mass: f64 = lines[2..]
            .iter()
            .map(|l| l.split(',').nth(3).unwrap().parse::<f64>().unwrap())
            .sum();
        assert!((mass - 1.0).abs() < 1e-15);
        let mut buf = Vec::new();
        radial_coupling_csv(&p, &y, &mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .contains("0,0,1,0.16666666666666666,0.5,0.5"));
    }

    #[test]
    fn runlog_skips_rejected() {
        let rec = |n, accepted| IterationRecord {
            n,
            cost: 1.5,
            residual: 0.0,
            theta: 0.25,
            dt: 0.01,
            beta: 0.0,
            tau: 1e-4,
            newton_iterations: 2,
            accepted,
            theta_violation: false,
        };
        let mut w = RunLogWriter::new(Vec::new()).unwrap();
        w.write(&rec(0, true)).unwrap();
        w.write(&rec(1, false)).unwrap();
        w.write(&rec(1, true)).unwrap();
        let text = String::from_utf8(w.finish().unwrap()).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("# schema: mcot-runlog/1\n"));
    }
}
