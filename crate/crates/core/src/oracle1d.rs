//! Exact symmetric multi-marginal optimal transport in 1D for repulsive
//! costs: the optimal plan is carried by the cyclic map
//! `T(x) = F^{-1}(F(x) + 1/M mod 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{CosineDensity, MarginalLaw};
use crate::model::CostFunction;
use crate::quadrature::integrate_adaptive;

/// Absolute tolerance on the optimal cost integral.
pub const COST_ABS_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct OptimalMap1D {
    law: CosineDensity,
    m: usize,
    quantiles: Vec<f64>,
}

/// Builds the optimal cyclic map for `m` marginals of a 1D density law.
pub fn build_map(law: &MarginalLaw, m: usize) -> Result<OptimalMap1D> {
    let MarginalLaw::Density1D(dens) = law else {
        return Err(Error::Unsupported(format!(
            "optimal 1D map for a {} law",
            law.kind_name()
        )));
    };
    if m < 2 {
        return Err(Error::InvalidParameter(format!("need M >= 2, got {m}")));
    }
    let quantiles = (0..=m)
        .map(|i| dens.quantile(i as f64 / m as f64))
        .collect::<Result<_>>()?;
    Ok(OptimalMap1D {
        law: dens.clone(),
        m,
        quantiles,
    })
}

impl OptimalMap1D {
    pub fn m(&self) -> usize {
        self.m
    }

    /// `d_0 < d_1 < ... < d_M` with `mu([d_i, d_{i+1}]) = 1/M`.
    pub fn quantiles(&self) -> &[f64] {
        &self.quantiles
    }

    pub fn support(&self) -> (f64, f64) {
        self.law.support()
    }

    fn quantile(&self, p: f64) -> f64 {
        self.law
            .quantile(p.clamp(0.0, 1.0))
            .expect("probability clamped to [0, 1]")
    }

    pub fn apply(&self, x: f64) -> f64 {
        let mf = self.m as f64;
        let mut p = self.law.cdf(x);
        // round-off near a quantile level must not flip the branch
        let level = (p * mf).round();
        if (p * mf - level).abs() < 1e-11 {
            p = level / mf;
        }
        let q = if p < (mf - 1.0) / mf {
            p + 1.0 / mf
        } else {
            p - (mf - 1.0) / mf
        };
        self.quantile(q)
    }

    /// `T^(i)(x)`.
    pub fn iterate(&self, x: f64, i: usize) -> f64 {
        (0..i).fold(x, |v, _| self.apply(v))
    }

    /// Orbit of the point with CDF value `u`, computed directly from
    /// quantiles so that errors do not accumulate along the orbit.
    fn orbit_from_level(&self, u: f64, out: &mut [f64]) {
        let mf = self.m as f64;
        for (i, o) in out.iter_mut().enumerate() {
            let mut p = u + i as f64 / mf;
            if p > 1.0 {
                p -= 1.0;
            }
            *o = self.quantile(p);
        }
    }

    /// `int c(x, T x, ..., T^(M-1) x) dmu(x)`.
    ///
    /// Substituting `x = F^{-1}(u)`, a shift of `u` by `1/M` permutes the
    /// orbit, so the integral is `M` times the integral over `[0, 1/M]`.
    pub fn optimal_cost(&self, epsilon: f64) -> Result<f64> {
        let cost = CostFunction::new(epsilon)?;
        let mf = self.m as f64;
        let mut orbit = vec![0.0; self.m];
        let v = integrate_adaptive(
            |u| {
                self.orbit_from_level(u, &mut orbit);
                cost.particle_cost(&orbit, self.m, 1)
            },
            0.0,
            1.0 / mf,
            COST_ABS_TOL / mf,
            10_000,
        )?;
        if !v.is_finite() {
            return Err(Error::NonFinite("oracle cost"));
        }
        Ok(mf * v)
    }

    /// Rows `(x, T x, ..., T^(M-1) x)` on a uniform grid over the support.
    pub fn plan_support(&self, grid: usize) -> Result<Vec<Vec<f64>>> {
        if grid < 2 {
            return Err(Error::InvalidParameter(
                "grid needs at least 2 points".into(),
            ));
        }
        let (a, b) = self.support();
        Ok((0..grid)
            .map(|j| {
                let x = a + (b - a) * j as f64 / (grid - 1) as f64;
                let mut row = Vec::with_capacity(self.m);
                row.push(x);
                for _ in 1..self.m {
                    let next = self.apply(*row.last().expect("non-empty"));
                    row.push(next);
                }
                row
            })
            .collect())
    }

    pub fn plan_support_csv(&self, grid: usize) -> Result<String> {
        let mut s = crate::io::schema_line(crate::io::ORACLE_MAP_SCHEMA);
        s.push('x');
        for i in 1..self.m {
            s += &format!(",T{i}");
        }
        s.push('\n');
        for row in self.plan_support(grid)? {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s += &cells.join(",");
            s.push('\n');
        }
        Ok(s)
    }
}

/// JSON record of an oracle evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub law: String,
    pub m: usize,
    pub epsilon: f64,
    pub oracle_cost: f64,
    pub quantiles: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(name: &str, m: usize) -> OptimalMap1D {
        build_map(&MarginalLaw::preset(name).unwrap(), m).unwrap()
    }

    #[test]
    fn uniform_two_marginals() {
        let t = map("mu1_1d", 2);
        assert!((t.apply(-0.5) - 0.5).abs() < 1e-14);
        assert!((t.apply(-1.0) - 0.0).abs() < 1e-14);
        assert!((t.apply(0.25) + 0.75).abs() < 1e-14);
        assert!((t.optimal_cost(0.1).unwrap() - 2.0 / 1.1).abs() < 1e-10);
        assert!((t.optimal_cost(0.0).unwrap() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn uniform_quantiles() {
        let t = map("mu1_1d", 5);
        for (i, &d) in t.quantiles().iter().enumerate() {
            assert!((d - (-1.0 + 2.0 * i as f64 / 5.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn uniform_three_marginals() {
        // spacings 2/3, 2/3, 4/3 for every orbit
        let t = map("mu1_1d", 3);
        let want = 2.0 * (1.5 + 1.5 + 0.75);
        assert!((t.optimal_cost(0.0).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn cyclic_on_grid() {
        for name in ["mu2_1d", "mu3_1d"] {
            for m in [2, 3, 5] {
                let t = map(name, m);
                for row in t.plan_support(101).unwrap() {
                    let back = t.apply(*row.last().unwrap());
                    if row[0].abs() == 1.0 {
                        // the two ends of the support are one point of the cycle
                        assert!(back.abs() == 1.0);
                    } else {
                        assert!((back - row[0]).abs() < 1e-8, "{name} M={m} x={}", row[0]);
                    }
                    assert!(row.iter().all(|v| (-1.0..=1.0).contains(v)));
                }
            }
        }
    }

    #[test]
    fn rejects_non_density_laws() {
        assert!(build_map(&MarginalLaw::preset("mu1_3d").unwrap(), 2).is_err());
        assert!(build_map(&MarginalLaw::preset("mu1_1d").unwrap(), 1).is_err());
    }
}
