//! Particle discretization: cost, constraints and their derivatives.
//!
//! The optimization state is a flat vector. Positions come first, laid out as
//! `((k * M) + m) * d + i`; in adaptive mode the `K` weight parameters follow.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::TestBasis;
use crate::error::{Error, Result};

/// A smooth objective with equality constraints, as consumed by the
/// projection, Langevin and initialization routines.
pub trait ConstrainedObjective: Sync {
    fn dim(&self) -> usize;
    fn n_constraints(&self) -> usize;
    /// May return `+inf` when the cost is singular at `y`.
    fn cost(&self, y: &[f64]) -> f64;
    fn cost_gradient(&self, y: &[f64], grad: &mut [f64]) -> Result<()>;
    fn constraints(&self, y: &[f64], out: &mut [f64]);
    /// `jac` is resized to `n_constraints x dim`.
    fn jacobian(&self, y: &[f64], jac: &mut DMatrix<f64>);

    fn constraints_and_jacobian(&self, y: &[f64], out: &mut [f64], jac: &mut DMatrix<f64>) {
        self.constraints(y, out);
        self.jacobian(y, jac);
    }

    /// Diagnostic moment functional logged alongside the cost.
    fn theta(&self, _y: &[f64]) -> f64 {
        0.0
    }

    fn constraint_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_constraints()];
        self.constraints(y, &mut out);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightFunction {
    /// `f(a) = a^2`
    Squared,
    /// `f(a) = exp(-a)`
    Exponential,
}

impl WeightFunction {
    pub fn value(self, a: f64) -> f64 {
        match self {
            Self::Squared => a * a,
            Self::Exponential => (-a).exp(),
        }
    }

    pub fn derivative(self, a: f64) -> f64 {
        match self {
            Self::Squared => 2.0 * a,
            Self::Exponential => -(-a).exp(),
        }
    }

    /// A preimage of `w`; the nonnegative root for `Squared`.
    pub fn inverse(self, w: f64) -> Result<f64> {
        match self {
            Self::Squared if w >= 0.0 && w.is_finite() => Ok(w.sqrt()),
            Self::Exponential if w > 0.0 && w.is_finite() => Ok(-w.ln()),
            _ => Err(Error::InvalidParameter(format!(
                "weight {w} is outside the range of {self:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Every particle has weight `1/K`.
    Fixed,
    /// `w_k = f(a_k) / K` with an extra mass constraint.
    Adaptive(WeightFunction),
}

/// Regularized Coulomb interaction `1/(eps + |x - y|)`, summed over ordered
/// pairs of distinct marginals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostFunction {
    pub epsilon: f64,
}

impl CostFunction {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be >= 0, got {epsilon}"
            )));
        }
        Ok(Self { epsilon })
    }

    /// `c(X)` for one particle `x` of `m` points in dimension `d`.
    pub fn particle_cost(&self, x: &[f64], m: usize, d: usize) -> f64 {
        let mut s = 0.0;
        for a in 0..m {
            for b in a + 1..m {
                let r = dist(&x[a * d..(a + 1) * d], &x[b * d..(b + 1) * d]);
                s += 1.0 / (self.epsilon + r);
            }
        }
        2.0 * s
    }

    /// Adds `scale * grad c(X)` into `out`.
    pub fn particle_gradient(
        &self,
        x: &[f64],
        m: usize,
        d: usize,
        scale: f64,
        out: &mut [f64],
    ) -> Result<()> {
        for a in 0..m {
            for b in a + 1..m {
                let xa = &x[a * d..(a + 1) * d];
                let xb = &x[b * d..(b + 1) * d];
                let r = dist(xa, xb);
                if r == 0.0 {
                    if self.epsilon == 0.0 {
                        return Err(Error::CoincidentPoints);
                    }
                    // cusp of |x|: take the zero subgradient
                    continue;
                }
                let e = self.epsilon + r;
                let coef = -2.0 * scale / (r * e * e);
                for i in 0..d {
                    let g = coef * (xa[i] - xb[i]);
                    out[a * d + i] += g;
                    out[b * d + i] -= g;
                }
            }
        }
        Ok(())
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Structured view of a state: `K` particles of `M` points in `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSystem {
    pub k: usize,
    pub m: usize,
    pub d: usize,
    pub positions: Vec<f64>,
    pub mode: WeightMode,
    /// Empty in fixed-weight mode.
    pub weight_params: Vec<f64>,
}

impl ParticleSystem {
    pub fn fixed(k: usize, m: usize, d: usize, positions: Vec<f64>) -> Result<Self> {
        Self::check_shape(k, m, d, &positions)?;
        Ok(Self {
            k,
            m,
            d,
            positions,
            mode: WeightMode::Fixed,
            weight_params: Vec::new(),
        })
    }

    pub fn adaptive(
        k: usize,
        m: usize,
        d: usize,
        positions: Vec<f64>,
        weight_params: Vec<f64>,
        f: WeightFunction,
    ) -> Result<Self> {
        Self::check_shape(k, m, d, &positions)?;
        if weight_params.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: weight_params.len(),
            });
        }
        Ok(Self {
            k,
            m,
            d,
            positions,
            mode: WeightMode::Adaptive(f),
            weight_params,
        })
    }

    fn check_shape(k: usize, m: usize, d: usize, positions: &[f64]) -> Result<()> {
        if k == 0 || m == 0 || d == 0 {
            return Err(Error::InvalidParameter(
                "K, M and d must be positive".into(),
            ));
        }
        if positions.len() != k * m * d {
            return Err(Error::DimensionMismatch {
                expected: k * m * d,
                got: positions.len(),
            });
        }
        Ok(())
    }

    /// Flat optimization state.
    pub fn to_state(&self) -> Vec<f64> {
        let mut y = self.positions.clone();
        y.extend_from_slice(&self.weight_params);
        y
    }

    pub fn from_state(k: usize, m: usize, d: usize, mode: WeightMode, y: &[f64]) -> Result<Self> {
        let np = k * m * d;
        let expected = np
            + if matches!(mode, WeightMode::Adaptive(_)) {
                k
            } else {
                0
            };
        if y.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: y.len(),
            });
        }
        Ok(Self {
            k,
            m,
            d,
            positions: y[..np].to_vec(),
            mode,
            weight_params: y[np..].to_vec(),
        })
    }

    pub fn particle(&self, k: usize) -> &[f64] {
        let s = self.m * self.d;
        &self.positions[k * s..(k + 1) * s]
    }

    pub fn weights(&self) -> Vec<f64> {
        let kf = self.k as f64;
        match self.mode {
            WeightMode::Fixed => vec![1.0 / kf; self.k],
            WeightMode::Adaptive(f) => self
                .weight_params
                .iter()
                .map(|&a| f.value(a) / kf)
                .collect(),
        }
    }
}

/// The particle problem: minimize `sum_k w_k c(X^k)` subject to the averaged
/// moment constraints (and unit mass in adaptive mode).
#[derive(Debug, Clone)]
pub struct McotProblem {
    basis: TestBasis,
    cost: CostFunction,
    k: usize,
    m: usize,
    mode: WeightMode,
}

impl McotProblem {
    pub fn new(
        basis: TestBasis,
        cost: CostFunction,
        k: usize,
        m: usize,
        mode: WeightMode,
    ) -> Result<Self> {
        if k == 0 || m == 0 {
            return Err(Error::InvalidParameter("K and M must be positive".into()));
        }
        Ok(Self {
            basis,
            cost,
            k,
            m,
            mode,
        })
    }

    pub fn basis(&self) -> &TestBasis {
        &self.basis
    }

    pub fn cost_function(&self) -> CostFunction {
        self.cost
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.basis.dim()
    }

    pub fn mode(&self) -> WeightMode {
        self.mode
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(self.mode, WeightMode::Adaptive(_))
    }

    fn n_positions(&self) -> usize {
        self.k * self.m * self.d()
    }

    fn block(&self) -> usize {
        self.m * self.d()
    }

    pub fn weight(&self, y: &[f64], k: usize) -> f64 {
        match self.mode {
            WeightMode::Fixed => 1.0 / self.k as f64,
            WeightMode::Adaptive(f) => f.value(y[self.n_positions() + k]) / self.k as f64,
        }
    }

    pub fn weights(&self, y: &[f64]) -> Vec<f64> {
        (0..self.k).map(|k| self.weight(y, k)).collect()
    }

    pub fn system(&self, y: &[f64]) -> Result<ParticleSystem> {
        ParticleSystem::from_state(self.k, self.m, self.d(), self.mode, y)
    }

    /// Checks that `sys` matches this problem's shape and returns its state.
    pub fn state_of(&self, sys: &ParticleSystem) -> Result<Vec<f64>> {
        if sys.k != self.k || sys.m != self.m || sys.d != self.d() || sys.mode != self.mode {
            return Err(Error::InvalidParameter(
                "particle system does not match the problem shape".into(),
            ));
        }
        Ok(sys.to_state())
    }

    /// Per-particle costs `c(X^k)`.
    pub fn particle_costs(&self, y: &[f64]) -> Vec<f64> {
        let (m, d) = (self.m, self.d());
        y[..self.n_positions()]
            .par_chunks(self.block())
            .map(|x| self.cost.particle_cost(x, m, d))
            .collect()
    }

    /// Averages `phi_bar(X^k)`, row-major `K x N`.
    pub fn particle_averages(&self, y: &[f64]) -> Vec<f64> {
        self.averages_of(&y[..self.n_positions()])
    }

    /// Averages `phi_bar` of any number of particles given as flat
    /// positions, row-major `count x N`.
    pub fn averages_of(&self, positions: &[f64]) -> Vec<f64> {
        let n = self.basis.len();
        let (m, d) = (self.m, self.d());
        let count = positions.len() / self.block();
        let mut out = vec![0.0; count * n];
        out.par_chunks_mut(n)
            .zip(positions.par_chunks(self.block()))
            .for_each_init(
                || (self.basis.workspace(), vec![0.0; n]),
                |(ws, vals), (avg, x)| {
                    for p in 0..m {
                        self.basis.eval(&x[p * d..(p + 1) * d], vals, ws);
                        for (a, v) in avg.iter_mut().zip(vals.iter()) {
                            *a += v;
                        }
                    }
                    let inv = 1.0 / m as f64;
                    avg.iter_mut().for_each(|a| *a *= inv);
                },
            );
        out
    }

    /// Like `cost` but reports coincident points under zero regularization.
    pub fn try_cost(&self, y: &[f64]) -> Result<f64> {
        let v = self.cost(y);
        if v.is_infinite() {
            return Err(Error::CoincidentPoints);
        }
        Ok(v)
    }

    /// `sum_k w_k (1/M) sum_m theta(|x^k_m|)`, a diagnostic only.
    pub fn theta_functional(&self, y: &[f64], theta: impl Fn(f64) -> f64) -> f64 {
        let d = self.d();
        let mut total = 0.0;
        for k in 0..self.k {
            let x = &y[k * self.block()..(k + 1) * self.block()];
            let s: f64 = x
                .chunks(d)
                .map(|p| theta(p.iter().map(|v| v * v).sum::<f64>().sqrt()))
                .sum();
            total += self.weight(y, k) * s / self.m as f64;
        }
        total
    }

    fn fill_jacobian(&self, y: &[f64], jac: &mut DMatrix<f64>, averages: Option<&[f64]>) {
        let rows = self.n_constraints();
        let n = self.basis.len();
        let (m, d) = (self.m, self.d());
        if jac.nrows() != rows || jac.ncols() != self.dim() {
            *jac = DMatrix::zeros(rows, self.dim());
        }
        let np = self.n_positions();
        let kf = self.k as f64;
        let weights = self.weights(y);
        let (pos_part, weight_part) = jac.as_mut_slice().split_at_mut(rows * np);
        pos_part
            .par_chunks_mut(rows * self.block())
            .enumerate()
            .for_each_init(
                || (self.basis.workspace(), vec![0.0; n], vec![0.0; n * d]),
                |(ws, vals, grads), (k, cols)| {
                    let x = &y[k * m * d..(k + 1) * m * d];
                    let scale = weights[k] / m as f64;
                    for p in 0..m {
                        self.basis
                            .eval_with_gradient(&x[p * d..(p + 1) * d], vals, grads, ws);
                        for i in 0..d {
                            let col = &mut cols[(p * d + i) * rows..(p * d + i + 1) * rows];
                            for r in 0..n {
                                col[r] = scale * grads[r * d + i];
                            }
                            if rows > n {
                                col[n] = 0.0;
                            }
                        }
                    }
                },
            );
        if let WeightMode::Adaptive(f) = self.mode {
            let owned;
            let avgs = match averages {
                Some(a) => a,
                None => {
                    owned = self.particle_averages(y);
                    &owned
                }
            };
            for k in 0..self.k {
                let df = f.derivative(y[np + k]) / kf;
                let col = &mut weight_part[k * rows..(k + 1) * rows];
                for r in 0..n {
                    col[r] = df * avgs[k * n + r];
                }
                col[n] = df;
            }
        }
    }

    fn fill_constraints(&self, y: &[f64], averages: &[f64], out: &mut [f64]) {
        let n = self.basis.len();
        let targets = self.basis.targets();
        out[..n].copy_from_slice(&vec![0.0; n]);
        for k in 0..self.k {
            let w = self.weight(y, k);
            for r in 0..n {
                out[r] += w * averages[k * n + r];
            }
        }
        for r in 0..n {
            out[r] -= targets[r];
        }
        if self.is_adaptive() {
            let mass: f64 = (0..self.k).map(|k| self.weight(y, k)).sum();
            out[n] = mass - 1.0;
        }
    }
}

impl ConstrainedObjective for McotProblem {
    fn dim(&self) -> usize {
        self.n_positions() + if self.is_adaptive() { self.k } else { 0 }
    }

    fn n_constraints(&self) -> usize {
        self.basis.len() + usize::from(self.is_adaptive())
    }

    fn cost(&self, y: &[f64]) -> f64 {
        let costs = self.particle_costs(y);
        costs
            .iter()
            .enumerate()
            .map(|(k, c)| self.weight(y, k) * c)
            .sum()
    }

    fn cost_gradient(&self, y: &[f64], grad: &mut [f64]) -> Result<()> {
        let (m, d) = (self.m, self.d());
        let np = self.n_positions();
        let weights = self.weights(y);
        let (gpos, gweights) = grad.split_at_mut(np);
        gpos.par_chunks_mut(self.block())
            .zip(y[..np].par_chunks(self.block()))
            .enumerate()
            .try_for_each(|(k, (g, x))| {
                g.iter_mut().for_each(|v| *v = 0.0);
                self.cost.particle_gradient(x, m, d, weights[k], g)
            })?;
        if let WeightMode::Adaptive(f) = self.mode {
            let costs = self.particle_costs(y);
            for k in 0..self.k {
                gweights[k] = f.derivative(y[np + k]) * costs[k] / self.k as f64;
            }
        }
        Ok(())
    }

    fn constraints(&self, y: &[f64], out: &mut [f64]) {
        let averages = self.particle_averages(y);
        self.fill_constraints(y, &averages, out);
    }

    fn jacobian(&self, y: &[f64], jac: &mut DMatrix<f64>) {
        self.fill_jacobian(y, jac, None);
    }

    fn theta(&self, y: &[f64]) -> f64 {
        self.theta_functional(y, |r| r * r)
    }

    fn constraints_and_jacobian(&self, y: &[f64], out: &mut [f64], jac: &mut DMatrix<f64>) {
        let averages = self.particle_averages(y);
        self.fill_constraints(y, &averages, out);
        self.fill_jacobian(y, jac, Some(&averages));
    }
}
