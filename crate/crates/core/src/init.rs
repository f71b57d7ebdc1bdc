//! Feasible starting points: sampling, optional NNLS compression onto a
//! sparse support, and a normalized gradient flow onto the constraint set.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::MarginalLaw;
use crate::model::{ConstrainedObjective, McotProblem, WeightMode};
use crate::nnls::nnls;
use crate::projection::inf_norm;

/// Flows with `||J^T Gamma||_2` below this are treated as stationary.
pub const ZERO_FLOW: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    /// Attempted steps, accepted or not.
    pub iterations: usize,
    pub accepted_steps: usize,
    pub initial_residual: f64,
    pub final_residual: f64,
    pub final_step: f64,
    pub converged: bool,
}

struct FlowPoint {
    y: Vec<f64>,
    gamma: Vec<f64>,
    jac: DMatrix<f64>,
}

impl FlowPoint {
    fn at<P: ConstrainedObjective + ?Sized>(problem: &P, y: Vec<f64>) -> Self {
        let mut gamma = vec![0.0; problem.n_constraints()];
        let mut jac = DMatrix::zeros(problem.n_constraints(), problem.dim());
        problem.constraints_and_jacobian(&y, &mut gamma, &mut jac);
        Self { y, gamma, jac }
    }

    fn norm2(&self) -> f64 {
        self.gamma.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `F(Y) = -||Gamma||^2 J^T Gamma / ||J^T Gamma||^2`, or `None` when
    /// the denominator vanishes.
    fn field(&self) -> Option<DVector<f64>> {
        let g = DVector::from_column_slice(&self.gamma);
        let jt_g = self.jac.tr_mul(&g);
        let denom = jt_g.norm_squared();
        if !(denom.sqrt() >= ZERO_FLOW) || !denom.is_finite() {
            return None;
        }
        Some(jt_g * (-g.norm_squared() / denom))
    }
}

fn offset(y: &[f64], h: f64, k: &DVector<f64>) -> Vec<f64> {
    y.iter().zip(k.iter()).map(|(a, b)| a + h * b).collect()
}

/// Integrates `dY/dt = F(Y)` with the Bogacki-Shampine third-order tableau
/// until `||Gamma||_inf <= tol`.
///
/// A step is accepted only if it decreases `||Gamma||_2`; otherwise the step
/// is halved. The step doubles after 10 consecutive accepted steps. The
/// returned state is the last accepted one, with `converged = false` if the
/// budget ran out.
pub fn constraint_flow<P: ConstrainedObjective + ?Sized>(
    problem: &P,
    y0: &[f64],
    tol: f64,
    max_iters: usize,
    h0: f64,
) -> Result<(Vec<f64>, FlowReport)> {
    if y0.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            got: y0.len(),
        });
    }
    if !(h0 > 0.0) {
        return Err(Error::InvalidParameter("h0 must be positive".into()));
    }
    let mut cur = FlowPoint::at(problem, y0.to_vec());
    let initial_residual = inf_norm(&cur.gamma);
    let mut report = FlowReport {
        iterations: 0,
        accepted_steps: 0,
        initial_residual,
        final_residual: initial_residual,
        final_step: h0,
        converged: initial_residual <= tol,
    };
    if report.converged {
        return Ok((cur.y, report));
    }
    if !initial_residual.is_finite() {
        return Err(Error::NonFinite("constraints"));
    }
    let mut h = h0;
    let mut streak = 0;
    let mut k1 = cur.field().ok_or(Error::ZeroFlowField {
        residual: initial_residual,
    })?;
    while report.iterations < max_iters {
        report.iterations += 1;
        let candidate = (|| {
            let p2 = FlowPoint::at(problem, offset(&cur.y, 0.5 * h, &k1));
            let k2 = p2.field()?;
            let p3 = FlowPoint::at(problem, offset(&cur.y, 0.75 * h, &k2));
            let k3 = p3.field()?;
            let step = &k1 * (2.0 / 9.0) + &k2 * (1.0 / 3.0) + &k3 * (4.0 / 9.0);
            Some(FlowPoint::at(problem, offset(&cur.y, h, &step)))
        })();
        match candidate {
            Some(next) if next.norm2() < cur.norm2() => {
                cur = next;
                report.accepted_steps += 1;
                report.final_residual = inf_norm(&cur.gamma);
                if report.final_residual <= tol {
                    report.converged = true;
                    break;
                }
                k1 = cur.field().ok_or(Error::ZeroFlowField {
                    residual: report.final_residual,
                })?;
                streak += 1;
                if streak >= 10 {
                    h *= 2.0;
                    streak = 0;
                }
            }
            _ => {
                h *= 0.5;
                streak = 0;
                if h < 1e-300 {
                    break;
                }
            }
        }
    }
    report.final_step = h;
    Ok((cur.y, report))
}

/// Sparse weighted support found by NNLS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subsample {
    /// Indices into the candidate particles.
    pub support: Vec<usize>,
    pub weights: Vec<f64>,
    pub residual: f64,
    pub kkt_residual: f64,
}

/// Nonnegative weights on candidate particles (flat positions, `M * d` per
/// particle) matching the target moments and unit mass.
pub fn nnls_subsample(problem: &McotProblem, candidates: &[f64]) -> Result<Subsample> {
    let block = problem.m() * problem.d();
    if candidates.is_empty() || candidates.len() % block != 0 {
        return Err(Error::InvalidParameter(format!(
            "candidate buffer of length {} is not a positive multiple of {block}",
            candidates.len()
        )));
    }
    let count = candidates.len() / block;
    let n = problem.basis().len();
    let averages = problem.averages_of(candidates);
    let phi = DMatrix::from_fn(
        n + 1,
        count,
        |r, c| {
            if r < n {
                averages[c * n + r]
            } else {
                1.0
            }
        },
    );
    let mut target = DVector::zeros(n + 1);
    target
        .rows_mut(0, n)
        .copy_from_slice(problem.basis().targets());
    target[n] = 1.0;
    let sol = nnls(&phi, &target)?;
    let (support, weights): (Vec<usize>, Vec<f64>) = sol
        .x
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(j, &w)| (j, w))
        .unzip();
    Ok(Subsample {
        support,
        weights,
        residual: sol.residual,
        kkt_residual: sol.kkt_residual,
    })
}

/// Copy counts summing to `k` proportional to `weights` by largest
/// remainders. With `at_least_one`, every support point gets a copy.
pub fn replication_counts(weights: &[f64], k: usize, at_least_one: bool) -> Result<Vec<usize>> {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || !(total > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidParameter(
            "weights must be nonnegative with positive sum".into(),
        ));
    }
    if at_least_one && weights.len() > k {
        return Err(Error::InvalidParameter(format!(
            "{} support points cannot be spread over {k} particles",
            weights.len()
        )));
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / total * k as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    if at_least_one {
        counts.iter_mut().for_each(|c| *c = (*c).max(1));
    }
    let mut assigned: usize = counts.iter().sum();
    // remove surplus from the most over-allocated entries
    while assigned > k {
        let j = (0..counts.len())
            .filter(|&j| counts[j] > 1)
            .max_by(|&a, &b| {
                (counts[a] as f64 - exact[a])
                    .total_cmp(&(counts[b] as f64 - exact[b]))
                    .then(b.cmp(&a))
            })
            .expect("surplus implies a count above one");
        counts[j] -= 1;
        assigned -= 1;
    }
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut i = 0;
    while assigned < k {
        counts[order[i % order.len()]] += 1;
        assigned += 1;
        i += 1;
    }
    Ok(counts)
}

/// Replicates weighted support particles into a `K`-particle state and adds
/// Gaussian jitter with per-coordinate scales `jitter` (length `d`).
pub fn expand_support(
    problem: &McotProblem,
    support_positions: &[f64],
    weights: &[f64],
    jitter: &[f64],
    seed: u64,
) -> Result<Vec<f64>> {
    let (k, m, d) = (problem.k(), problem.m(), problem.d());
    let block = m * d;
    if support_positions.len() != weights.len() * block {
        return Err(Error::DimensionMismatch {
            expected: weights.len() * block,
            got: support_positions.len(),
        });
    }
    if jitter.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: jitter.len(),
        });
    }
    let adaptive = problem.is_adaptive();
    let counts = replication_counts(weights, k, adaptive)?;
    let total: f64 = weights.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = Vec::with_capacity(problem.dim());
    let mut params = Vec::new();
    for (j, &c) in counts.iter().enumerate() {
        let src = &support_positions[j * block..(j + 1) * block];
        for _ in 0..c {
            for (idx, &v) in src.iter().enumerate() {
                let s = jitter[idx % d];
                let noise: f64 = if s > 0.0 {
                    StandardNormal.sample(&mut rng)
                } else {
                    0.0
                };
                y.push(v + s * noise);
            }
            if let WeightMode::Adaptive(f) = problem.mode() {
                let split = weights[j] / total / c as f64;
                params.push(f.inverse(split * k as f64)?);
            }
        }
    }
    y.extend(params);
    Ok(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    Rk3,
    NnlsThenRk3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitParams {
    pub method: InitMethod,
    /// Candidate count for NNLS; `None` means `100 K`.
    pub k_inf: Option<usize>,
    /// Jitter as a multiple of the per-coordinate sample standard deviation.
    pub jitter: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub h0: f64,
}

impl Default for InitParams {
    fn default() -> Self {
        Self {
            method: InitMethod::Rk3,
            k_inf: None,
            jitter: 1e-3,
            tol: 1e-12,
            max_iters: 100_000,
            h0: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitReport {
    pub method: InitMethod,
    pub flow: FlowReport,
    pub support_size: Option<usize>,
    pub nnls_residual: Option<f64>,
    pub nnls_kkt_residual: Option<f64>,
}

/// Sample, optionally compress, then flow to the constraint set.
///
/// Fails with `NotConverged` if the flow does not reach `params.tol`.
pub fn initialize(
    problem: &McotProblem,
    law: &MarginalLaw,
    params: &InitParams,
    seed: u64,
) -> Result<(Vec<f64>, InitReport)> {
    if law.dimension() != problem.d() {
        return Err(Error::DimensionMismatch {
            expected: problem.d(),
            got: law.dimension(),
        });
    }
    let (k, m, d) = (problem.k(), problem.m(), problem.d());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (y0, support_size, nnls_residual, nnls_kkt) = match params.method {
        InitMethod::Rk3 => {
            let mut y = law.sample_with(&mut rng, k * m);
            if let WeightMode::Adaptive(f) = problem.mode() {
                y.extend(std::iter::repeat_n(f.inverse(1.0)?, k));
            }
            (y, None, None, None)
        }
        InitMethod::NnlsThenRk3 => {
            let k_inf = params.k_inf.unwrap_or(100 * k);
            let candidates = law.sample_with(&mut rng, k_inf * m);
            let sub = nnls_subsample(problem, &candidates)?;
            let block = m * d;
            let mut support_positions = Vec::with_capacity(sub.support.len() * block);
            for &j in &sub.support {
                support_positions.extend_from_slice(&candidates[j * block..(j + 1) * block]);
            }
            let std = coordinate_std(&candidates, d);
            let jitter: Vec<f64> = std.iter().map(|s| s * params.jitter).collect();
            let y = expand_support(
                problem,
                &support_positions,
                &sub.weights,
                &jitter,
                seed.wrapping_add(1),
            )?;
            (
                y,
                Some(sub.support.len()),
                Some(sub.residual),
                Some(sub.kkt_residual),
            )
        }
    };
    let (y, flow) = constraint_flow(problem, &y0, params.tol, params.max_iters, params.h0)?;
    if !flow.converged {
        return Err(Error::NotConverged {
            iterations: flow.iterations,
            residual: flow.final_residual,
        });
    }
    Ok((
        y,
        InitReport {
            method: params.method,
            flow,
            support_size,
            nnls_residual,
            nnls_kkt_residual: nnls_kkt,
        },
    ))
}

fn coordinate_std(points: &[f64], d: usize) -> Vec<f64> {
    let n = (points.len() / d) as f64;
    (0..d)
        .map(|i| {
            let mean = points.iter().skip(i).step_by(d).sum::<f64>() / n;
            let var = points
                .iter()
                .skip(i)
                .step_by(d)
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>()
                / n;
            var.sqrt()
        })
        .collect()
}
