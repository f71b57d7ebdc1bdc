//! Constrained overdamped Langevin iteration with adaptive time step,
//! constraint tolerance and noise level.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ConstrainedObjective;
use crate::projection::{inf_norm, project, solve_checked, ProjectionResult};

/// Underflow threshold for the time step and tolerance.
pub const STALL_LIMIT: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSchedule {
    Constant,
    /// `beta_n = beta_0 / sqrt(1 + n)`.
    SqrtDecay,
}

/// Noise level after accepting iteration `n`.
pub fn noise_schedule_step(beta: f64, n: usize, schedule: NoiseSchedule) -> f64 {
    match schedule {
        NoiseSchedule::Constant => beta,
        NoiseSchedule::SqrtDecay => beta * ((n as f64 + 1.0) / (n as f64 + 2.0)).sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LangevinParams {
    pub dt0: f64,
    pub beta0: f64,
    pub tau0: f64,
    pub i_const: usize,
    pub i_max: usize,
    pub n_max: usize,
    pub noise: NoiseSchedule,
    /// Derived from the run seed; not part of the serialized form.
    #[serde(skip)]
    pub seed: u64,
    pub projection_tol: f64,
    /// Use `beta sqrt(step)` in the time-step tests instead of the literal
    /// `beta sqrt(2 dt)`.
    pub consistent_noise: bool,
    /// Keep a copy of the state every this many accepted iterations (0: never).
    pub snapshot_every: usize,
    /// Flag iterations whose moment functional exceeds this bound.
    pub theta_bound: Option<f64>,
}

impl Default for LangevinParams {
    fn default() -> Self {
        Self {
            dt0: 1e-4,
            beta0: 0.0,
            tau0: 1e-4,
            i_const: 5,
            i_max: 50,
            n_max: 20_000,
            noise: NoiseSchedule::Constant,
            seed: 0,
            projection_tol: 1e-12,
            consistent_noise: false,
            snapshot_every: 0,
            theta_bound: None,
        }
    }
}

impl LangevinParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if !(self.dt0 > 0.0 && self.dt0.is_finite()) {
            return bad("dt0 must be positive");
        }
        if !(self.beta0 >= 0.0 && self.beta0.is_finite()) {
            return bad("beta0 must be nonnegative");
        }
        if !(self.tau0 > 0.0 && self.tau0.is_finite()) {
            return bad("tau0 must be positive");
        }
        if !(self.projection_tol > 0.0) {
            return bad("projection_tol must be positive");
        }
        if self.i_const == 0 || self.i_max == 0 {
            return bad("i_const and i_max must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Index of the state produced by this attempt.
    pub n: usize,
    pub cost: f64,
    pub residual: f64,
    pub theta: f64,
    pub dt: f64,
    pub beta: f64,
    pub tau: f64,
    pub newton_iterations: usize,
    pub accepted: bool,
    pub theta_violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<IterationRecord>,
    pub snapshots: Vec<(usize, Vec<f64>)>,
    pub best_cost: f64,
    pub best_iteration: usize,
    pub best_state: Vec<f64>,
    pub final_state: Vec<f64>,
    pub accepted: usize,
    pub rejected: usize,
}

impl RunLog {
    pub fn accepted_records(&self) -> impl Iterator<Item = &IterationRecord> {
        self.records.iter().filter(|r| r.accepted)
    }
}

fn proposal(y: &[f64], grad: &[f64], w: &[f64], step: f64, noise: f64, out: &mut [f64]) {
    for i in 0..y.len() {
        out[i] = y[i] - step * grad[i] + noise * w[i];
    }
}

/// Time-step adaptation. Returns the new `dt`; `lambda` is halved with
/// every halving of `dt`.
#[allow(clippy::too_many_arguments)]
pub fn adapt_time_step<P: ConstrainedObjective + ?Sized>(
    problem: &P,
    y: &[f64],
    grad: &[f64],
    lambda: &mut [f64],
    dt: f64,
    beta: f64,
    tau: f64,
    w: &[f64],
    consistent_noise: bool,
) -> Result<f64> {
    let mut trial = vec![0.0; y.len()];
    let mut gamma = vec![0.0; problem.n_constraints()];
    let noise_at = |step: f64, dt: f64| {
        if consistent_noise {
            beta * step.sqrt()
        } else {
            beta * (2.0 * dt).sqrt()
        }
    };
    proposal(y, grad, w, 2.0 * dt, noise_at(2.0 * dt, dt), &mut trial);
    problem.constraints(&trial, &mut gamma);
    if inf_norm(&gamma) <= tau {
        return Ok(2.0 * dt);
    }
    let mut dt = dt;
    loop {
        proposal(y, grad, w, dt, noise_at(dt, dt), &mut trial);
        problem.constraints(&trial, &mut gamma);
        // a trial that leaves the domain (NaN residual) also halves dt
        if inf_norm(&gamma) < tau {
            return Ok(dt);
        }
        dt *= 0.5;
        lambda.iter_mut().for_each(|l| *l *= 0.5);
        if dt < STALL_LIMIT {
            return Err(Error::Stall {
                what: "time step",
                value: dt,
            });
        }
    }
}

fn gram_is_singular(jac: &DMatrix<f64>) -> bool {
    let g = jac * jac.transpose();
    let zero = nalgebra::DVector::zeros(g.nrows());
    matches!(solve_checked(g, &zero), Err(Error::SingularGram { .. }))
}

/// Runs the constrained Langevin iteration from a feasible `y0` for
/// `n_max` accepted iterations.
pub fn run<P: ConstrainedObjective + ?Sized>(
    problem: &P,
    y0: &[f64],
    params: &LangevinParams,
) -> Result<RunLog> {
    run_with_observer(problem, y0, params, |_, _| {})
}

/// As [`run`], calling `observer` after every attempt with the record and
/// the current state.
pub fn run_with_observer<P: ConstrainedObjective + ?Sized>(
    problem: &P,
    y0: &[f64],
    params: &LangevinParams,
    mut observer: impl FnMut(&IterationRecord, &[f64]),
) -> Result<RunLog> {
    params.validate()?;
    let dim = problem.dim();
    let nc = problem.n_constraints();
    if y0.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: y0.len(),
        });
    }
    let mut y = y0.to_vec();
    let mut gamma = vec![0.0; nc];
    let mut jac = DMatrix::zeros(nc, dim);
    problem.constraints_and_jacobian(&y, &mut gamma, &mut jac);
    let r0 = inf_norm(&gamma);
    if !(r0 <= params.tau0) {
        return Err(Error::Infeasible(format!(
            "initial residual {r0:e} exceeds tau0 {:e}",
            params.tau0
        )));
    }
    let mut grad = vec![0.0; dim];
    problem.cost_gradient(&y, &mut grad)?;
    let mut cost = problem.cost(&y);
    if !cost.is_finite() {
        return Err(Error::NonFinite("cost"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut w = vec![0.0; dim];
    let mut draw = |w: &mut [f64], beta: f64| {
        if beta > 0.0 {
            w.iter_mut()
                .for_each(|v| *v = StandardNormal.sample(&mut rng));
        } else {
            w.iter_mut().for_each(|v| *v = 0.0);
        }
    };

    let mut lambda = vec![0.0; nc];
    let mut dt = params.dt0;
    let mut beta = params.beta0;
    let mut tau = params.tau0;
    let mut n = 0;
    let theta0 = problem.theta(&y);
    let mut log = RunLog {
        records: Vec::new(),
        snapshots: Vec::new(),
        best_cost: cost,
        best_iteration: 0,
        best_state: y.clone(),
        final_state: Vec::new(),
        accepted: 0,
        rejected: 0,
    };
    let record0 = IterationRecord {
        n: 0,
        cost,
        residual: r0,
        theta: theta0,
        dt,
        beta,
        tau,
        newton_iterations: 0,
        accepted: true,
        theta_violation: params.theta_bound.is_some_and(|a| theta0 > a),
    };
    observer(&record0, &y);
    log.records.push(record0);
    if params.snapshot_every > 0 {
        log.snapshots.push((0, y.clone()));
    }
    draw(&mut w, beta);
    let mut y_half = vec![0.0; dim];

    while n < params.n_max {
        dt = adapt_time_step(
            problem,
            &y,
            &grad,
            &mut lambda,
            dt,
            beta,
            tau,
            &w,
            params.consistent_noise,
        )?;
        proposal(&y, &grad, &w, dt, beta * dt.sqrt(), &mut y_half);
        let proj = match project(
            problem,
            &y_half,
            &jac,
            &lambda,
            params.i_max,
            params.projection_tol,
        ) {
            Ok(p) => Some(p),
            // a degenerate Gram matrix or an overflow at a far Newton iterate
            // is a failed attempt; a singular Gram matrix at the accepted
            // state means the manifold itself is rank deficient
            Err(Error::SingularGram { .. }) if !gram_is_singular(&jac) => None,
            Err(Error::NonFinite(_)) => None,
            Err(e) => return Err(e),
        };
        if let Some(proj) = proj.filter(ProjectionResult::succeeded) {
            let step_beta = beta;
            let step_tau = tau;
            y = proj.state;
            lambda = proj.lambda;
            jac = proj.jacobian;
            if proj.newton_iterations <= params.i_const {
                tau *= 2.0;
            }
            beta = noise_schedule_step(beta, n, params.noise);
            n += 1;
            cost = problem.cost(&y);
            if !cost.is_finite() {
                return Err(Error::NonFinite("cost"));
            }
            problem.cost_gradient(&y, &mut grad)?;
            let theta = problem.theta(&y);
            let rec = IterationRecord {
                n,
                cost,
                residual: proj.residual,
                theta,
                dt,
                beta: step_beta,
                tau: step_tau,
                newton_iterations: proj.newton_iterations,
                accepted: true,
                theta_violation: params.theta_bound.is_some_and(|a| theta > a),
            };
            observer(&rec, &y);
            log.records.push(rec);
            log.accepted += 1;
            if cost < log.best_cost {
                log.best_cost = cost;
                log.best_iteration = n;
                log.best_state.copy_from_slice(&y);
            }
            if params.snapshot_every > 0 && n % params.snapshot_every == 0 {
                log.snapshots.push((n, y.clone()));
            }
            draw(&mut w, beta);
        } else {
            let rec = IterationRecord {
                n: n + 1,
                cost: f64::NAN,
                residual: f64::NAN,
                theta: f64::NAN,
                dt,
                beta,
                tau,
                newton_iterations: 0,
                accepted: false,
                theta_violation: false,
            };
            observer(&rec, &y);
            log.records.push(rec);
            log.rejected += 1;
            tau *= 0.5;
            if tau < STALL_LIMIT {
                return Err(Error::Stall {
                    what: "constraint tolerance",
                    value: tau,
                });
            }
        }
    }
    log.final_state = y;
    Ok(log)
}
