#![allow(dead_code)]

use mcot::basis::TestBasis;
use mcot::init::constraint_flow;
use mcot::model::{ConstrainedObjective, CostFunction, McotProblem, WeightFunction, WeightMode};
use mcot::theory::WeightedAtomSet;
use mcot::MarginalLaw;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn mode_from(index: usize) -> WeightMode {
    match index % 3 {
        0 => WeightMode::Fixed,
        1 => WeightMode::Adaptive(WeightFunction::Squared),
        _ => WeightMode::Adaptive(WeightFunction::Exponential),
    }
}

/// Problem on `mu2_1d` (Legendre) or `mu2_3d` (hyperbolic cross).
pub fn problem(
    d: usize,
    m: usize,
    k: usize,
    n: usize,
    epsilon: f64,
    mode: WeightMode,
) -> (McotProblem, MarginalLaw) {
    let (law, basis) = if d == 1 {
        let law = MarginalLaw::preset("mu2_1d").unwrap();
        let b = TestBasis::legendre(&law, n).unwrap();
        (law, b)
    } else {
        let law = MarginalLaw::preset("mu2_3d").unwrap();
        let b = TestBasis::hyperbolic_cross(&law, n, true).unwrap();
        (law, b)
    };
    let p = McotProblem::new(basis, CostFunction::new(epsilon).unwrap(), k, m, mode).unwrap();
    (p, law)
}

/// Sampled positions plus weight parameters bounded away from zero.
pub fn random_state(p: &McotProblem, law: &MarginalLaw, rng: &mut impl Rng) -> Vec<f64> {
    let mut y = law.sample_with(rng, p.k() * p.m());
    if p.is_adaptive() {
        for _ in 0..p.k() {
            y.push(rng.random_range(0.5..1.5));
        }
    }
    y
}

/// Central differences with step `h * max(1, |y_i|)`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, y: &[f64], h: f64) -> Vec<f64> {
    let mut z = y.to_vec();
    (0..y.len())
        .map(|i| {
            let s = h * y[i].abs().max(1.0);
            z[i] = y[i] + s;
            let fp = f(&z);
            z[i] = y[i] - s;
            let fm = f(&z);
            z[i] = y[i];
            (fp - fm) / (2.0 * s)
        })
        .collect()
}

pub fn fd_jacobian<P: ConstrainedObjective>(p: &P, y: &[f64], h: f64) -> DMatrix<f64> {
    let nc = p.n_constraints();
    let mut jac = DMatrix::zeros(nc, y.len());
    let mut z = y.to_vec();
    for i in 0..y.len() {
        let s = h * y[i].abs().max(1.0);
        z[i] = y[i] + s;
        let gp = p.constraint_vec(&z);
        z[i] = y[i] - s;
        let gm = p.constraint_vec(&z);
        z[i] = y[i];
        for r in 0..nc {
            jac[(r, i)] = (gp[r] - gm[r]) / (2.0 * s);
        }
    }
    jac
}

pub fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `max |a - b| / max |a|`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = max_abs(a.iter().zip(b).map(|(x, y)| x - y));
    diff / max_abs(a.iter().copied()).max(f64::MIN_POSITIVE)
}

pub fn analytic_jacobian<P: ConstrainedObjective>(p: &P, y: &[f64]) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(p.n_constraints(), p.dim());
    p.jacobian(y, &mut jac);
    jac
}

pub fn analytic_gradient<P: ConstrainedObjective>(p: &P, y: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; p.dim()];
    p.cost_gradient(y, &mut g).unwrap();
    g
}

pub fn theta(r: f64) -> f64 {
    r * r
}

/// `(phi_bar_1..N, mass, cost, theta_bar)` summed by explicit loops.
pub fn naive_functionals(p: &McotProblem, atoms: &WeightedAtomSet) -> Vec<f64> {
    let (m, d, n) = (p.m(), p.d(), p.basis().len());
    let eps = p.cost_function().epsilon;
    let mut out = vec![0.0; n + 3];
    for (k, &w) in atoms.weights.iter().enumerate() {
        let x = atoms.atom(k);
        let pt = |a: usize| &x[a * d..(a + 1) * d];
        for a in 0..m {
            let v = p.basis().values_at(pt(a));
            for j in 0..n {
                out[j] += w * v[j] / m as f64;
            }
            out[n + 2] += w * theta(pt(a).iter().map(|c| c * c).sum::<f64>().sqrt()) / m as f64;
            for b in 0..m {
                if a != b {
                    let r = pt(a)
                        .iter()
                        .zip(pt(b))
                        .map(|(u, v)| (u - v) * (u - v))
                        .sum::<f64>()
                        .sqrt();
                    out[n + 1] += w / (eps + r);
                }
            }
        }
        out[n] += w;
    }
    out
}

/// A random feasible adaptive-weight state, as an atom set.
pub fn feasible(
    p: &McotProblem,
    law: &MarginalLaw,
    r: &mut impl Rng,
) -> (Vec<f64>, WeightedAtomSet) {
    let y0 = random_state(p, law, r);
    let (y, rep) = constraint_flow(p, &y0, 1e-13, 50_000, 0.1).unwrap();
    assert!(rep.converged, "{rep:?}");
    let atoms = WeightedAtomSet::from_state(p, &y).unwrap();
    (y, atoms)
}

/// A feasible state and a nearby proposal.
pub fn projection_instance(
    seed: u64,
    d: usize,
    mode: usize,
    tol: f64,
) -> (McotProblem, Vec<f64>, Vec<f64>) {
    let (p, law) = problem(d, 3, 12, 6, 0.1, mode_from(mode));
    let mut r = rng(seed);
    let y0 = random_state(&p, &law, &mut r);
    let (y, rep) = constraint_flow(&p, &y0, tol, 20_000, 0.1).unwrap();
    assert!(rep.converged);
    // Langevin-like displacement rescaled to a size Newton can handle
    let g = analytic_gradient(&p, &y);
    let dir: Vec<f64> = g
        .iter()
        .map(|gv| {
            let noise: f64 = StandardNormal.sample(&mut r);
            -gv + noise
        })
        .collect();
    let size = r.random_range(1e-4..1e-2) / max_abs(dir.iter().copied());
    let y_half = y.iter().zip(&dir).map(|(v, dv)| v + size * dv).collect();
    (p, y, y_half)
}

/// Part of `v` orthogonal to the row space of `j`.
pub fn off_row_space(j: &DMatrix<f64>, v: &[f64]) -> DVector<f64> {
    let v = DVector::from_column_slice(v);
    let gram = j * j.transpose();
    let c = gram.lu().solve(&(j * &v)).unwrap();
    v - j.transpose() * c
}
