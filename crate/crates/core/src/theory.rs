//! Constructive versions of two structural facts about the particle problem:
//! support reduction preserving finitely many linear functionals, and a
//! polygonal path between feasible weighted particle systems along which the
//! cost is monotone.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::McotProblem;
use crate::projection::inf_norm;

/// Weighted particles `(w_k, X^k)` with explicit weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedAtomSet {
    pub m: usize,
    pub d: usize,
    /// Flat, `M * d` values per atom.
    pub positions: Vec<f64>,
    pub weights: Vec<f64>,
}

impl WeightedAtomSet {
    pub fn new(m: usize, d: usize, positions: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if m == 0 || d == 0 || positions.len() != weights.len() * m * d {
            return Err(Error::DimensionMismatch {
                expected: weights.len() * m * d,
                got: positions.len(),
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(Self {
            m,
            d,
            positions,
            weights,
        })
    }

    /// Atoms of a problem state, with weights taken from the problem's
    /// weight mode.
    pub fn from_state(problem: &McotProblem, y: &[f64]) -> Result<Self> {
        let np = problem.k() * problem.m() * problem.d();
        Self::new(
            problem.m(),
            problem.d(),
            y[..np].to_vec(),
            problem.weights(y),
        )
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn atom(&self, k: usize) -> &[f64] {
        let b = self.m * self.d;
        &self.positions[k * b..(k + 1) * b]
    }
}

/// Result of a support reduction: surviving atom indices with new weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub steps: usize,
}

/// Caratheodory elimination: finds nonnegative weights supported on at most
/// `rows` of the input atoms with `A w` unchanged, where column `k` of
/// `functionals` holds the functional values of atom `k`.
pub fn caratheodory_reduce(functionals: &DMatrix<f64>, weights: &[f64]) -> Result<Reduction> {
    let (rows, cols) = functionals.shape();
    if weights.len() != cols {
        return Err(Error::DimensionMismatch {
            expected: cols,
            got: weights.len(),
        });
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidParameter(
            "weights must be nonnegative".into(),
        ));
    }
    let target = functionals * DVector::from_column_slice(weights);
    // row scaling does not change null vectors but evens out magnitudes
    let row_scale: Vec<f64> = (0..rows)
        .map(|r| {
            let m = functionals
                .row(r)
                .iter()
                .fold(0.0f64, |a, v| a.max(v.abs()));
            if m > 0.0 {
                1.0 / m
            } else {
                1.0
            }
        })
        .collect();
    let mut w = weights.to_vec();
    let mut steps = 0;
    loop {
        let active: Vec<usize> = (0..cols).filter(|&k| w[k] > 0.0).collect();
        if active.len() <= rows {
            break;
        }
        let sel = &active[..rows + 1];
        let mut square = DMatrix::zeros(rows + 1, rows + 1);
        for (c, &k) in sel.iter().enumerate() {
            for r in 0..rows {
                square[(r, c)] = functionals[(r, k)] * row_scale[r];
            }
        }
        let svd = square.svd(false, true);
        let v_t = svd.v_t.as_ref().expect("requested V^T");
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty");
        let v: Vec<f64> = v_t.row(imin).iter().copied().collect();
        // smallest step in either direction that zeroes a weight
        let mut best: Option<(f64, usize, f64)> = None;
        for sign in [1.0, -1.0] {
            for (c, &k) in sel.iter().enumerate() {
                let dir = sign * v[c];
                if dir < 0.0 {
                    let s = w[k] / -dir;
                    let better = match best {
                        None => true,
                        Some((bs, bk, _)) => s < bs || (s == bs && k < bk),
                    };
                    if better {
                        best = Some((s, k, sign));
                    }
                }
            }
        }
        let (s, zeroed, sign) = best.ok_or_else(|| {
            Error::Infeasible("null vector has no entries; functional matrix is degenerate".into())
        })?;
        for (c, &k) in sel.iter().enumerate() {
            w[k] += s * sign * v[c];
            if w[k] < 0.0 {
                w[k] = 0.0;
            }
        }
        w[zeroed] = 0.0;
        steps += 1;
    }
    let indices: Vec<usize> = (0..cols).filter(|&k| w[k] > 0.0).collect();
    let mut kept: Vec<f64> = indices.iter().map(|&k| w[k]).collect();
    // one least-squares correction of accumulated round-off
    let sub = functionals.select_columns(&indices);
    let resid = &target - &sub * DVector::from_column_slice(&kept);
    if let Ok(delta) = sub.clone().svd(true, true).solve(&resid, 1e-14) {
        let polished: Vec<f64> = kept.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
        let new_resid = &target - &sub * DVector::from_column_slice(&polished);
        if polished.iter().all(|&x| x > 0.0) && new_resid.amax() < resid.amax() {
            kept = polished;
        }
    }
    Ok(Reduction {
        indices,
        weights: kept,
        steps,
    })
}

/// Functional matrix with rows `(phi_bar_1..phi_bar_N, 1, c, theta_bar)`.
pub fn functional_matrix(
    problem: &McotProblem,
    positions: &[f64],
    theta: impl Fn(f64) -> f64 + Sync,
) -> DMatrix<f64> {
    let n = problem.basis().len();
    let (m, d) = (problem.m(), problem.d());
    let block = m * d;
    let count = positions.len() / block;
    let averages = problem.averages_of(positions);
    let cost = problem.cost_function();
    let mut a = DMatrix::zeros(n + 3, count);
    for k in 0..count {
        let x = &positions[k * block..(k + 1) * block];
        for r in 0..n {
            a[(r, k)] = averages[k * n + r];
        }
        a[(n, k)] = 1.0;
        a[(n + 1, k)] = cost.particle_cost(x, m, d);
        a[(n + 2, k)] = x
            .chunks(d)
            .map(|p| theta(p.iter().map(|v| v * v).sum::<f64>().sqrt()))
            .sum::<f64>()
            / m as f64;
    }
    a
}

/// Reduces `atoms` to at most `N + 3` of its own atoms while preserving the
/// moments, the mass, the cost and the `theta` functional.
pub fn tchakaloff_reduce(
    problem: &McotProblem,
    atoms: &WeightedAtomSet,
    theta: impl Fn(f64) -> f64 + Sync,
) -> Result<(WeightedAtomSet, Reduction)> {
    if atoms.m != problem.m() || atoms.d != problem.d() {
        return Err(Error::InvalidParameter(
            "atom shape does not match the problem".into(),
        ));
    }
    let a = functional_matrix(problem, &atoms.positions, theta);
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("functionals"));
    }
    let red = caratheodory_reduce(&a, &atoms.weights)?;
    let mut positions = Vec::new();
    for &k in &red.indices {
        positions.extend_from_slice(atoms.atom(k));
    }
    let out = WeightedAtomSet {
        m: atoms.m,
        d: atoms.d,
        positions,
        weights: red.weights.clone(),
    };
    Ok((out, red))
}

/// One vertex of a polygonal path in `K`-slot weight/position space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathVertex {
    pub weights: Vec<f64>,
    pub positions: Vec<f64>,
    /// Phase that ends at this vertex.
    pub label: String,
}

/// Piecewise-linear path through `vertices` at parameters `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonalPath {
    pub t: Vec<f64>,
    pub vertices: Vec<PathVertex>,
}

impl PolygonalPath {
    fn from_vertices(vertices: Vec<PathVertex>) -> Self {
        let n = vertices.len();
        let t = (0..n)
            .map(|i| {
                if n == 1 {
                    0.0
                } else {
                    i as f64 / (n - 1) as f64
                }
            })
            .collect();
        Self { t, vertices }
    }

    /// Weights and positions at parameter `t` in [0, 1].
    pub fn eval(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.t.len();
        if n == 1 || t <= 0.0 {
            let v = &self.vertices[0];
            return (v.weights.clone(), v.positions.clone());
        }
        if t >= 1.0 {
            let v = &self.vertices[n - 1];
            return (v.weights.clone(), v.positions.clone());
        }
        let seg = self.t.partition_point(|&s| s <= t).clamp(1, n - 1) - 1;
        let (t0, t1) = (self.t[seg], self.t[seg + 1]);
        let s = (t - t0) / (t1 - t0);
        let (a, b) = (&self.vertices[seg], &self.vertices[seg + 1]);
        let lerp = |x: &[f64], y: &[f64]| -> Vec<f64> {
            x.iter().zip(y).map(|(p, q)| p + s * (q - p)).collect()
        };
        (
            lerp(&a.weights, &b.weights),
            lerp(&a.positions, &b.positions),
        )
    }
}

/// Cost and constraint residual of explicit weights and positions.
pub fn evaluate(problem: &McotProblem, weights: &[f64], positions: &[f64]) -> (f64, Vec<f64>) {
    let n = problem.basis().len();
    let (m, d) = (problem.m(), problem.d());
    let averages = problem.averages_of(positions);
    let cost = problem.cost_function();
    let mut gamma = vec![0.0; n + 1];
    let mut total = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        for r in 0..n {
            gamma[r] += w * averages[k * n + r];
        }
        if w != 0.0 {
            total += w * cost.particle_cost(&positions[k * m * d..(k + 1) * m * d], m, d);
        }
    }
    for r in 0..n {
        gamma[r] -= problem.basis().targets()[r];
    }
    gamma[n] = weights.iter().sum::<f64>() - 1.0;
    (total, gamma)
}

/// Builds a polygonal path from `start` to `end` (both with `K` atoms and
/// feasible) along which the cost is monotone.
///
/// Phases: reduce the start weights to a small support; park the
/// zero-weight slots at the end support; trade weights linearly (the only
/// phase where the cost changes); move atoms into their final slots through
/// empty slots; restore the end positions and weights.
pub fn monotone_path(
    problem: &McotProblem,
    start: &WeightedAtomSet,
    end: &WeightedAtomSet,
    theta: impl Fn(f64) -> f64 + Sync + Copy,
    feasibility_tol: f64,
) -> Result<PolygonalPath> {
    let k = start.len();
    let n = problem.basis().len();
    if end.len() != k
        || start.m != problem.m()
        || end.m != problem.m()
        || start.d != problem.d()
        || end.d != problem.d()
    {
        return Err(Error::InvalidParameter(
            "endpoints must share the problem shape".into(),
        ));
    }
    if k < 2 * n + 6 {
        return Err(Error::InvalidParameter(format!(
            "need K >= 2N + 6 = {}, got {k}",
            2 * n + 6
        )));
    }
    for (name, s) in [("start", start), ("end", end)] {
        let (_, gamma) = evaluate(problem, &s.weights, &s.positions);
        let r = inf_norm(&gamma);
        if !(r <= feasibility_tol) {
            return Err(Error::Infeasible(format!(
                "{name} endpoint has residual {r:e}"
            )));
        }
    }
    let block = problem.m() * problem.d();
    let (_, red0) = tchakaloff_reduce(problem, start, theta)?;
    let (_, red1) = tchakaloff_reduce(problem, end, theta)?;

    let scatter = |red: &Reduction, slots: &[usize]| {
        let mut w = vec![0.0; k];
        for (&s, &v) in slots.iter().zip(&red.weights) {
            w[s] = v;
        }
        w
    };
    let w0_tilde = scatter(&red0, &red0.indices);
    let w1_tilde = scatter(&red1, &red1.indices);

    let mut vertices = vec![PathVertex {
        weights: start.weights.clone(),
        positions: start.positions.clone(),
        label: "start".into(),
    }];
    let push = |v: &mut Vec<PathVertex>, w: &[f64], y: &[f64], label: &str| {
        v.push(PathVertex {
            weights: w.to_vec(),
            positions: y.to_vec(),
            label: label.into(),
        });
    };

    // phase 1: weights only
    push(&mut vertices, &w0_tilde, &start.positions, "reduce_start");

    // slots for the end support, disjoint from the start support
    let used: std::collections::BTreeSet<usize> = red0.indices.iter().copied().collect();
    let free: Vec<usize> = (0..k).filter(|s| !used.contains(s)).collect();
    let parked: Vec<usize> = free[..red1.indices.len()].to_vec();

    // phase 2: zero-weight slots take the end support positions
    let mut y = start.positions.clone();
    for (&slot, &src) in parked.iter().zip(&red1.indices) {
        y[slot * block..(slot + 1) * block].copy_from_slice(end.atom(src));
    }
    push(&mut vertices, &w0_tilde, &y, "park_end_support");

    // phase 3: linear weight trade, the only phase where the cost moves
    let mut w = scatter(&red1, &parked);
    push(&mut vertices, &w, &y, "trade_weights");

    // phase 4: shuttle atoms from parked slots into their own slots
    let mut location: Vec<usize> = parked.clone();
    let targets = &red1.indices;
    loop {
        let misplaced: Vec<usize> = (0..targets.len())
            .filter(|&a| location[a] != targets[a])
            .collect();
        if misplaced.is_empty() {
            break;
        }
        let direct = misplaced.iter().copied().find(|&a| w[targets[a]] == 0.0);
        let (atom, dest) = match direct {
            Some(a) => (a, targets[a]),
            None => {
                // every target is held by another misplaced atom: use a buffer
                let buffer = (0..k)
                    .find(|&s| w[s] == 0.0 && !targets.contains(&s))
                    .ok_or_else(|| Error::Infeasible("no empty slot available".into()))?;
                (misplaced[0], buffer)
            }
        };
        let src = location[atom];
        let pos = y[src * block..(src + 1) * block].to_vec();
        y[dest * block..(dest + 1) * block].copy_from_slice(&pos);
        push(&mut vertices, &w, &y, "shuttle_position");
        w[dest] = w[src];
        w[src] = 0.0;
        push(&mut vertices, &w, &y, "shuttle_weight");
        location[atom] = dest;
    }

    // phase 5: zero-weight slots move to the end positions
    push(
        &mut vertices,
        &w1_tilde,
        &end.positions,
        "restore_end_positions",
    );
    // phase 6: weights only
    push(&mut vertices, &end.weights, &end.positions, "end");
    Ok(PolygonalPath::from_vertices(vertices))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub t: f64,
    pub cost: f64,
    pub residual: f64,
}

/// Evaluates the path at `uniform` equally spaced parameters plus every
/// vertex, sorted by `t`.
pub fn sample_path(problem: &McotProblem, path: &PolygonalPath, uniform: usize) -> Vec<PathSample> {
    let mut ts: Vec<f64> = (0..uniform)
        .map(|i| {
            if uniform == 1 {
                0.0
            } else {
                i as f64 / (uniform - 1) as f64
            }
        })
        .chain(path.t.iter().copied())
        .collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts.par_iter()
        .map(|&t| {
            let (w, y) = path.eval(t);
            let (cost, gamma) = evaluate(problem, &w, &y);
            PathSample {
                t,
                cost,
                residual: inf_norm(&gamma),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathCheck {
    pub samples: usize,
    pub max_residual: f64,
    /// Largest step against the expected direction of the cost.
    pub max_monotonicity_violation: f64,
    pub start_cost: f64,
    pub end_cost: f64,
    pub passed: bool,
}

/// Checks feasibility and cost monotonicity of sampled path points.
pub fn verify_path(samples: &[PathSample], tol: f64) -> PathCheck {
    let start_cost = samples.first().map_or(f64::NAN, |s| s.cost);
    let end_cost = samples.last().map_or(f64::NAN, |s| s.cost);
    let decreasing = end_cost <= start_cost;
    let max_residual = samples.iter().map(|s| s.residual).fold(0.0, f64::max);
    let max_violation = samples
        .windows(2)
        .map(|p| {
            let step = p[1].cost - p[0].cost;
            if decreasing {
                step
            } else {
                -step
            }
        })
        .fold(0.0, f64::max);
    PathCheck {
        samples: samples.len(),
        max_residual,
        max_monotonicity_violation: max_violation,
        start_cost,
        end_cost,
        passed: max_residual <= tol && max_violation <= tol,
    }
}

pub fn path_samples_csv(samples: &[PathSample]) -> String {
    let mut s = crate::io::schema_line(crate::io::PATH_SCHEMA);
    s += "t,cost,residual_inf\n";
    for p in samples {
        s += &format!("{},{},{}\n", p.t, p.cost, p.residual);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn small_inputs_are_unchanged() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 1.0]);
        let red = caratheodory_reduce(&a, &[0.3, 0.7]).unwrap();
        assert_eq!(red.indices, vec![0, 1]);
        assert_eq!(red.weights, vec![0.3, 0.7]);
        assert_eq!(red.steps, 0);
    }

    #[test]
    fn four_functionals_on_the_line() {
        // phi(x) = x, mass, c(x) = x^2, theta = |x|
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut w: Vec<f64> = (0..10).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        let a = DMatrix::from_fn(4, 10, |r, c| match r {
            0 => xs[c],
            1 => 1.0,
            2 => xs[c] * xs[c],
            _ => xs[c].abs(),
        });
        let red = caratheodory_reduce(&a, &w).unwrap();
        assert!(red.indices.len() <= 4);
        assert!(red.steps >= 6);
        let sums = |idx: &[usize], ws: &[f64]| -> [f64; 4] {
            let mut s = [0.0; 4];
            for (&i, &v) in idx.iter().zip(ws) {
                s[0] += v * xs[i];
                s[1] += v;
                s[2] += v * xs[i] * xs[i];
                s[3] += v * xs[i].abs();
            }
            s
        };
        let all: Vec<usize> = (0..10).collect();
        let before = sums(&all, &w);
        let after = sums(&red.indices, &red.weights);
        for i in 0..4 {
            assert!((before[i] - after[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn path_interpolation() {
        let path = PolygonalPath::from_vertices(vec![
            PathVertex {
                weights: vec![1.0, 0.0],
                positions: vec![0.0, 0.0],
                label: "a".into(),
            },
            PathVertex {
                weights: vec![0.0, 1.0],
                positions: vec![2.0, 0.0],
                label: "b".into(),
            },
            PathVertex {
                weights: vec![0.0, 1.0],
                positions: vec![2.0, 4.0],
                label: "c".into(),
            },
        ]);
        assert_eq!(path.eval(0.25), (vec![0.5, 0.5], vec![1.0, 0.0]));
        assert_eq!(path.eval(0.75), (vec![0.0, 1.0], vec![2.0, 2.0]));
        assert_eq!(path.eval(1.0).1, vec![2.0, 4.0]);
    }
}
