mod common;

use common::*;
use mcot::model::{ConstrainedObjective, McotProblem, WeightMode};
use rand::seq::SliceRandom;

/// Copies `y` with the blocks of every particle permuted by `perm[k]`.
fn permute_blocks(p: &McotProblem, y: &[f64], perms: &[Vec<usize>]) -> Vec<f64> {
    let (m, d) = (p.m(), p.d());
    let mut z = y.to_vec();
    for (k, perm) in perms.iter().enumerate() {
        for (dst, &src) in perm.iter().enumerate() {
            let from = (k * m + src) * d;
            let to = (k * m + dst) * d;
            z[to..to + d].copy_from_slice(&y[from..from + d]);
        }
    }
    z
}

#[test]
fn cost_and_constraints_ignore_block_order() {
    for (d, mode) in [(1, 0), (3, 1), (3, 2)] {
        let (p, law) = problem(d, 5, 4, if d == 1 { 8 } else { 12 }, 0.1, mode_from(mode));
        let mut r = rng(7 + d as u64);
        let y = random_state(&p, &law, &mut r);
        let (c0, g0) = (p.cost(&y), p.constraint_vec(&y));
        for _ in 0..50 {
            let perms: Vec<Vec<usize>> = (0..p.k())
                .map(|_| {
                    let mut v: Vec<usize> = (0..p.m()).collect();
                    v.shuffle(&mut r);
                    v
                })
                .collect();
            let z = permute_blocks(&p, &y, &perms);
            assert!((p.cost(&z) - c0).abs() <= 1e-12 * c0);
            let g = p.constraint_vec(&z);
            assert!(max_abs(g.iter().zip(&g0).map(|(a, b)| a - b)) < 1e-14);
        }
    }
}

#[test]
fn particle_relabeling_is_invisible() {
    let (p, law) = problem(3, 4, 6, 12, 0.001, mode_from(1));
    let mut r = rng(3);
    let y = random_state(&p, &law, &mut r);
    let block = p.m() * p.d();
    let npos = p.k() * block;
    for _ in 0..20 {
        let mut order: Vec<usize> = (0..p.k()).collect();
        order.shuffle(&mut r);
        let mut z = vec![0.0; y.len()];
        for (dst, &src) in order.iter().enumerate() {
            z[dst * block..(dst + 1) * block].copy_from_slice(&y[src * block..(src + 1) * block]);
            z[npos + dst] = y[npos + src];
        }
        assert!((p.cost(&z) - p.cost(&y)).abs() < 1e-12 * p.cost(&y));
        let (a, b) = (p.constraint_vec(&z), p.constraint_vec(&y));
        assert!(max_abs(a.iter().zip(&b).map(|(u, v)| u - v)) < 1e-14);
    }
}

#[test]
fn position_gradients_sum_to_zero_within_each_particle() {
    let (p, law) = problem(3, 10, 5, 6, 0.1, mode_from(0));
    let y = random_state(&p, &law, &mut rng(1));
    let g = analytic_gradient(&p, &y);
    for k in 0..p.k() {
        for i in 0..3 {
            let s: f64 = (0..p.m()).map(|m| g[(k * p.m() + m) * 3 + i]).sum();
            assert!(s.abs() < 1e-12, "particle {k} coord {i}: {s}");
        }
    }
}

#[test]
fn duplicated_particles_keep_the_cost() {
    let law = mcot::MarginalLaw::preset("mu1_1d").unwrap();
    let make = |k| {
        McotProblem::new(
            mcot::basis::TestBasis::legendre(&law, 2).unwrap(),
            mcot::model::CostFunction::new(0.1).unwrap(),
            k,
            2,
            WeightMode::Fixed,
        )
        .unwrap()
    };
    assert!((make(1).cost(&[0.0, 1.0]) - 2.0 / 1.1).abs() < 1e-15);
    assert!((make(2).cost(&[0.0, 1.0, 0.0, 1.0]) - 2.0 / 1.1).abs() < 1e-15);
}

#[test]
fn random_small_system_against_differences() {
    for mode in 0..3 {
        let (p, law) = problem(3, 4, 3, 6, 0.1, mode_from(mode));
        let y = random_state(&p, &law, &mut rng(40 + mode as u64));
        let g = analytic_gradient(&p, &y);
        let fd = fd_gradient(|z| p.cost(z), &y, 1e-6);
        assert!(rel_err(&g, &fd) < 1e-6);
    }
}

#[test]
fn theta_matches_naive_sum() {
    let (p, law) = problem(3, 5, 7, 6, 0.1, mode_from(2));
    let y = random_state(&p, &law, &mut rng(5));
    let w = p.weights(&y);
    let mut naive = 0.0;
    for k in 0..p.k() {
        for m in 0..p.m() {
            let x = &y[(k * p.m() + m) * 3..(k * p.m() + m + 1) * 3];
            naive += w[k] * x.iter().map(|v| v * v).sum::<f64>() / p.m() as f64;
        }
    }
    assert!((p.theta(&y) - naive).abs() < 1e-14 * naive.max(1.0));
    assert!((p.theta_functional(&y, |r| r * r) - naive).abs() < 1e-14 * naive.max(1.0));
}
