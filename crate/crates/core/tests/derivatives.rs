mod common;

use common::*;
use mcot::basis::hyperbolic_cross_count;
use mcot::model::{ConstrainedObjective, CostFunction};
use proptest::prelude::*;

fn realizable_3d(pick: usize) -> usize {
    let sizes: Vec<usize> = (2..=6).map(|t| hyperbolic_cross_count(3, t) - 1).collect();
    sizes[pick % sizes.len()]
}

fn min_pair_distance(y: &[f64], k: usize, m: usize, d: usize) -> f64 {
    let mut best = f64::INFINITY;
    for kk in 0..k {
        let pt = |a: usize| &y[(kk * m + a) * d..(kk * m + a + 1) * d];
        for a in 0..m {
            for b in a + 1..m {
                let r = pt(a)
                    .iter()
                    .zip(pt(b))
                    .map(|(u, v)| (u - v) * (u - v))
                    .sum::<f64>()
                    .sqrt();
                best = best.min(r);
            }
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cost_gradient_matches_central_differences(
        seed in any::<u64>(),
        three_d in any::<bool>(),
        m_pick in 0usize..3,
        k in 2usize..6,
        mode in 0usize..3,
        eps_pick in 0usize..2,
    ) {
        let d = if three_d { 3 } else { 1 };
        let m = [2, 5, 10][m_pick];
        let n = if three_d { realizable_3d(seed as usize) } else { 6 };
        let eps = [0.0, 0.1][eps_pick];
        let (p, law) = problem(d, m, k, n, eps, mode_from(mode));
        let y = random_state(&p, &law, &mut rng(seed));
        // differences of 1/r lose accuracy like h^2 / r^3
        prop_assume!(eps > 0.0 || min_pair_distance(&y, k, m, d) > 0.05);
        let g = analytic_gradient(&p, &y);
        let fd = fd_gradient(|z| p.cost(z), &y, 1e-6);
        prop_assert!(rel_err(&g, &fd) < 1e-6, "rel err {}", rel_err(&g, &fd));
    }

    #[test]
    fn jacobian_matches_central_differences(
        seed in any::<u64>(),
        three_d in any::<bool>(),
        m_pick in 0usize..3,
        k in 2usize..6,
        mode in 0usize..3,
    ) {
        let d = if three_d { 3 } else { 1 };
        let m = [2, 5, 10][m_pick];
        let n = if three_d { realizable_3d(seed as usize) } else { 8 };
        let (p, law) = problem(d, m, k, n, 0.1, mode_from(mode));
        let y = random_state(&p, &law, &mut rng(seed));
        let j = analytic_jacobian(&p, &y);
        let fd = fd_jacobian(&p, &y, 1e-6);
        let err = rel_err(j.as_slice(), fd.as_slice());
        prop_assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn particle_gradient_matches_differences(
        seed in any::<u64>(),
        d in 1usize..4,
        m in 2usize..8,
    ) {
        let cost = CostFunction::new(0.05).unwrap();
        let mut r = rng(seed);
        let x: Vec<f64> = (0..m * d).map(|_| rand::Rng::random_range(&mut r, -2.0..2.0)).collect();
        let mut g = vec![0.0; m * d];
        cost.particle_gradient(&x, m, d, 1.0, &mut g).unwrap();
        let fd = fd_gradient(|z| cost.particle_cost(z, m, d), &x, 1e-6);
        prop_assert!(rel_err(&g, &fd) < 1e-6);
    }
}

#[test]
fn gradient_of_coincident_points_without_regularization_is_an_error() {
    let (p, _) = problem(1, 2, 2, 3, 0.0, mode_from(0));
    let y = vec![0.2, 0.2, -0.1, 0.4];
    assert!(p.cost(&y).is_infinite());
    let mut g = vec![0.0; 4];
    assert!(matches!(
        p.cost_gradient(&y, &mut g),
        Err(mcot::Error::CoincidentPoints)
    ));
}
