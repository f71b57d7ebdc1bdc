mod common;

use common::*;
use mcot::oracle1d::build_map;
use mcot::quadrature::gauss_legendre;
use mcot::MarginalLaw;
use rand::Rng;

const LAWS: [&str; 3] = ["mu1_1d", "mu2_1d", "mu3_1d"];

/// Kolmogorov-Smirnov distance between a sample and a CDF.
fn ks(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn map_pushes_the_law_forward_to_itself() {
    for (i, name) in LAWS.iter().enumerate() {
        let law = MarginalLaw::preset(name).unwrap();
        for m in [2, 3, 5] {
            let t = build_map(&law, m).unwrap();
            let xs = law.sample(100_000, 10 + i as u64);
            let pushed: Vec<f64> = xs.iter().map(|&x| t.apply(x)).collect();
            let stat = ks(pushed, |x| law.cdf(x).unwrap());
            assert!(stat <= 0.01, "{name} M={m}: KS {stat}");
        }
    }
}

#[test]
fn m_fold_iterate_is_the_identity_on_samples() {
    for (i, name) in LAWS.iter().enumerate() {
        let law = MarginalLaw::preset(name).unwrap();
        for m in [2, 3, 5, 10] {
            let t = build_map(&law, m).unwrap();
            for x in law.sample(1000, 20 + i as u64) {
                let back = t.iterate(x, m);
                assert!((back - x).abs() <= 1e-8, "{name} M={m}: {x} -> {back}");
            }
        }
    }
}

/// `int rho(x) c(x, Tx, ..., T^(M-1) x) dx` by composite Gauss-Legendre in
/// the physical variable, with panels fine enough to straddle the kinks.
fn physical_quadrature(name: &str, m: usize, eps: f64) -> f64 {
    let law = MarginalLaw::preset(name).unwrap();
    let t = build_map(&law, m).unwrap();
    let (nodes, weights) = gauss_legendre(8);
    let panels = 4000;
    let h = 2.0 / panels as f64;
    let mut total = 0.0;
    let mut orbit = vec![0.0; m];
    for p in 0..panels {
        let a = -1.0 + p as f64 * h;
        for (z, w) in nodes.iter().zip(&weights) {
            let x = a + 0.5 * h * (z + 1.0);
            orbit[0] = x;
            for j in 1..m {
                orbit[j] = t.apply(orbit[j - 1]);
            }
            let mut c = 0.0;
            for u in 0..m {
                for v in 0..m {
                    if u != v {
                        c += 1.0 / (eps + (orbit[u] - orbit[v]).abs());
                    }
                }
            }
            total += 0.5 * h * w * law.density_1d(x).unwrap() * c;
        }
    }
    total
}

#[test]
fn optimal_cost_agrees_with_physical_quadrature() {
    for name in LAWS {
        for m in [2, 3, 5] {
            let law = MarginalLaw::preset(name).unwrap();
            let exact = build_map(&law, m).unwrap().optimal_cost(0.1).unwrap();
            let check = physical_quadrature(name, m, 0.1);
            assert!(
                (exact - check).abs() <= 1e-6 * exact,
                "{name} M={m}: {exact} vs {check}"
            );
        }
    }
}

#[test]
fn uniform_law_closed_forms() {
    let law = MarginalLaw::preset("mu1_1d").unwrap();
    assert!((build_map(&law, 2).unwrap().optimal_cost(0.1).unwrap() - 2.0 / 1.1).abs() < 1e-10);
    assert!((build_map(&law, 2).unwrap().optimal_cost(0.0).unwrap() - 2.0).abs() < 1e-10);
    // spacings 2/3, 2/3, 4/3 along every orbit
    let want = 2.0 * (1.5 + 1.5 + 0.75);
    assert!((build_map(&law, 3).unwrap().optimal_cost(0.0).unwrap() - want).abs() < 1e-9);
    let mut r = rng(1);
    let t = build_map(&law, 4).unwrap();
    for _ in 0..100 {
        let x: f64 = r.random_range(-0.99..0.99);
        let want = if x + 0.5 <= 1.0 { x + 0.5 } else { x - 1.5 };
        assert!((t.apply(x) - want).abs() < 1e-12);
    }
}

#[test]
fn plan_support_rows_stay_in_the_support() {
    let law = MarginalLaw::preset("mu1_1d").unwrap();
    let t = build_map(&law, 2).unwrap();
    let rows = t.plan_support(5).unwrap();
    assert_eq!(rows[1], vec![-0.5, 0.5]);
    for name in LAWS {
        let t = build_map(&MarginalLaw::preset(name).unwrap(), 5).unwrap();
        for row in t.plan_support(301).unwrap() {
            assert!(row.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}
