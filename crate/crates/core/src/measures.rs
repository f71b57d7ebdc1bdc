//! Marginal laws: 1D cosine-plus-constant densities, Gaussian mixtures and
//! uniform balls, with closed-form monomial moments and seeded sampling.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussRule;

/// Order of the Gauss-Legendre rule used for the oscillatory part of 1D
/// density moments.
const DENSITY_QUADRATURE_ORDER: usize = 128;

/// `constant + sum_j amplitude_j cos(frequency_j x)` on `[a, b]`, zero outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineDensity {
    constant: f64,
    terms: Vec<(f64, f64)>,
    support: (f64, f64),
}

impl CosineDensity {
    pub fn new(constant: f64, terms: Vec<(f64, f64)>, support: (f64, f64)) -> Result<Self> {
        let (a, b) = support;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::InvalidLaw(format!("bad support [{a}, {b}]")));
        }
        if terms.iter().any(|&(_, w)| w == 0.0 || !w.is_finite()) {
            return Err(Error::InvalidLaw(
                "cosine frequencies must be finite and non-zero".into(),
            ));
        }
        let law = Self {
            constant,
            terms,
            support,
        };
        let rule = GaussRule::new(DENSITY_QUADRATURE_ORDER);
        let mass = rule.integrate(a, b, |x| law.density(x));
        if (mass - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidLaw(format!(
                "density integrates to {mass}, not 1"
            )));
        }
        let grid = 20_000;
        for i in 0..=grid {
            let x = a + (b - a) * i as f64 / grid as f64;
            if law.density(x) < 0.0 {
                return Err(Error::InvalidLaw(format!("density negative at x = {x}")));
            }
        }
        Ok(law)
    }

    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    pub fn density(&self, x: f64) -> f64 {
        let (a, b) = self.support;
        if x < a || x > b {
            return 0.0;
        }
        self.constant
            + self
                .terms
                .iter()
                .map(|&(amp, w)| amp * (w * x).cos())
                .sum::<f64>()
    }

    /// Analytic antiderivative of the density, anchored at the left end.
    pub fn cdf(&self, x: f64) -> f64 {
        let (a, b) = self.support;
        if x <= a {
            return 0.0;
        }
        if x >= b {
            return 1.0;
        }
        let mut v = self.constant * (x - a);
        for &(amp, w) in &self.terms {
            v += amp / w * ((w * x).sin() - (w * a).sin());
        }
        v.clamp(0.0, 1.0)
    }

    /// Inverse CDF: bisection down to a bracket of width 1e-8, then Newton
    /// polishing kept inside the bracket.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) || p.is_nan() {
            return Err(Error::InvalidParameter(format!(
                "probability {p} outside [0, 1]"
            )));
        }
        let (a, b) = self.support;
        if p == 0.0 {
            return Ok(a);
        }
        if p == 1.0 {
            return Ok(b);
        }
        let (mut lo, mut hi) = (a, b);
        // leftmost root: keep the invariant F(lo) < p <= F(hi)
        while hi - lo > 1e-8 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..50 {
            let r = self.cdf(x) - p;
            if r.abs() <= 1e-15 {
                break;
            }
            let dens = self.density(x);
            if dens <= 0.0 {
                break;
            }
            let next = (x - r / dens).clamp(lo, hi);
            if next == x {
                break;
            }
            x = next;
        }
        Ok(x)
    }

    fn monomial_moment(&self, n: u32) -> f64 {
        let (a, b) = self.support;
        let np1 = n as f64 + 1.0;
        let poly_part = self.constant * (b.powf(np1) - a.powf(np1)) / np1;
        if self.terms.is_empty() {
            return poly_part;
        }
        let rule = GaussRule::new(DENSITY_QUADRATURE_ORDER);
        let osc = rule.integrate(a, b, |x| {
            x.powi(n as i32)
                * self
                    .terms
                    .iter()
                    .map(|&(amp, w)| amp * (w * x).cos())
                    .sum::<f64>()
        });
        poly_part + osc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Row-major `d x d`.
    pub covariance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<GaussianComponent>,
    /// Lower Cholesky factors, row-major.
    factors: Vec<Vec<f64>>,
}

impl GaussianMixture {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidLaw("mixture has no components".into()))?;
        let dim = first.mean.len();
        if dim == 0 {
            return Err(Error::InvalidLaw("zero-dimensional mixture".into()));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidLaw(format!("mixture weights sum to {total}")));
        }
        let mut factors = Vec::with_capacity(components.len());
        for (i, c) in components.iter().enumerate() {
            if c.weight < 0.0 {
                return Err(Error::InvalidLaw(format!(
                    "component {i} has negative weight"
                )));
            }
            if c.mean.len() != dim || c.covariance.len() != dim * dim {
                return Err(Error::InvalidLaw(format!(
                    "component {i} has inconsistent shape"
                )));
            }
            let cov = DMatrix::from_row_slice(dim, dim, &c.covariance);
            for r in 0..dim {
                for s in 0..r {
                    if (cov[(r, s)] - cov[(s, r)]).abs() > 1e-12 * (1.0 + cov[(r, s)].abs()) {
                        return Err(Error::InvalidLaw(format!(
                            "covariance {i} is not symmetric"
                        )));
                    }
                }
            }
            let eig = cov.clone().symmetric_eigenvalues();
            if eig.iter().any(|&l| l <= 0.0) {
                return Err(Error::InvalidLaw(format!(
                    "covariance {i} is not positive definite"
                )));
            }
            let chol = cov
                .cholesky()
                .ok_or_else(|| Error::InvalidLaw(format!("covariance {i} Cholesky failed")))?;
            let l = chol.l();
            let mut flat = vec![0.0; dim * dim];
            for r in 0..dim {
                for s in 0..=r {
                    flat[r * dim + s] = l[(r, s)];
                }
            }
            factors.push(flat);
        }
        Ok(Self {
            dim,
            components,
            factors,
        })
    }

    pub fn standard_normal(dim: usize) -> Self {
        let mut cov = vec![0.0; dim * dim];
        for i in 0..dim {
            cov[i * dim + i] = 1.0;
        }
        Self::new(vec![GaussianComponent {
            weight: 1.0,
            mean: vec![0.0; dim],
            covariance: cov,
        }])
        .expect("identity covariance is valid")
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    fn sample_into(&self, rng: &mut impl Rng, out: &mut [f64]) {
        let d = self.dim;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut idx = self.components.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                idx = i;
                break;
            }
        }
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let c = &self.components[idx];
        let l = &self.factors[idx];
        for r in 0..d {
            let mut v = c.mean[r];
            for s in 0..=r {
                v += l[r * d + s] * z[s];
            }
            out[r] = v;
        }
    }
}

/// Memoized `E[x^alpha]` for a single Gaussian via
/// `E[x_i x^a] = m_i E[x^a] + sum_j C_ij a_j E[x^(a - e_j)]`.
struct GaussianMoments<'a> {
    comp: &'a GaussianComponent,
    dim: usize,
    memo: HashMap<Vec<u32>, f64>,
}

impl<'a> GaussianMoments<'a> {
    fn new(comp: &'a GaussianComponent) -> Self {
        Self {
            comp,
            dim: comp.mean.len(),
            memo: HashMap::new(),
        }
    }

    fn get(&mut self, alpha: &[u32]) -> f64 {
        let Some(i) = alpha.iter().position(|&a| a > 0) else {
            return 1.0;
        };
        if let Some(&v) = self.memo.get(alpha) {
            return v;
        }
        let mut beta = alpha.to_vec();
        beta[i] -= 1;
        let mut v = self.comp.mean[i] * self.get(&beta);
        for j in 0..self.dim {
            if beta[j] == 0 {
                continue;
            }
            let c = self.comp.covariance[i * self.dim + j];
            if c == 0.0 {
                continue;
            }
            let mut gamma = beta.clone();
            gamma[j] -= 1;
            v += c * beta[j] as f64 * self.get(&gamma);
        }
        self.memo.insert(alpha.to_vec(), v);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformBall {
    center: Vec<f64>,
    radius: f64,
}

impl UniformBall {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::InvalidLaw("zero-dimensional ball".into()));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidLaw(format!(
                "radius must be positive, got {radius}"
            )));
        }
        Ok(Self { center, radius })
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Centered moment `E[y^beta]`, y uniform in the ball of radius r at 0.
    fn centered_moment(&self, beta: &[u32]) -> f64 {
        if beta.iter().any(|b| b % 2 == 1) {
            return 0.0;
        }
        let d = self.center.len() as u32;
        let total: u32 = beta.iter().sum();
        let mut num = gamma_half(d);
        for &b in beta {
            num *= gamma_half(b + 1);
        }
        let den = gamma_half(total + d) * std::f64::consts::PI.powf(d as f64 / 2.0);
        self.radius.powi(total as i32) * d as f64 / (total + d) as f64 * num / den
    }

    fn moment(&self, alpha: &[u32]) -> f64 {
        // binomial expansion around the center
        let d = alpha.len();
        let mut beta = vec![0u32; d];
        let mut total = 0.0;
        loop {
            let mut coef = 1.0;
            for i in 0..d {
                coef *=
                    binomial(alpha[i], beta[i]) * self.center[i].powi((alpha[i] - beta[i]) as i32);
            }
            if coef != 0.0 {
                total += coef * self.centered_moment(&beta);
            }
            // odometer over 0..=alpha
            let mut i = 0;
            loop {
                if i == d {
                    return total;
                }
                if beta[i] < alpha[i] {
                    beta[i] += 1;
                    break;
                }
                beta[i] = 0;
                i += 1;
            }
        }
    }

    fn sample_into(&self, rng: &mut impl Rng, out: &mut [f64]) {
        let d = self.center.len();
        loop {
            let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let u: f64 = rng.random();
            let r = self.radius * u.powf(1.0 / d as f64);
            for i in 0..d {
                out[i] = self.center[i] + r * z[i] / norm;
            }
            return;
        }
    }
}

/// `Gamma(k / 2)` for a positive integer `k`.
pub(crate) fn gamma_half(k: u32) -> f64 {
    assert!(k >= 1);
    let (mut x, mut v) = if k % 2 == 0 {
        (1.0, 1.0)
    } else {
        (0.5, std::f64::consts::PI.sqrt())
    };
    while x < k as f64 / 2.0 - 0.25 {
        v *= x;
        x += 1.0;
    }
    v
}

fn binomial(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    let mut v = 1.0;
    for i in 0..k {
        v = v * (n - i) as f64 / (i + 1) as f64;
    }
    v
}

/// A probability measure on R^d with exact moments and seeded sampling.
#[derive(Debug, Clone, PartialEq)]
pub enum MarginalLaw {
    Density1D(CosineDensity),
    GaussianMixture(GaussianMixture),
    UniformBall(UniformBall),
}

impl MarginalLaw {
    /// Named laws used by the experiment configs: `mu1_1d`..`mu3_1d` on
    /// [-1, 1] and `mu1_3d`..`mu4_3d` in R^3.
    pub fn preset(name: &str) -> Result<Self> {
        use std::f64::consts::PI;
        let c = vec![1.0, 0.5, 0.75, 0.5, 2.0, 1.5, 0.75, 1.5, 3.0];
        let law = match name {
            "mu1_1d" => Self::Density1D(CosineDensity::new(0.5, vec![], (-1.0, 1.0))?),
            "mu2_1d" => Self::Density1D(CosineDensity::new(
                0.46,
                vec![(PI / 10.0, 2.5 * PI)],
                (-1.0, 1.0),
            )?),
            "mu3_1d" => Self::Density1D(CosineDensity::new(
                0.48,
                vec![(0.13 * PI, 6.5 * PI)],
                (-1.0, 1.0),
            )?),
            "mu1_3d" => Self::GaussianMixture(GaussianMixture::standard_normal(3)),
            "mu2_3d" => Self::GaussianMixture(GaussianMixture::new(vec![
                GaussianComponent {
                    weight: 2.0 / 3.0,
                    mean: vec![0.0; 3],
                    covariance: c.clone(),
                },
                GaussianComponent {
                    weight: 1.0 / 3.0,
                    mean: vec![2.0; 3],
                    covariance: vec![1.0, 0.8, 0.22, 0.8, 2.0, 1.8, 0.22, 1.8, 3.0],
                },
            ])?),
            "mu3_3d" => {
                let weights = [0.1, 0.2, 0.2, 0.2, 0.2, 0.1];
                Self::GaussianMixture(GaussianMixture::new(
                    weights
                        .iter()
                        .enumerate()
                        .map(|(i, &w)| GaussianComponent {
                            weight: w,
                            mean: vec![4.0 * i as f64, 0.0, 0.0],
                            covariance: c.clone(),
                        })
                        .collect(),
                )?)
            }
            "mu4_3d" => Self::UniformBall(UniformBall::new(vec![0.0; 3], 1.0)?),
            other => return Err(Error::InvalidLaw(format!("unknown preset '{other}'"))),
        };
        Ok(law)
    }

    pub fn dimension(&self) -> usize {
        match self {
            Self::Density1D(_) => 1,
            Self::GaussianMixture(g) => g.dim,
            Self::UniformBall(b) => b.center.len(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Density1D(_) => "density1d",
            Self::GaussianMixture(_) => "gaussian_mixture",
            Self::UniformBall(_) => "uniform_ball",
        }
    }

    /// `E[x^alpha]` in closed form (quadrature for the oscillatory part of
    /// 1D densities).
    pub fn monomial_moment(&self, alpha: &[u32]) -> Result<f64> {
        if alpha.len() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                got: alpha.len(),
            });
        }
        Ok(match self {
            Self::Density1D(dens) => dens.monomial_moment(alpha[0]),
            Self::GaussianMixture(g) => g
                .components
                .iter()
                .map(|c| c.weight * GaussianMoments::new(c).get(alpha))
                .sum(),
            Self::UniformBall(b) => b.moment(alpha),
        })
    }

    pub fn mean(&self) -> Vec<f64> {
        let d = self.dimension();
        (0..d)
            .map(|i| {
                let mut a = vec![0; d];
                a[i] = 1;
                self.monomial_moment(&a).expect("dimension matches")
            })
            .collect()
    }

    /// Row-major covariance.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dimension();
        let m = self.mean();
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let mut a = vec![0; d];
                a[i] += 1;
                a[j] += 1;
                out[i * d + j] = self.monomial_moment(&a).expect("dimension matches") - m[i] * m[j];
            }
        }
        out
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        match self {
            Self::Density1D(d) => Ok(d.cdf(x)),
            _ => Err(Error::Unsupported(format!(
                "CDF of a {} law",
                self.kind_name()
            ))),
        }
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        match self {
            Self::Density1D(d) => d.quantile(p),
            _ => Err(Error::Unsupported(format!(
                "quantile of a {} law",
                self.kind_name()
            ))),
        }
    }

    pub fn density_1d(&self, x: f64) -> Result<f64> {
        match self {
            Self::Density1D(d) => Ok(d.density(x)),
            _ => Err(Error::Unsupported(format!(
                "1D density of a {} law",
                self.kind_name()
            ))),
        }
    }

    /// Law of `t = (x - shift) / scale` (coordinatewise).
    pub fn standardized(&self, shift: &[f64], scale: &[f64]) -> Result<MarginalLaw> {
        let d = self.dimension();
        if shift.len() != d || scale.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: shift.len().min(scale.len()),
            });
        }
        if scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidParameter("scales must be positive".into()));
        }
        match self {
            Self::GaussianMixture(g) => {
                let comps = g
                    .components
                    .iter()
                    .map(|c| GaussianComponent {
                        weight: c.weight,
                        mean: (0..d).map(|i| (c.mean[i] - shift[i]) / scale[i]).collect(),
                        covariance: (0..d * d)
                            .map(|ij| c.covariance[ij] / (scale[ij / d] * scale[ij % d]))
                            .collect(),
                    })
                    .collect();
                Ok(Self::GaussianMixture(GaussianMixture::new(comps)?))
            }
            Self::UniformBall(b) => {
                let s = scale[0];
                if scale.iter().any(|v| (v - s).abs() > 1e-12 * s) {
                    return Err(Error::Unsupported("anisotropic scaling of a ball".into()));
                }
                Ok(Self::UniformBall(UniformBall::new(
                    (0..d).map(|i| (b.center[i] - shift[i]) / s).collect(),
                    b.radius / s,
                )?))
            }
            Self::Density1D(_) => Err(Error::Unsupported("standardizing a 1D density".into())),
        }
    }

    /// Per-coordinate shift and scale used before orthogonalization.
    pub fn standardization(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dimension();
        let mean = self.mean();
        let cov = self.covariance();
        let mut scale: Vec<f64> = (0..d).map(|i| cov[i * d + i].sqrt()).collect();
        if let Self::UniformBall(_) = self {
            let s = scale.iter().cloned().fold(0.0, f64::max);
            scale = vec![s; d];
        }
        (mean, scale)
    }

    /// `count` points, flat `count x d`, deterministic in `seed`.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng, count)
    }

    pub fn sample_with(&self, rng: &mut impl Rng, count: usize) -> Vec<f64> {
        let d = self.dimension();
        let mut out = vec![0.0; count * d];
        for chunk in out.chunks_mut(d) {
            match self {
                Self::Density1D(dens) => {
                    let u: f64 = rng.random();
                    chunk[0] = dens.quantile(u).expect("u in [0, 1)");
                }
                Self::GaussianMixture(g) => g.sample_into(rng, chunk),
                Self::UniformBall(b) => b.sample_into(rng, chunk),
            }
        }
        out
    }
}

/// Table of `E[x^alpha]` for every multi-index with total degree at most
/// `max_degree`.
#[derive(Debug, Clone)]
pub struct MonomialMomentTable {
    max_degree: u32,
    values: HashMap<Vec<u32>, f64>,
}

impl MonomialMomentTable {
    pub fn new(law: &MarginalLaw, max_degree: u32) -> Self {
        let d = law.dimension();
        let mut values = HashMap::new();
        let mut alpha = vec![0u32; d];
        let mut push = |alpha: &[u32]| {
            values.insert(
                alpha.to_vec(),
                law.monomial_moment(alpha).expect("dimension matches"),
            );
        };
        loop {
            if alpha.iter().sum::<u32>() <= max_degree {
                push(&alpha);
            }
            let mut i = 0;
            loop {
                if i == d {
                    return Self { max_degree, values };
                }
                if alpha[i] < max_degree {
                    alpha[i] += 1;
                    break;
                }
                alpha[i] = 0;
                i += 1;
            }
        }
    }

    pub fn max_degree(&self) -> u32 {
        self.max_degree
    }

    pub fn get(&self, alpha: &[u32]) -> Option<f64> {
        self.values.get(alpha).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Mean of sampled points, per coordinate.
pub fn sample_mean(points: &[f64], d: usize) -> Vec<f64> {
    let n = points.len() / d;
    let mut acc = vec![0.0; d];
    for p in points.chunks(d) {
        for i in 0..d {
            acc[i] += p[i];
        }
    }
    acc.iter().map(|v| v / n as f64).collect()
}
