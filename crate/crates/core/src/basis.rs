//! Test-function families and their target moments.
//!
//! Three families are provided:
//! - scaled Legendre polynomials `sqrt(2n + 1/2) / (n + 1) P_n` on [-1, 1];
//! - tensor products of per-coordinate orthogonal polynomials over a
//!   hyperbolic cross index set;
//! - first and second moments (mean-covariance).
//!
//! The constant function is never part of a basis: total mass is handled
//! structurally by the particle model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::MarginalLaw;
use crate::poly::Poly1;
use crate::quadrature::GaussRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisProvenance {
    Legendre1D,
    HyperbolicCross3D,
    MeanCovariance3D,
}

/// Orthogonal polynomials of one coordinate, expressed in the standardized
/// variable `t = (x - shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalPolynomials {
    pub coordinate: usize,
    pub shift: f64,
    pub scale: f64,
    pub polys: Vec<Poly1>,
}

impl MarginalPolynomials {
    pub fn eval(&self, l: usize, x: f64) -> f64 {
        self.polys[l].eval((x - self.shift) / self.scale)
    }
}

/// Per-coordinate polynomials `P_0..P_max_degree` orthogonal against the
/// `coordinate`-th marginal of `law`.
///
/// With `scaled = true`, `int P_l P_l' dmu = delta_{l,l'} / (l + 1)^2`;
/// otherwise the family is orthonormal.
pub fn orthonormal_marginal_polynomials(
    law: &MarginalLaw,
    coordinate: usize,
    max_degree: usize,
    scaled: bool,
) -> Result<MarginalPolynomials> {
    let d = law.dimension();
    if coordinate >= d {
        return Err(Error::InvalidParameter(format!(
            "coordinate {coordinate} out of range for dimension {d}"
        )));
    }
    if max_degree > 12 {
        return Err(Error::InvalidParameter(format!(
            "max_degree {max_degree} exceeds 12"
        )));
    }
    let (shift, scale) = match law {
        MarginalLaw::Density1D(_) => (vec![0.0], vec![1.0]),
        _ => law.standardization(),
    };
    let std_law = match law {
        MarginalLaw::Density1D(_) => law.clone(),
        _ => law.standardized(&shift, &scale)?,
    };
    let moments: Vec<f64> = (0..=2 * max_degree)
        .map(|p| {
            let mut alpha = vec![0u32; d];
            alpha[coordinate] = p as u32;
            std_law.monomial_moment(&alpha)
        })
        .collect::<Result<_>>()?;

    // modified Gram-Schmidt on monomials, two passes
    let mut ortho: Vec<Poly1> = Vec::with_capacity(max_degree + 1);
    for l in 0..=max_degree {
        let mono = Poly1::monomial(l);
        let mut v = mono.clone();
        for _pass in 0..2 {
            for q in &ortho {
                let c = v.inner_with_moments(q, &moments);
                v = v.axpy(-c, q);
            }
        }
        let norm2 = v.inner_with_moments(&v, &moments);
        let ref_norm2 = mono.inner_with_moments(&mono, &moments);
        if !(norm2 > 1e-13 * ref_norm2) || !norm2.is_finite() {
            return Err(Error::SingularMoments { degree: l });
        }
        ortho.push(v.scale(1.0 / norm2.sqrt()));
    }
    let polys = ortho
        .into_iter()
        .enumerate()
        .map(|(l, p)| {
            if scaled {
                p.scale(1.0 / (l as f64 + 1.0))
            } else {
                p
            }
        })
        .collect();
    Ok(MarginalPolynomials {
        coordinate,
        shift: shift[coordinate],
        scale: scale[coordinate],
        polys,
    })
}

/// Number of `l in N^dim` with `prod (l_i + 1) <= threshold`, including 0.
pub fn hyperbolic_cross_count(dim: usize, threshold: usize) -> usize {
    fn rec(dim: usize, budget: usize) -> usize {
        if dim == 0 {
            return 1;
        }
        (1..=budget).map(|a| rec(dim - 1, budget / a)).sum()
    }
    if threshold == 0 {
        0
    } else {
        rec(dim, threshold)
    }
}

/// Hyperbolic cross index set without the zero index, sorted by the product
/// `prod (l_i + 1)` then lexicographically.
pub fn hyperbolic_cross_indices(dim: usize, threshold: usize) -> Vec<Vec<usize>> {
    fn rec(dim: usize, budget: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if dim == 0 {
            out.push(prefix.clone());
            return;
        }
        for a in 1..=budget {
            prefix.push(a - 1);
            rec(dim - 1, budget / a, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if threshold >= 1 {
        rec(dim, threshold, &mut Vec::new(), &mut out);
    }
    out.retain(|l| l.iter().any(|&v| v > 0));
    out.sort_by(|a, b| {
        let pa: usize = a.iter().map(|v| v + 1).product();
        let pb: usize = b.iter().map(|v| v + 1).product();
        pa.cmp(&pb).then_with(|| a.cmp(b))
    });
    out
}

/// Smallest threshold `L` whose cross (minus the zero index) has `n` elements.
pub fn hyperbolic_threshold_for_size(dim: usize, n: usize) -> Result<usize> {
    let mut threshold = 1;
    loop {
        let count = hyperbolic_cross_count(dim, threshold) - 1;
        if count == n {
            return Ok(threshold);
        }
        if count > n {
            return Err(Error::UnrealizableBasisSize { n });
        }
        threshold += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorFamily {
    coords: Vec<MarginalPolynomials>,
    indices: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Family {
    /// `phi_n = sqrt(2n + 1/2) / (n + 1) P_n`, n = 1..=degree.
    Legendre {
        degree: usize,
    },
    Tensor(TensorFamily),
    /// `x_i` for all i, then `x_i^2`, then `x_i x_j` (i < j).
    MeanCovariance {
        dim: usize,
    },
}

/// An ordered family of polynomial test functions with their target moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestBasis {
    dim: usize,
    provenance: BasisProvenance,
    family: Family,
    targets: Vec<f64>,
}

/// Scratch buffers reused across point evaluations.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    vals: Vec<f64>,
    ders: Vec<f64>,
}

fn legendre_scale(n: usize) -> f64 {
    (2.0 * n as f64 + 0.5).sqrt() / (n as f64 + 1.0)
}

/// Monomial coefficients of `P_0..P_degree` by the three-term recurrence.
pub fn legendre_coefficients(degree: usize) -> Vec<Poly1> {
    let mut out = vec![Poly1::new(vec![1.0])];
    if degree >= 1 {
        out.push(Poly1::new(vec![0.0, 1.0]));
    }
    for k in 2..=degree {
        let kf = k as f64;
        let next = out[k - 1]
            .shift_up()
            .scale((2.0 * kf - 1.0) / kf)
            .axpy(-(kf - 1.0) / kf, &out[k - 2]);
        out.push(next);
    }
    out
}

impl TestBasis {
    /// Scaled Legendre test functions of degree 1..=n.
    pub fn legendre(law: &MarginalLaw, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter(
                "a Legendre basis needs N >= 1".into(),
            ));
        }
        if law.dimension() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: law.dimension(),
            });
        }
        let mut basis = Self {
            dim: 1,
            provenance: BasisProvenance::Legendre1D,
            family: Family::Legendre { degree: n },
            targets: vec![0.0; n],
        };
        basis.targets = match law {
            MarginalLaw::Density1D(dens) => {
                let (a, b) = dens.support();
                let rule = GaussRule::new(128);
                let mut acc = vec![0.0; n];
                let mut ws = basis.workspace();
                let mut vals = vec![0.0; n];
                for (x, w) in rule.mapped(a, b) {
                    basis.eval(&[x], &mut vals, &mut ws);
                    let wd = w * dens.density(x);
                    for (s, v) in acc.iter_mut().zip(&vals) {
                        *s += wd * v;
                    }
                }
                acc
            }
            _ => {
                let coeffs = legendre_coefficients(n);
                (1..=n)
                    .map(|k| {
                        let mut s = 0.0;
                        for (p, c) in coeffs[k].coeffs().iter().enumerate() {
                            if *c != 0.0 {
                                s += c * law.monomial_moment(&[p as u32])?;
                            }
                        }
                        Ok(s * legendre_scale(k))
                    })
                    .collect::<Result<_>>()?
            }
        };
        Ok(basis)
    }

    /// Tensor-product test functions over the hyperbolic cross of size `n`.
    pub fn hyperbolic_cross(law: &MarginalLaw, n: usize, scaled: bool) -> Result<Self> {
        let dim = law.dimension();
        let threshold = hyperbolic_threshold_for_size(dim, n)?;
        let indices = hyperbolic_cross_indices(dim, threshold);
        debug_assert_eq!(indices.len(), n);
        let coords = (0..dim)
            .map(|j| {
                let max_l = indices.iter().map(|l| l[j]).max().unwrap_or(0);
                orthonormal_marginal_polynomials(law, j, max_l, scaled)
            })
            .collect::<Result<Vec<_>>>()?;
        let shift: Vec<f64> = coords.iter().map(|c| c.shift).collect();
        let scale: Vec<f64> = coords.iter().map(|c| c.scale).collect();
        let std_law = match law {
            MarginalLaw::Density1D(_) => law.clone(),
            _ => law.standardized(&shift, &scale)?,
        };
        // joint moments of the standardized law: coordinates may be correlated
        let mut cache = std::collections::HashMap::<Vec<u32>, f64>::new();
        let mut targets = Vec::with_capacity(indices.len());
        for l in &indices {
            let mut total = 0.0;
            let mut alpha = vec![0usize; dim];
            loop {
                let mut coef = 1.0;
                for j in 0..dim {
                    coef *= coords[j].polys[l[j]].coeffs()[alpha[j]];
                }
                if coef != 0.0 {
                    let key: Vec<u32> = alpha.iter().map(|&a| a as u32).collect();
                    let m = match cache.get(&key) {
                        Some(&m) => m,
                        None => {
                            let m = std_law.monomial_moment(&key)?;
                            cache.insert(key, m);
                            m
                        }
                    };
                    total += coef * m;
                }
                let mut j = 0;
                loop {
                    if j == dim {
                        break;
                    }
                    if alpha[j] < l[j] {
                        alpha[j] += 1;
                        break;
                    }
                    alpha[j] = 0;
                    j += 1;
                }
                if j == dim {
                    break;
                }
            }
            targets.push(total);
        }
        Ok(Self {
            dim,
            provenance: BasisProvenance::HyperbolicCross3D,
            family: Family::Tensor(TensorFamily { coords, indices }),
            targets,
        })
    }

    /// Means, variances and cross moments of every coordinate pair.
    pub fn mean_covariance(law: &MarginalLaw) -> Result<Self> {
        let dim = law.dimension();
        let mut targets = Vec::new();
        for i in 0..dim {
            let mut a = vec![0u32; dim];
            a[i] = 1;
            targets.push(law.monomial_moment(&a)?);
        }
        for i in 0..dim {
            let mut a = vec![0u32; dim];
            a[i] = 2;
            targets.push(law.monomial_moment(&a)?);
        }
        for i in 0..dim {
            for j in i + 1..dim {
                let mut a = vec![0u32; dim];
                a[i] = 1;
                a[j] = 1;
                targets.push(law.monomial_moment(&a)?);
            }
        }
        Ok(Self {
            dim,
            provenance: BasisProvenance::MeanCovariance3D,
            family: Family::MeanCovariance { dim },
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provenance(&self) -> BasisProvenance {
        self.provenance
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Hyperbolic cross multi-indices, if this is a tensor basis.
    pub fn tensor_indices(&self) -> Option<&[Vec<usize>]> {
        match &self.family {
            Family::Tensor(t) => Some(&t.indices),
            _ => None,
        }
    }

    pub fn workspace(&self) -> Workspace {
        let size = match &self.family {
            Family::Legendre { degree } => degree + 1,
            Family::Tensor(t) => t.coords.iter().map(|c| c.polys.len()).sum(),
            Family::MeanCovariance { .. } => 0,
        };
        Workspace {
            vals: vec![0.0; size],
            ders: vec![0.0; size],
        }
    }

    /// Values of every test function at `x`.
    pub fn eval(&self, x: &[f64], values: &mut [f64], ws: &mut Workspace) {
        debug_assert_eq!(x.len(), self.dim);
        match &self.family {
            Family::Legendre { degree } => {
                let p = &mut ws.vals;
                p[0] = 1.0;
                p[1] = x[0];
                for k in 2..=*degree {
                    let kf = k as f64;
                    p[k] = ((2.0 * kf - 1.0) * x[0] * p[k - 1] - (kf - 1.0) * p[k - 2]) / kf;
                }
                for n in 1..=*degree {
                    values[n - 1] = legendre_scale(n) * p[n];
                }
            }
            Family::Tensor(t) => {
                let mut offset = 0;
                let mut offsets = [0usize; 8];
                for (j, c) in t.coords.iter().enumerate() {
                    offsets[j] = offset;
                    let tj = (x[j] - c.shift) / c.scale;
                    for (l, p) in c.polys.iter().enumerate() {
                        ws.vals[offset + l] = p.eval(tj);
                    }
                    offset += c.polys.len();
                }
                for (n, l) in t.indices.iter().enumerate() {
                    let mut v = 1.0;
                    for (j, &lj) in l.iter().enumerate() {
                        v *= ws.vals[offsets[j] + lj];
                    }
                    values[n] = v;
                }
            }
            Family::MeanCovariance { dim } => {
                let d = *dim;
                let mut k = 0;
                for i in 0..d {
                    values[k] = x[i];
                    k += 1;
                }
                for i in 0..d {
                    values[k] = x[i] * x[i];
                    k += 1;
                }
                for i in 0..d {
                    for j in i + 1..d {
                        values[k] = x[i] * x[j];
                        k += 1;
                    }
                }
            }
        }
    }

    /// Values and gradients; `grads` is row-major `len() x dim()`.
    pub fn eval_with_gradient(
        &self,
        x: &[f64],
        values: &mut [f64],
        grads: &mut [f64],
        ws: &mut Workspace,
    ) {
        debug_assert_eq!(x.len(), self.dim);
        match &self.family {
            Family::Legendre { degree } => {
                let (p, dp) = (&mut ws.vals, &mut ws.ders);
                p[0] = 1.0;
                dp[0] = 0.0;
                p[1] = x[0];
                dp[1] = 1.0;
                for k in 2..=*degree {
                    let kf = k as f64;
                    p[k] = ((2.0 * kf - 1.0) * x[0] * p[k - 1] - (kf - 1.0) * p[k - 2]) / kf;
                    dp[k] = dp[k - 2] + (2.0 * kf - 1.0) * p[k - 1];
                }
                for n in 1..=*degree {
                    let s = legendre_scale(n);
                    values[n - 1] = s * p[n];
                    grads[n - 1] = s * dp[n];
                }
            }
            Family::Tensor(t) => {
                let d = self.dim;
                let mut offset = 0;
                let mut offsets = [0usize; 8];
                for (j, c) in t.coords.iter().enumerate() {
                    offsets[j] = offset;
                    let tj = (x[j] - c.shift) / c.scale;
                    let inv = 1.0 / c.scale;
                    for (l, p) in c.polys.iter().enumerate() {
                        let (v, dv) = p.eval_with_derivative(tj);
                        ws.vals[offset + l] = v;
                        ws.ders[offset + l] = dv * inv;
                    }
                    offset += c.polys.len();
                }
                for (n, l) in t.indices.iter().enumerate() {
                    let mut v = 1.0;
                    for (j, &lj) in l.iter().enumerate() {
                        v *= ws.vals[offsets[j] + lj];
                    }
                    values[n] = v;
                    for i in 0..d {
                        let mut g = ws.ders[offsets[i] + l[i]];
                        for (j, &lj) in l.iter().enumerate() {
                            if j != i {
                                g *= ws.vals[offsets[j] + lj];
                            }
                        }
                        grads[n * d + i] = g;
                    }
                }
            }
            Family::MeanCovariance { dim } => {
                let d = *dim;
                grads.iter_mut().for_each(|g| *g = 0.0);
                let mut k = 0;
                for i in 0..d {
                    values[k] = x[i];
                    grads[k * d + i] = 1.0;
                    k += 1;
                }
                for i in 0..d {
                    values[k] = x[i] * x[i];
                    grads[k * d + i] = 2.0 * x[i];
                    k += 1;
                }
                for i in 0..d {
                    for j in i + 1..d {
                        values[k] = x[i] * x[j];
                        grads[k * d + i] = x[j];
                        grads[k * d + j] = x[i];
                        k += 1;
                    }
                }
            }
        }
    }

    /// Convenience wrapper allocating its own buffers.
    pub fn values_at(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        let mut ws = self.workspace();
        self.eval(x, &mut out, &mut ws);
        out
    }

    /// Audit dump: one row per test function with its target moment and
    /// monomial coefficients (in the standardized variables for tensor
    /// families).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("# mcot basis v1\nindex,label,target,coefficients\n");
        match &self.family {
            Family::Legendre { degree } => {
                let coeffs = legendre_coefficients(*degree);
                for n in 1..=*degree {
                    let c: Vec<String> = coeffs[n]
                        .coeffs()
                        .iter()
                        .map(|v| (v * legendre_scale(n)).to_string())
                        .collect();
                    s += &format!("{},P{},{},{}\n", n - 1, n, self.targets[n - 1], c.join(";"));
                }
            }
            Family::Tensor(t) => {
                for (n, l) in t.indices.iter().enumerate() {
                    let label: Vec<String> = l.iter().map(|v| v.to_string()).collect();
                    s += &format!("{},l={},{},\n", n, label.join(";"), self.targets[n]);
                }
                s += "# coordinate,degree,shift,scale,coefficients\n";
                for c in &t.coords {
                    for (l, p) in c.polys.iter().enumerate() {
                        let cs: Vec<String> = p.coeffs().iter().map(|v| v.to_string()).collect();
                        s += &format!(
                            "# {},{},{},{},{}\n",
                            c.coordinate,
                            l,
                            c.shift,
                            c.scale,
                            cs.join(";")
                        );
                    }
                }
            }
            Family::MeanCovariance { dim } => {
                let d = *dim;
                let mut labels = Vec::new();
                for i in 0..d {
                    labels.push(format!("x{}", i + 1));
                }
                for i in 0..d {
                    labels.push(format!("x{}^2", i + 1));
                }
                for i in 0..d {
                    for j in i + 1..d {
                        labels.push(format!("x{}x{}", i + 1, j + 1));
                    }
                }
                for (n, label) in labels.iter().enumerate() {
                    s += &format!("{},{},{},\n", n, label, self.targets[n]);
                }
            }
        }
        s
    }
}
