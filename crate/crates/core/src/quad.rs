//! Quadrature on spheres and balls.
//!
//! Rules store unit-sphere (or unit-ball) nodes with weights that sum to one, so a
//! weighted sum is a normalized average. Dimensions 2 and 3 use deterministic product
//! rules; higher dimensions fall back to seeded Monte Carlo and report a standard
//! error instead of a polynomial order.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Ball;
use crate::operator::{EllipticOperator, MetricChart};

/// Seed used by Monte Carlo rules unless the caller supplies one.
pub const DEFAULT_MC_SEED: u64 = 0x5eed_f00d;

/// Samples used by Monte Carlo rules per unit of requested order.
pub const MC_SAMPLES_PER_ORDER: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    /// `⨏`, normalized by measure.
    Average,
    /// `∫`, raw measure.
    Total,
}

/// A quadrature result with its provenance.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Integral {
    pub value: f64,
    pub convention: Convention,
    /// Resolution parameter of the rule; 0 for Monte Carlo.
    pub order: usize,
    pub nodes: usize,
    /// Only set for Monte Carlo rules.
    pub std_error: Option<f64>,
}

impl Integral {
    /// Converts an average over a ball/sphere of radius `r` in `ℝⁿ` into a total.
    pub fn to_total(self, measure: f64) -> Self {
        match self.convention {
            Convention::Total => self,
            Convention::Average => Self {
                value: self.value * measure,
                convention: Convention::Total,
                std_error: self.std_error.map(|e| e * measure),
                ..self
            },
        }
    }
}

/// Sum in a fixed binary-tree order; keeps rounding independent of node count parity.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if v.len() <= BLOCK {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// `Γ(n/2)` for positive integer `n`.
pub fn gamma_half(n: usize) -> f64 {
    assert!(n >= 1);
    let mut g = if n % 2 == 0 { 1.0 } else { PI.sqrt() };
    let mut k = if n % 2 == 0 { 2 } else { 1 };
    while k < n {
        g *= k as f64 / 2.0;
        k += 2;
    }
    g
}

/// Surface measure of the unit sphere `∂B₁ ⊂ ℝⁿ`.
pub fn sphere_area(n: usize) -> f64 {
    2.0 * PI.powf(n as f64 / 2.0) / gamma_half(n)
}

/// Volume of the unit ball in `ℝⁿ`.
pub fn ball_volume(n: usize) -> f64 {
    sphere_area(n) / n as f64
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1);
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(m, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(m, z);
        if d != 0.0 {
            dp = d;
        }
        x[i] = -z;
        x[m - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[m - 1 - i] = wi;
    }
    (x, w)
}

fn legendre(m: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    for k in 2..=m {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    if m == 0 {
        return (1.0, 0.0);
    }
    let d = m as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Weighted nodes on the unit sphere `∂B₁ ⊂ ℝⁿ`; weights sum to one.
#[derive(Clone, Debug)]
pub struct SphereRule {
    pub dim: usize,
    pub order: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub monte_carlo: bool,
}

impl SphereRule {
    /// Deterministic product rule for `n ∈ {2, 3}`, Monte Carlo otherwise.
    ///
    /// For `n = 2`, `order` equally spaced angles (exact for trigonometric degree
    /// below `order`). For `n = 3`, `order` Gauss–Legendre nodes in `cos φ` times
    /// `2·order` angles (exact for polynomial degree `2·order − 1`).
    pub fn new(n: usize, order: usize) -> Result<Self> {
        Self::with_seed(n, order, DEFAULT_MC_SEED)
    }

    pub fn with_seed(n: usize, order: usize, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("sphere rule needs n ≥ 2, got {n}")));
        }
        if order == 0 {
            return Err(Error::InvalidArgument("quadrature order must be positive".into()));
        }
        match n {
            2 => {
                let mut nodes = Vec::with_capacity(2 * order);
                for k in 0..order {
                    let t = 2.0 * PI * k as f64 / order as f64;
                    nodes.push(t.cos());
                    nodes.push(t.sin());
                }
                Ok(Self {
                    dim: 2,
                    order,
                    nodes,
                    weights: vec![1.0 / order as f64; order],
                    monte_carlo: false,
                })
            }
            3 => {
                let (z, wz) = gauss_legendre(order);
                let nt = 2 * order;
                let mut nodes = Vec::with_capacity(3 * order * nt);
                let mut weights = Vec::with_capacity(order * nt);
                for (zi, wi) in z.iter().zip(&wz) {
                    let s = (1.0 - zi * zi).max(0.0).sqrt();
                    for k in 0..nt {
                        let t = 2.0 * PI * (k as f64 + 0.5) / nt as f64;
                        nodes.extend_from_slice(&[s * t.cos(), s * t.sin(), *zi]);
                        weights.push(wi / 2.0 / nt as f64);
                    }
                }
                Ok(Self {
                    dim: 3,
                    order,
                    nodes,
                    weights,
                    monte_carlo: false,
                })
            }
            _ => {
                let samples = order * MC_SAMPLES_PER_ORDER;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut nodes = Vec::with_capacity(n * samples);
                for _ in 0..samples {
                    nodes.extend(unit_gaussian_direction(&mut rng, n));
                }
                Ok(Self {
                    dim: n,
                    order,
                    nodes,
                    weights: vec![1.0 / samples as f64; samples],
                    monte_carlo: true,
                })
            }
        }
    }

    /// Smallest deterministic rule integrating polynomials of degree `deg` exactly.
    pub fn exact_for(n: usize, deg: usize) -> Result<Self> {
        match n {
            2 => Self::new(2, deg + 1),
            3 => Self::new(3, deg / 2 + 1),
            _ => Self::new(n, 8),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.nodes[k * self.dim..(k + 1) * self.dim]
    }

    /// Average of `f` over `∂B_r(center)`.
    pub fn average<F: FnMut(&[f64]) -> f64>(&self, center: &[f64], r: f64, mut f: F) -> Integral {
        let mut x = vec![0.0; self.dim];
        let vals: Vec<f64> = (0..self.len())
            .map(|k| {
                for (i, xi) in x.iter_mut().enumerate() {
                    *xi = center[i] + r * self.nodes[k * self.dim + i];
                }
                f(&x)
            })
            .collect();
        self.finish(&vals)
    }

    /// Combines per-node values into an average.
    pub fn finish(&self, vals: &[f64]) -> Integral {
        let weighted: Vec<f64> = vals.iter().zip(&self.weights).map(|(v, w)| v * w).collect();
        let value = pairwise_sum(&weighted);
        Integral {
            value,
            convention: Convention::Average,
            order: if self.monte_carlo { 0 } else { self.order },
            nodes: self.len(),
            std_error: self.monte_carlo.then(|| mc_std_error(vals, value)),
        }
    }
}

/// Weighted nodes in the unit ball `B₁ ⊂ ℝⁿ`; weights sum to one.
#[derive(Clone, Debug)]
pub struct BallRule {
    pub dim: usize,
    pub order: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Radius of each node, kept for radial weightings.
    pub radii: Vec<f64>,
    pub monte_carlo: bool,
}

impl BallRule {
    /// Radial Gauss–Legendre (`order` nodes, weight `n ρ^{n−1}`) times a sphere rule
    /// with matching polynomial exactness (`2·order` angles when `n = 2`).
    pub fn new(n: usize, order: usize) -> Result<Self> {
        Self::with_seed(n, order, DEFAULT_MC_SEED)
    }

    pub fn with_seed(n: usize, order: usize, seed: u64) -> Result<Self> {
        let angular = if n == 2 { 2 * order } else { order };
        let sphere = SphereRule::with_seed(n, angular, seed)?;
        if sphere.monte_carlo {
            let samples = sphere.len();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xba11);
            let mut nodes = Vec::with_capacity(n * samples);
            let mut radii = Vec::with_capacity(samples);
            for k in 0..samples {
                let rho: f64 = rng.random::<f64>().powf(1.0 / n as f64);
                nodes.extend(sphere.node(k).iter().map(|v| v * rho));
                radii.push(rho);
            }
            return Ok(Self {
                dim: n,
                order,
                nodes,
                weights: vec![1.0 / samples as f64; samples],
                radii,
                monte_carlo: true,
            });
        }
        let (t, wt) = gauss_legendre(order);
        let mut nodes = Vec::with_capacity(n * sphere.len() * order);
        let mut weights = Vec::with_capacity(sphere.len() * order);
        let mut radii = Vec::with_capacity(sphere.len() * order);
        for (ti, wi) in t.iter().zip(&wt) {
            let rho = 0.5 * (ti + 1.0);
            let wr = 0.5 * wi * n as f64 * rho.powi(n as i32 - 1);
            for k in 0..sphere.len() {
                nodes.extend(sphere.node(k).iter().map(|v| v * rho));
                weights.push(wr * sphere.weights[k]);
                radii.push(rho);
            }
        }
        Ok(Self {
            dim: n,
            order,
            nodes,
            weights,
            radii,
            monte_carlo: false,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.nodes[k * self.dim..(k + 1) * self.dim]
    }

    /// Average of `f` over `B_r(center)`.
    pub fn average<F: FnMut(&[f64]) -> f64>(&self, center: &[f64], r: f64, mut f: F) -> Integral {
        let mut x = vec![0.0; self.dim];
        let vals: Vec<f64> = (0..self.len())
            .map(|k| {
                for (i, xi) in x.iter_mut().enumerate() {
                    *xi = center[i] + r * self.nodes[k * self.dim + i];
                }
                f(&x)
            })
            .collect();
        self.finish(&vals)
    }

    pub fn finish(&self, vals: &[f64]) -> Integral {
        let weighted: Vec<f64> = vals.iter().zip(&self.weights).map(|(v, w)| v * w).collect();
        let value = pairwise_sum(&weighted);
        Integral {
            value,
            convention: Convention::Average,
            order: if self.monte_carlo { 0 } else { self.order },
            nodes: self.len(),
            std_error: self.monte_carlo.then(|| mc_std_error(vals, value)),
        }
    }
}

/// `⨏` or `∫` of `f` over `∂B_r(center)`, after checking the sphere lies in `domain`.
pub fn integrate_sphere<F: FnMut(&[f64]) -> f64>(
    f: F,
    center: &[f64],
    r: f64,
    rule: &SphereRule,
    mode: Convention,
    domain: &Ball,
) -> Result<Integral> {
    check_radius(r)?;
    domain.require_ball(center, r)?;
    let avg = rule.average(center, r, f);
    Ok(match mode {
        Convention::Average => avg,
        Convention::Total => avg.to_total(sphere_area(rule.dim) * r.powi(rule.dim as i32 - 1)),
    })
}

/// `∫` of `f·density` over `B_r(center)` (`⨏` in average mode).
pub fn integrate_ball<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    center: &[f64],
    r: f64,
    rule: &BallRule,
    density: Option<&dyn Fn(&[f64]) -> f64>,
    mode: Convention,
    domain: &Ball,
) -> Result<Integral> {
    check_radius(r)?;
    domain.require_ball(center, r)?;
    let avg = rule.average(center, r, |x| match density {
        Some(d) => f(x) * d(x),
        None => f(x),
    });
    Ok(match mode {
        Convention::Average => avg,
        Convention::Total => avg.to_total(ball_volume(rule.dim) * r.powi(rule.dim as i32)),
    })
}

fn check_radius(r: f64) -> Result<()> {
    if r.is_nan() || r <= 0.0 {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {r}")));
    }
    Ok(())
}

fn check_geodesic(op: &EllipticOperator, chart: &MetricChart, r: f64, domain: &Ball) -> Result<()> {
    check_radius(r)?;
    if op.dim() != chart.dim() {
        return Err(Error::InvalidArgument("operator dimension mismatch".into()));
    }
    let reach = chart.q_inv.clone().svd(false, false).singular_values.max() * r;
    domain.require_ball(&chart.base, reach)
}

/// Integral over the geodesic ball `{r(x̄,·) ≤ r}` against `√(ηⁿ det a_{ij}) dx`.
///
/// The ellipsoid is parametrized by `x̄ + s·Q⁻¹θ`, whose Euclidean Jacobian is
/// `det Q⁻¹ · s^{n−1}`. Average mode divides by the geodesic volume.
pub fn integrate_geodesic_ball<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    op: &EllipticOperator,
    xbar: &[f64],
    r: f64,
    rule: &BallRule,
    mode: Convention,
    domain: &Ball,
) -> Result<Integral> {
    let chart = MetricChart::new(op, xbar);
    check_geodesic(op, &chart, r, domain)?;
    let n = rule.dim;
    let mut x = vec![0.0; n];
    let mut fv = Vec::with_capacity(rule.len());
    let mut dv = Vec::with_capacity(rule.len());
    for k in 0..rule.len() {
        chart.ray_point(rule.node(k), r, &mut x);
        let d = chart.volume_density(op, &x);
        fv.push(rule.weights[k] * f(&x) * d);
        dv.push(rule.weights[k] * d);
    }
    Ok(geodesic_finish(rule.len(), rule.order, rule.monte_carlo, &fv, &dv, mode, {
        ball_volume(n) * r.powi(n as i32) * chart.det_q_inv
    }))
}

/// Integral over the geodesic sphere `{r(x̄,·) = r}` with its induced measure
/// `dS_g = √(ηⁿ det a_{ij}) · det Q⁻¹ · r^{n−1} dσ(θ)`, which is `d/dr` of the ball integral.
pub fn integrate_geodesic_sphere<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    op: &EllipticOperator,
    xbar: &[f64],
    r: f64,
    rule: &SphereRule,
    mode: Convention,
    domain: &Ball,
) -> Result<Integral> {
    let chart = MetricChart::new(op, xbar);
    check_geodesic(op, &chart, r, domain)?;
    let n = rule.dim;
    let mut x = vec![0.0; n];
    let mut fv = Vec::with_capacity(rule.len());
    let mut dv = Vec::with_capacity(rule.len());
    for k in 0..rule.len() {
        chart.ray_point(rule.node(k), r, &mut x);
        let d = chart.volume_density(op, &x);
        fv.push(rule.weights[k] * f(&x) * d);
        dv.push(rule.weights[k] * d);
    }
    Ok(geodesic_finish(rule.len(), rule.order, rule.monte_carlo, &fv, &dv, mode, {
        sphere_area(n) * r.powi(n as i32 - 1) * chart.det_q_inv
    }))
}

fn geodesic_finish(
    nodes: usize,
    order: usize,
    monte_carlo: bool,
    fv: &[f64],
    dv: &[f64],
    mode: Convention,
    scale: f64,
) -> Integral {
    let num = pairwise_sum(fv);
    let den = pairwise_sum(dv);
    let value = match mode {
        Convention::Average => num / den,
        Convention::Total => num * scale,
    };
    Integral {
        value,
        convention: mode,
        order: if monte_carlo { 0 } else { order },
        nodes,
        std_error: None,
    }
}

fn mc_std_error(vals: &[f64], mean: f64) -> f64 {
    let m = vals.len() as f64;
    let var: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
    (var / m).sqrt()
}

fn unit_gaussian_direction(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    loop {
        let g: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let r = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r > 1e-12 {
            return g.into_iter().map(|v| v / r).collect();
        }
    }
}
