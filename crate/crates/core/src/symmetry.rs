//! Quantitative symmetry: nearest `k`-symmetric homogeneous harmonic fits,
//! the non-symmetry functional, linearity radii and effective critical sets.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{blowup_t, default_sphere_rule, CompiledPoly, ScalarField};
use crate::polyharm::{
    ball_inner, harmonic_basis, sphere_inner, sphere_norm, HarmonicHomogeneous, MultiIndexPoly, SymmetrySubspace,
};
use crate::quad::{pairwise_sum, BallRule, SphereRule};
use crate::util::{ball_lattice, dist, norm};

/// Which `L²` average measures the distance `T − P`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum FitNorm {
    /// `⨏_{B₁}|T − P|²`.
    Ball,
    /// `⨏_{∂B₁}|T − P|²`.
    Sphere,
}

#[derive(Clone, Debug, Serialize)]
pub struct SymmetryFit {
    pub k: usize,
    #[serde(rename = "V")]
    pub v: SymmetrySubspace,
    pub d: u32,
    #[serde(rename = "P", serialize_with = "poly_text")]
    pub p: HarmonicHomogeneous,
    pub distance: f64,
    pub norm: FitNorm,
}

fn poly_text<S: serde::Serializer>(p: &HarmonicHomogeneous, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&p.poly().to_text())
}

impl SymmetryFit {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit serializes")
    }
}

/// Default maximal fitted degree.
pub const DEFAULT_D_MAX: u32 = 6;

type Cache = Mutex<HashMap<(usize, usize, u32), Arc<Vec<MultiIndexPoly>>>>;

fn cache() -> &'static Cache {
    static C: OnceLock<Cache> = OnceLock::new();
    C.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Sphere-orthonormal basis of degree-`d` harmonics in `ℝⁿ` depending only on
/// `x_{k+1}, …, x_n`, i.e. invariant along `span(e₁, …, e_k)`.
pub fn invariant_basis(n: usize, k: usize, d: u32) -> Result<Arc<Vec<MultiIndexPoly>>> {
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds dimension {n}")));
    }
    if let Some(b) = cache().lock().expect("cache lock").get(&(n, k, d)) {
        return Ok(b.clone());
    }
    let m = n - k;
    let raw: Vec<MultiIndexPoly> = if d == 0 {
        vec![MultiIndexPoly::constant(n, 1.0)]
    } else if m == 0 {
        Vec::new()
    } else if m == 1 {
        if d == 1 {
            vec![MultiIndexPoly::variable(n, n - 1)]
        } else {
            Vec::new()
        }
    } else {
        let embed = DMatrix::from_fn(m, n, |i, j| if j == k + i { 1.0 } else { 0.0 });
        harmonic_basis(m, d)?
            .into_iter()
            .map(|h| h.poly().compose_linear(&embed))
            .collect()
    };
    let mut basis: Vec<MultiIndexPoly> = Vec::with_capacity(raw.len());
    for s in raw {
        let mut w = s;
        for _ in 0..2 {
            for b in &basis {
                let c = sphere_inner(&w, b);
                w = w.sub(&b.scale(c));
            }
        }
        let nrm = sphere_norm(&w);
        if nrm > 1e-10 {
            basis.push(w.scale(1.0 / nrm).pruned(1e-15));
        }
    }
    let arc = Arc::new(basis);
    cache().lock().expect("cache lock").insert((n, k, d), arc.clone());
    Ok(arc)
}

struct DegreeData {
    d: u32,
    /// Inner products of `T` with the orthonormal degree-`d` harmonics.
    coeffs: Vec<f64>,
    /// `Σ coeffs_i ψ_i`.
    td: MultiIndexPoly,
    td_fast: CompiledPoly,
    /// `⨏ P²` over the chosen domain for normalized degree-`d` `P`.
    kappa: f64,
}

/// Precomputed projections of a blow-up onto harmonic spaces of degree `≤ d_max`.
pub struct FitContext {
    n: usize,
    norm: FitNorm,
    t_norm2: f64,
    degrees: Vec<DegreeData>,
}

impl FitContext {
    pub fn new(t: &ScalarField, d_max: u32, norm: FitNorm) -> Result<Self> {
        let n = t.dim();
        if n < 2 {
            return Err(Error::InvalidArgument("symmetry fits need n ≥ 2".into()));
        }
        t.domain.require_ball(&vec![0.0; n], 1.0)?;
        let mut degrees = Vec::new();
        let psis: Vec<Arc<Vec<MultiIndexPoly>>> =
            (1..=d_max).map(|d| invariant_basis(n, 0, d)).collect::<Result<_>>()?;
        let t_norm2;
        let mut coeffs_all: Vec<Vec<f64>> = Vec::new();
        if let Some(tp) = t.poly() {
            let inner = |a: &MultiIndexPoly, b: &MultiIndexPoly| match norm {
                FitNorm::Ball => ball_inner(a, b),
                FitNorm::Sphere => sphere_inner(a, b),
            };
            t_norm2 = inner(tp, tp);
            for psi in &psis {
                coeffs_all.push(psi.iter().map(|p| inner(tp, p)).collect());
            }
        } else {
            let order = crate::frequency::default_order(n).max(d_max as usize + 3);
            let (nodes, weights): (Vec<Vec<f64>>, Vec<f64>) = match norm {
                FitNorm::Ball => {
                    let r = BallRule::new(n, order)?;
                    ((0..r.len()).map(|k| r.node(k).to_vec()).collect(), r.weights.clone())
                }
                FitNorm::Sphere => {
                    let r = SphereRule::new(n, if n == 2 { 2 * order } else { order })?;
                    ((0..r.len()).map(|k| r.node(k).to_vec()).collect(), r.weights.clone())
                }
            };
            let tv: Vec<f64> = nodes.iter().map(|y| t.value(y)).collect();
            t_norm2 = pairwise_sum(&tv.iter().zip(&weights).map(|(v, w)| w * v * v).collect::<Vec<_>>());
            for psi in &psis {
                coeffs_all.push(
                    psi.iter()
                        .map(|p| {
                            let c = CompiledPoly::new(p);
                            let terms: Vec<f64> =
                                nodes.iter().zip(&tv).zip(&weights).map(|((y, v), w)| w * v * c.eval(y)).collect();
                            pairwise_sum(&terms)
                        })
                        .collect(),
                );
            }
        }
        for (idx, (psi, coeffs)) in psis.iter().zip(coeffs_all).enumerate() {
            let d = idx as u32 + 1;
            let mut td = MultiIndexPoly::zero(n);
            for (p, c) in psi.iter().zip(&coeffs) {
                td = td.add(&p.scale(*c));
            }
            let kappa = match norm {
                FitNorm::Ball => n as f64 / (n as f64 + 2.0 * d as f64),
                FitNorm::Sphere => 1.0,
            };
            degrees.push(DegreeData {
                d,
                td_fast: CompiledPoly::new(&td),
                td,
                coeffs,
                kappa,
            });
        }
        Ok(Self {
            n,
            norm,
            t_norm2,
            degrees,
        })
    }

    pub fn t_norm2(&self) -> f64 {
        self.t_norm2
    }

    /// Best fit invariant along a fixed subspace `V`.
    pub fn fit_fixed(&self, v: &SymmetrySubspace) -> Result<SymmetryFit> {
        let k = v.dim();
        let r = frame_from(v, self.n);
        let mut best: Option<SymmetryFit> = None;
        for dd in &self.degrees {
            let basis = invariant_basis(self.n, k, dd.d)?;
            if basis.is_empty() {
                continue;
            }
            let c = self.project_exact(dd, &basis, &r);
            let fit = self.make_fit(dd, k, &basis, &r, &c)?;
            if best.as_ref().is_none_or(|b| fit.distance < b.distance) {
                best = Some(fit);
            }
        }
        best.ok_or_else(|| Error::InvalidArgument(format!("empty fit space for k = {k}")))
    }

    /// Best fit over degrees `1..=d_max` and `k`-dimensional subspaces.
    pub fn nearest(&self, k: usize) -> Result<SymmetryFit> {
        if k > self.n {
            return Err(Error::InvalidArgument(format!("k = {k} exceeds dimension {}", self.n)));
        }
        let mut best: Option<SymmetryFit> = None;
        for dd in &self.degrees {
            let basis = invariant_basis(self.n, k, dd.d)?;
            if basis.is_empty() {
                continue;
            }
            let (r, c) = if k == 0 {
                (DMatrix::identity(self.n, self.n), dd.coeffs.clone())
            } else if dd.d == 1 {
                self.linear_frame(dd, k)
            } else {
                self.search(dd, k, &basis)?
            };
            let fit = self.make_fit(dd, k, &basis, &r, &c)?;
            if best.as_ref().is_none_or(|b| fit.distance < b.distance) {
                best = Some(fit);
            }
        }
        best.ok_or_else(|| Error::InvalidArgument(format!("empty fit space for k = {k}")))
    }

    fn make_fit(
        &self,
        dd: &DegreeData,
        k: usize,
        basis: &[MultiIndexPoly],
        r: &DMatrix<f64>,
        c: &[f64],
    ) -> Result<SymmetryFit> {
        let cn = norm(c);
        let mut p0 = MultiIndexPoly::zero(self.n);
        if cn > 0.0 {
            for (b, ci) in basis.iter().zip(c) {
                p0 = p0.add(&b.scale(ci / cn));
            }
        } else {
            p0 = basis[0].clone();
        }
        let p = p0.compose_linear(&r.transpose()).pruned(1e-15);
        let p = HarmonicHomogeneous::new(p)?.normalized()?;
        let v = SymmetrySubspace {
            ambient: self.n,
            basis: (0..k).map(|j| r.column(j).iter().copied().collect()).collect(),
        };
        Ok(SymmetryFit {
            k,
            v,
            d: dd.d,
            p,
            distance: (self.t_norm2 - 2.0 * cn + dd.kappa).max(0.0),
            norm: self.norm,
        })
    }

    fn project_exact(&self, dd: &DegreeData, basis: &[MultiIndexPoly], r: &DMatrix<f64>) -> Vec<f64> {
        let q = dd.td.compose_linear(r);
        basis.iter().map(|b| sphere_inner(&q, b)).collect()
    }

    /// Linear fits: the best `V` is any `k`-plane orthogonal to the gradient of `T₁`.
    fn linear_frame(&self, dd: &DegreeData, k: usize) -> (DMatrix<f64>, Vec<f64>) {
        let n = self.n;
        let mut ell = vec![0.0; n];
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            ell[i] = dd.td.derivative(i).eval(&e);
        }
        let span = if norm(&ell) > 0.0 {
            SymmetrySubspace::span(n, &[ell])
        } else {
            SymmetrySubspace::span(n, &[{
                let mut e = vec![0.0; n];
                e[n - 1] = 1.0;
                e
            }])
        };
        let comp = span.complement();
        let mut cols: Vec<Vec<f64>> = comp.basis[..k].to_vec();
        cols.extend(comp.basis[k..].iter().cloned());
        cols.extend(span.basis.iter().cloned());
        let r = DMatrix::from_fn(n, n, |i, j| cols[j][i]);
        let basis = invariant_basis(n, k, 1).expect("linear basis");
        let c = self.project_exact(dd, &basis, &r);
        (r, c)
    }

    fn search(&self, dd: &DegreeData, k: usize, basis: &[MultiIndexPoly]) -> Result<(DMatrix<f64>, Vec<f64>)> {
        let n = self.n;
        let eval = Projector::new(n, dd, basis)?;
        let (candidates, step) = candidate_frames(n, k);
        let mut best = (f64::NEG_INFINITY, DMatrix::identity(n, n));
        for r in candidates {
            let v = eval.norm(&r);
            if v > best.0 {
                best = (v, r);
            }
        }
        let (mut val, mut r) = best;
        let mut s = step;
        while s > 1e-8 {
            let mut improved = false;
            for i in 0..k {
                for j in k..n {
                    for sign in [1.0, -1.0] {
                        let cand = rotate_columns(&r, i, j, sign * s);
                        let v = eval.norm(&cand);
                        if v > val + 1e-15 {
                            val = v;
                            r = cand;
                            improved = true;
                        }
                    }
                }
            }
            if !improved {
                s *= 0.5;
            }
        }
        let c = self.project_exact(dd, basis, &r);
        Ok((r, c))
    }
}

/// Evaluates `|proj_{H_d^V} T_d|` for frames `R`, with a sphere rule when exact.
struct Projector<'a> {
    dd: &'a DegreeData,
    basis: &'a [MultiIndexPoly],
    rule: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

impl<'a> Projector<'a> {
    fn new(n: usize, dd: &'a DegreeData, basis: &'a [MultiIndexPoly]) -> Result<Self> {
        let rule = if n <= 3 {
            let r = match n {
                2 => SphereRule::new(2, 2 * dd.d as usize + 2)?,
                _ => SphereRule::new(3, dd.d as usize + 1)?,
            };
            let nodes: Vec<Vec<f64>> = (0..r.len()).map(|k| r.node(k).to_vec()).collect();
            let weighted: Vec<Vec<f64>> = basis
                .iter()
                .map(|b| {
                    let c = CompiledPoly::new(b);
                    nodes.iter().zip(&r.weights).map(|(y, w)| w * c.eval(y)).collect()
                })
                .collect();
            Some((nodes, weighted))
        } else {
            None
        };
        Ok(Self { dd, basis, rule })
    }

    fn norm(&self, r: &DMatrix<f64>) -> f64 {
        match &self.rule {
            Some((nodes, weighted)) => {
                let n = r.nrows();
                let mut ry = vec![0.0; n];
                let vals: Vec<f64> = nodes
                    .iter()
                    .map(|y| {
                        for i in 0..n {
                            ry[i] = (0..n).map(|j| r[(i, j)] * y[j]).sum();
                        }
                        self.dd.td_fast.eval(&ry)
                    })
                    .collect();
                weighted
                    .iter()
                    .map(|w| {
                        let s: f64 = w.iter().zip(&vals).map(|(a, b)| a * b).sum();
                        s * s
                    })
                    .sum::<f64>()
                    .sqrt()
            }
            None => {
                let q = self.dd.td.compose_linear(r);
                self.basis.iter().map(|b| sphere_inner(&q, b).powi(2)).sum::<f64>().sqrt()
            }
        }
    }
}

fn rotate_columns(r: &DMatrix<f64>, i: usize, j: usize, theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    let mut out = r.clone();
    for row in 0..r.nrows() {
        let a = r[(row, i)];
        let b = r[(row, j)];
        out[(row, i)] = c * a - s * b;
        out[(row, j)] = s * a + c * b;
    }
    out
}

/// Orthogonal frame whose first `dim V` columns span `V`.
fn frame_from(v: &SymmetrySubspace, n: usize) -> DMatrix<f64> {
    let comp = v.complement();
    let cols: Vec<&Vec<f64>> = v.basis.iter().chain(comp.basis.iter()).collect();
    DMatrix::from_fn(n, n, |i, j| cols[j][i])
}

/// Number of Fibonacci directions on the upper hemisphere of `S²` (about 2° apart).
pub const HEMISPHERE_POINTS: usize = 5000;
/// Random frames tried for `n ≥ 4`.
pub const RANDOM_FRAMES: usize = 256;
const FRAME_SEED: u64 = 0x6a55_0c1e;

fn candidate_frames(n: usize, k: usize) -> (Vec<DMatrix<f64>>, f64) {
    if n == 3 && k == 1 {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let m = HEMISPHERE_POINTS;
        let frames = (0..m)
            .map(|i| {
                let z = (i as f64 + 0.5) / m as f64;
                let rho = (1.0 - z * z).sqrt();
                let phi = golden * i as f64;
                let v = SymmetrySubspace::span(3, &[vec![rho * phi.cos(), rho * phi.sin(), z]]);
                frame_from(&v, 3)
            })
            .collect();
        return (frames, (2.0 * std::f64::consts::PI / m as f64).sqrt());
    }
    if n == 2 && k == 1 {
        let frames = (0..180)
            .map(|i| {
                let t = (i as f64).to_radians();
                frame_from(&SymmetrySubspace::span(2, &[vec![t.cos(), t.sin()]]), 2)
            })
            .collect();
        return (frames, 1f64.to_radians());
    }
    let mut frames = vec![DMatrix::identity(n, n)];
    let mut rng = ChaCha8Rng::seed_from_u64(FRAME_SEED);
    for _ in 0..RANDOM_FRAMES {
        let vecs: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect())
            .collect();
        frames.push(frame_from(&SymmetrySubspace::span(n, &vecs), n));
    }
    (frames, 0.2)
}

/// Nearest normalized `k`-symmetric homogeneous harmonic `P` of degree `≤ d_max`.
pub fn nearest_ksym(t: &ScalarField, k: usize, d_max: u32) -> Result<SymmetryFit> {
    FitContext::new(t, d_max, FitNorm::Ball)?.nearest(k)
}

pub fn nearest_ksym_with(t: &ScalarField, k: usize, d_max: u32, norm: FitNorm) -> Result<SymmetryFit> {
    FitContext::new(t, d_max, norm)?.nearest(k)
}

fn blowup_field(u: &ScalarField, x: &[f64], r: f64) -> Result<ScalarField> {
    u.domain.require_ball(x, r)?;
    Ok(blowup_t(u, x, r, &default_sphere_rule(u.dim()))?.into_field())
}

/// `𝒩` with parameter `k`: distance from `T_{x,r}u` to `k`-symmetric fits.
pub fn nonsymmetry(u: &ScalarField, x: &[f64], r: f64, k: usize, d_max: u32) -> Result<f64> {
    Ok(nearest_ksym(&blowup_field(u, x, r)?, k, d_max)?.distance)
}

pub fn nonsymmetry_fit(u: &ScalarField, x: &[f64], r: f64, k: usize, d_max: u32) -> Result<SymmetryFit> {
    nearest_ksym(&blowup_field(u, x, r)?, k, d_max)
}

/// `u` is `(k, ε, r, x)`-symmetric.
pub fn is_symmetric(u: &ScalarField, x: &[f64], r: f64, k: usize, eps: f64, d_max: u32) -> Result<bool> {
    Ok(nonsymmetry(u, x, r, k, d_max)? < eps)
}

/// `β(n) = √n`, the gradient length of a normalized linear function.
pub fn beta(n: usize) -> f64 {
    (n as f64).sqrt()
}

#[derive(Clone, Copy, Debug)]
pub struct LinearityConfig {
    /// Lattice points per axis for `C¹` sups on `B_{1/2}`.
    pub c1_per_axis: usize,
    /// Lattice points per axis for Hölder difference quotients.
    pub holder_per_axis: usize,
    pub alpha: f64,
}

impl LinearityConfig {
    pub fn for_dim(n: usize) -> Self {
        Self {
            c1_per_axis: 65,
            holder_per_axis: if n <= 2 { 65 } else { 17 },
            alpha: 0.5,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LinearityReport {
    pub x: Vec<f64>,
    pub r_x: f64,
    /// Gradient of the normalized `L`.
    #[serde(rename = "L")]
    pub l: Option<Vec<f64>>,
    /// `‖T_{x,r_x}u − L‖_{C¹(B_{1/2})}` on the lattice.
    pub c1_distance: Option<f64>,
    pub alpha: f64,
    pub scales_tested: usize,
}

/// Scales `2^{−i/2}`, `i = 0..=20`.
pub fn default_scales() -> Vec<f64> {
    (0..=20).map(|i| 0.5f64.powf(i as f64 / 2.0)).collect()
}

fn lattice_boundary_first(n: usize, per_axis: usize) -> Vec<Vec<f64>> {
    let mut pts = ball_lattice(&vec![0.0; n], 0.5, per_axis);
    pts.sort_by(|a, b| norm(b).total_cmp(&norm(a)));
    pts
}

/// `sup|T − L| + sup|∇T − ℓ|`, stopping once `cutoff` is exceeded.
fn c1_distance(t: &ScalarField, ell: &[f64], pts: &[Vec<f64>], cutoff: f64) -> f64 {
    let n = ell.len();
    let mut g = vec![0.0; n];
    let (mut sv, mut sg) = (0.0f64, 0.0f64);
    for y in pts {
        let v = t.value_grad(y, &mut g);
        let lv: f64 = ell.iter().zip(y).map(|(a, b)| a * b).sum();
        sv = sv.max((v - lv).abs());
        sg = sg.max(g.iter().zip(ell).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt());
        if sv + sg > cutoff {
            return sv + sg;
        }
    }
    sv + sg
}

fn normalized_direction(g: &[f64]) -> Option<Vec<f64>> {
    let gn = norm(g);
    if gn == 0.0 || !gn.is_finite() {
        return None;
    }
    let b = beta(g.len());
    Some(g.iter().map(|v| b * v / gn).collect())
}

/// Best of two normalized `L` candidates at one scale: `∇T(0)` and the mean lattice gradient.
fn best_linear(t: &ScalarField, pts: &[Vec<f64>], cutoff: f64) -> Option<(Vec<f64>, f64)> {
    let n = t.dim();
    let mut cands = Vec::new();
    if let Some(l) = normalized_direction(&t.gradient(&vec![0.0; n])) {
        cands.push(l);
    }
    let mut mean = vec![0.0; n];
    let mut g = vec![0.0; n];
    for y in pts {
        t.gradient_into(y, &mut g);
        for i in 0..n {
            mean[i] += g[i];
        }
    }
    if let Some(l) = normalized_direction(&mean) {
        cands.push(l);
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    for l in cands {
        let d = c1_distance(t, &l, pts, cutoff);
        if d <= cutoff {
            return Some((l, d));
        }
        if best.as_ref().is_none_or(|b| d < b.1) {
            best = Some((l, d));
        }
    }
    best
}

/// Largest scale `s` on the grid with a normalized `L` such that
/// `‖T_{x,s}u − L‖_{C¹(B_{1/2})} ≤ β(n)/2`; zero at critical points.
pub fn linearity_radius(u: &ScalarField, x: &[f64], scales: &[f64], cfg: LinearityConfig) -> Result<LinearityReport> {
    let n = u.dim();
    if x.len() != n {
        return Err(Error::InvalidArgument("point dimension mismatch".into()));
    }
    let mut report = LinearityReport {
        x: x.to_vec(),
        r_x: 0.0,
        l: None,
        c1_distance: None,
        alpha: cfg.alpha,
        scales_tested: 0,
    };
    if u.gradient(x).iter().all(|&g| g == 0.0) {
        return Ok(report);
    }
    let pts = lattice_boundary_first(n, cfg.c1_per_axis);
    let cutoff = beta(n) / 2.0;
    let mut sorted: Vec<f64> = scales.iter().copied().filter(|s| *s > 0.0).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    for s in sorted {
        if !u.domain.contains_ball(x, s) {
            continue;
        }
        report.scales_tested += 1;
        let t = match blowup_field(u, x, s) {
            Ok(t) => t,
            Err(Error::Degenerate(_)) => continue,
            Err(e) => return Err(e),
        };
        if let Some((l, d)) = best_linear(&t, &pts, cutoff) {
            if d <= cutoff {
                report.r_x = s;
                report.l = Some(l);
                report.c1_distance = Some(d);
                return Ok(report);
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EffectiveCriticalTest {
    /// Lattice infimum of `|∇u|²` over `B_r(x)`.
    pub inf_grad2: f64,
    /// `(ε_n/r²) ⨏_{∂B_{2r}(x)} |u − u(x)|²`.
    pub threshold: f64,
    pub member: bool,
}

/// Default `ε(n)` for [`effective_critical_inf`].
pub const DEFAULT_EPS_N: f64 = 0.01;

pub fn effective_critical_test(u: &ScalarField, x: &[f64], r: f64, eps_n: f64) -> Result<EffectiveCriticalTest> {
    let n = u.dim();
    if !(r > 0.0) {
        return Err(Error::InvalidArgument("radius must be positive".into()));
    }
    u.domain.require_ball(x, 2.0 * r)?;
    let per_axis = if n <= 2 { 33 } else { 17 };
    let mut inf = f64::INFINITY;
    let mut g = vec![0.0; n];
    for p in ball_lattice(x, r, per_axis) {
        u.gradient_into(&p, &mut g);
        inf = inf.min(g.iter().map(|v| v * v).sum());
    }
    let rule = default_sphere_rule(n);
    let u0 = u.value(x);
    let avg = rule.average(x, 2.0 * r, |p| (u.value(p) - u0).powi(2));
    let threshold = eps_n / (r * r) * avg.value;
    Ok(EffectiveCriticalTest {
        inf_grad2: inf,
        threshold,
        member: inf < threshold,
    })
}

/// Membership in the effective critical set by the gradient-infimum test.
pub fn effective_critical_inf(u: &ScalarField, x: &[f64], r: f64, eps_n: f64) -> Result<bool> {
    Ok(effective_critical_test(u, x, r, eps_n)?.member)
}

#[derive(Clone, Debug, Serialize)]
pub struct CriticalPoint {
    pub x: Vec<f64>,
    pub r_x: f64,
}

/// `C_r(u) = {x : r_x ≤ r}` restricted to the given grid.
pub fn effective_critical_set(
    u: &ScalarField,
    r: f64,
    grid: &[Vec<f64>],
    scales: &[f64],
    cfg: LinearityConfig,
) -> Result<Vec<CriticalPoint>> {
    let mut out = Vec::new();
    for x in grid {
        let above: Vec<f64> = scales.iter().copied().filter(|&s| s > r).collect();
        let rep = linearity_radius(u, x, &above, cfg)?;
        if rep.r_x <= r {
            out.push(CriticalPoint { x: x.clone(), r_x: rep.r_x });
        }
    }
    Ok(out)
}

pub fn points_to_csv(points: &[CriticalPoint]) -> String {
    let n = points.first().map(|p| p.x.len()).unwrap_or(0);
    let mut s: String = (1..=n).map(|i| format!("x{i},")).collect();
    s.push_str("r_x\n");
    for p in points {
        for c in &p.x {
            s.push_str(&format!("{c},"));
        }
        s.push_str(&format!("{}\n", p.r_x));
    }
    s
}

/// Default cone-splitting gap `τ`.
pub const DEFAULT_TAU: f64 = 1.0 / 7.0;

#[derive(Clone, Debug, Serialize)]
pub struct ConeSplitReport {
    pub k: usize,
    /// Distance of `T_{x_base,r}u` to fits invariant along `V`.
    pub premise_base: f64,
    /// `0`-nonsymmetry at `x_aux`.
    pub premise_aux: f64,
    /// `dist(x_aux − x_base, V)/r`.
    pub gap: f64,
    pub tau: f64,
    pub premises_hold: bool,
    /// Searched `(k+1)`-nonsymmetry at `x_base`.
    pub conclusion_searched: f64,
    /// Distance to fits invariant along `span(V, x_aux − x_base)`.
    pub conclusion_span: f64,
    pub eta_target: f64,
    pub conclusion_holds: bool,
    /// Measured `(δ, ε)`: larger premise distance, searched conclusion.
    pub delta_measured: f64,
    pub epsilon_measured: f64,
}

/// Measures both cone-splitting premises and the `(k+1)`-symmetry conclusion.
#[allow(clippy::too_many_arguments)]
pub fn cone_split_check(
    u: &ScalarField,
    x_base: &[f64],
    x_aux: &[f64],
    r: f64,
    delta: f64,
    v: &SymmetrySubspace,
    eta_target: f64,
    d_max: u32,
) -> Result<ConeSplitReport> {
    let n = u.dim();
    let k = v.dim();
    if v.ambient != n || x_base.len() != n || x_aux.len() != n {
        return Err(Error::InvalidArgument("dimension mismatch in cone-split inputs".into()));
    }
    let t_base = blowup_field(u, x_base, r)?;
    let ctx = FitContext::new(&t_base, d_max, FitNorm::Ball)?;
    let premise_base = ctx.fit_fixed(v)?.distance;
    let premise_aux = nonsymmetry(u, x_aux, r, 0, d_max)?;
    let offset: Vec<f64> = x_aux.iter().zip(x_base).map(|(a, b)| a - b).collect();
    let gap = v.distance(&offset) / r;
    let premises_hold = premise_base < delta && premise_aux < delta && gap >= DEFAULT_TAU;
    let conclusion_searched = ctx.nearest(k + 1)?.distance;
    let mut vecs = v.basis.clone();
    vecs.push(offset);
    let span = SymmetrySubspace::span(n, &vecs);
    let conclusion_span = if span.dim() == k + 1 {
        ctx.fit_fixed(&span)?.distance
    } else {
        f64::NAN
    };
    Ok(ConeSplitReport {
        k,
        premise_base,
        premise_aux,
        gap,
        tau: DEFAULT_TAU,
        premises_hold,
        conclusion_searched,
        conclusion_span,
        eta_target,
        conclusion_holds: conclusion_searched <= eta_target,
        delta_measured: premise_base.max(premise_aux),
        epsilon_measured: conclusion_searched,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LinearDetect {
    /// `(n−1)`-nonsymmetry of `T_{x,r}u`.
    pub premise: f64,
    pub eta_bar: f64,
    pub premise_holds: bool,
    #[serde(rename = "L")]
    pub l: Vec<f64>,
    pub c1_distance: f64,
    /// `‖T − L‖_{C¹} + [∇(T − L)]_α` on the lattice.
    pub c1alpha_distance: f64,
    pub alpha: f64,
}

/// Normalized linear approximation of `T_{x,r}u` and its `C^{1,α}` distance on `B_{1/2}`.
pub fn linear_detect(
    u: &ScalarField,
    x: &[f64],
    r: f64,
    eta_bar: f64,
    cfg: LinearityConfig,
) -> Result<LinearDetect> {
    let n = u.dim();
    let t = blowup_field(u, x, r)?;
    let fit = nearest_ksym(&t, n - 1, 1)?;
    let pts = lattice_boundary_first(n, cfg.c1_per_axis);
    let (l, c1) = best_linear(&t, &pts, f64::INFINITY)
        .ok_or_else(|| Error::Degenerate("blow-up has no gradient on B_{1/2}".into()))?;
    let hp = ball_lattice(&vec![0.0; n], 0.5, cfg.holder_per_axis);
    let errs: Vec<Vec<f64>> = hp
        .iter()
        .map(|y| t.gradient(y).iter().zip(&l).map(|(a, b)| a - b).collect())
        .collect();
    let mut semi = 0.0f64;
    for i in 0..hp.len() {
        for j in i + 1..hp.len() {
            let dq = dist(&errs[i], &errs[j]) / dist(&hp[i], &hp[j]).powf(cfg.alpha);
            semi = semi.max(dq);
        }
    }
    Ok(LinearDetect {
        premise: fit.distance,
        eta_bar,
        premise_holds: fit.distance < eta_bar,
        l,
        c1_distance: c1,
        c1alpha_distance: c1 + semi,
        alpha: cfg.alpha,
    })
}
