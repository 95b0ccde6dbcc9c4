//! Scalar fields with gradients, blow-up views, and lattice interpolants.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{EllipticOperator, MetricChart};
use crate::polyharm::{sphere_inner, MultiIndexPoly};
use crate::quad::SphereRule;

/// Degenerate-denominator threshold: `denom² < DEGENERATE_REL · sup²`.
pub const DEGENERATE_REL: f64 = 1e-14;

/// A closed ball `B_radius(center)`; `radius = ∞` for entire functions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Self {
        Self { center, radius }
    }

    pub fn whole(n: usize) -> Self {
        Self {
            center: vec![0.0; n],
            radius: f64::INFINITY,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// `B_r(x) ⊂ self`, with a relative slack of 1e−12.
    pub fn contains_ball(&self, x: &[f64], r: f64) -> bool {
        if self.radius.is_infinite() {
            return true;
        }
        crate::util::dist(x, &self.center) + r <= self.radius * (1.0 + 1e-12)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.contains_ball(x, 0.0)
    }

    pub fn require_ball(&self, x: &[f64], r: f64) -> Result<()> {
        if self.contains_ball(x, r) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "B_{r}({x:?}) leaves the field domain B_{}({:?})",
                self.radius, self.center
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    Polynomial,
    Closed,
    Grid,
    Blowup,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldSmoothness {
    Smooth,
    /// `C^{1,α}` only.
    C1Alpha,
}

/// Value and gradient of a function of `n` variables.
pub trait Evaluator: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64], out: &mut [f64]);

    fn value_grad(&self, x: &[f64], out: &mut [f64]) -> f64 {
        self.gradient(x, out);
        self.value(x)
    }

    /// Hessian by central differences of the gradient.
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let h = 1e-5 * crate::util::norm(x).max(1.0);
        let mut hess = DMatrix::zeros(n, n);
        let mut xp = x.to_vec();
        let mut gp = vec![0.0; n];
        let mut gm = vec![0.0; n];
        for i in 0..n {
            xp[i] = x[i] + h;
            self.gradient(&xp, &mut gp);
            xp[i] = x[i] - h;
            self.gradient(&xp, &mut gm);
            xp[i] = x[i];
            for j in 0..n {
                hess[(i, j)] = (gp[j] - gm[j]) / (2.0 * h);
            }
        }
        (&hess + hess.transpose()) * 0.5
    }
}

/// Polynomial flattened for fast repeated evaluation.
#[derive(Clone, Debug)]
pub struct CompiledPoly {
    dim: usize,
    max_exp: usize,
    exps: Vec<u32>,
    coeffs: Vec<f64>,
}

impl CompiledPoly {
    pub fn new(p: &MultiIndexPoly) -> Self {
        let dim = p.dim();
        let mut exps = Vec::with_capacity(p.num_terms() * dim);
        let mut coeffs = Vec::with_capacity(p.num_terms());
        let mut max_exp = 0;
        for (e, c) in p.terms() {
            exps.extend_from_slice(e);
            coeffs.push(c);
            max_exp = max_exp.max(e.iter().copied().max().unwrap_or(0) as usize);
        }
        Self {
            dim,
            max_exp,
            exps,
            coeffs,
        }
    }

    fn with_powers<R>(&self, x: &[f64], f: impl FnOnce(&[f64]) -> R) -> R {
        let stride = self.max_exp + 1;
        let len = self.dim * stride;
        let mut stack = [0.0f64; 96];
        let mut heap;
        let pw: &mut [f64] = if len <= stack.len() {
            &mut stack[..len]
        } else {
            heap = vec![0.0; len];
            &mut heap
        };
        for i in 0..self.dim {
            let row = &mut pw[i * stride..(i + 1) * stride];
            row[0] = 1.0;
            for k in 1..stride {
                row[k] = row[k - 1] * x[i];
            }
        }
        f(pw)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let n = self.dim;
        let stride = self.max_exp + 1;
        self.with_powers(x, |pw| {
            let mut s = 0.0;
            for (t, &c) in self.coeffs.iter().enumerate() {
                let e = &self.exps[t * n..(t + 1) * n];
                let mut m = c;
                for i in 0..n {
                    m *= pw[i * stride + e[i] as usize];
                }
                s += m;
            }
            s
        })
    }

    pub fn eval_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.dim;
        let stride = self.max_exp + 1;
        grad.iter_mut().for_each(|g| *g = 0.0);
        self.with_powers(x, |pw| {
            let mut s = 0.0;
            for (t, &c) in self.coeffs.iter().enumerate() {
                let e = &self.exps[t * n..(t + 1) * n];
                let mut m = c;
                for i in 0..n {
                    m *= pw[i * stride + e[i] as usize];
                }
                s += m;
                for i in 0..n {
                    if e[i] == 0 {
                        continue;
                    }
                    let mut d = c * e[i] as f64;
                    for j in 0..n {
                        let k = if j == i { e[j] - 1 } else { e[j] };
                        d *= pw[j * stride + k as usize];
                    }
                    grad[i] += d;
                }
            }
            s
        })
    }
}

struct PolyEval {
    poly: CompiledPoly,
    hess: Vec<CompiledPoly>,
}

impl Evaluator for PolyEval {
    fn dim(&self) -> usize {
        self.poly.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.poly.eval(x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        self.poly.eval_grad(x, out);
    }
    fn value_grad(&self, x: &[f64], out: &mut [f64]) -> f64 {
        self.poly.eval_grad(x, out)
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.poly.dim;
        DMatrix::from_fn(n, n, |i, j| self.hess[i * n + j].eval(x))
    }
}

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

struct ClosedEval {
    dim: usize,
    value: Arc<ValueFn>,
    grad: Arc<GradFn>,
}

impl Evaluator for ClosedEval {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        (self.grad)(x, out)
    }
}

/// Evaluable function with gradient on a ball.
#[derive(Clone)]
pub struct ScalarField {
    eval: Arc<dyn Evaluator>,
    pub domain: Ball,
    pub kind: FieldKind,
    pub smoothness: FieldSmoothness,
    pub id: String,
    poly: Option<Arc<MultiIndexPoly>>,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("id", &self.id)
            .field("kind", &self.kind)
            .field("domain", &self.domain)
            .finish()
    }
}

impl ScalarField {
    pub fn polynomial(p: MultiIndexPoly) -> Self {
        let n = p.dim();
        let id = format!("poly[{p}]");
        let grad = p.gradient();
        let hess = (0..n * n).map(|k| CompiledPoly::new(&grad[k / n].derivative(k % n))).collect();
        Self {
            eval: Arc::new(PolyEval {
                poly: CompiledPoly::new(&p),
                hess,
            }),
            domain: Ball::whole(n),
            kind: FieldKind::Polynomial,
            smoothness: FieldSmoothness::Smooth,
            id,
            poly: Some(Arc::new(p)),
        }
    }

    pub fn closed(
        id: impl Into<String>,
        dim: usize,
        domain: Ball,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            eval: Arc::new(ClosedEval {
                dim,
                value: Arc::new(value),
                grad: Arc::new(grad),
            }),
            domain,
            kind: FieldKind::Closed,
            smoothness: FieldSmoothness::Smooth,
            id: id.into(),
            poly: None,
        }
    }

    pub fn from_evaluator(
        id: impl Into<String>,
        eval: Arc<dyn Evaluator>,
        domain: Ball,
        kind: FieldKind,
        smoothness: FieldSmoothness,
    ) -> Self {
        Self {
            eval,
            domain,
            kind,
            smoothness,
            id: id.into(),
            poly: None,
        }
    }

    pub fn with_domain(mut self, domain: Ball) -> Self {
        self.domain = domain;
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.eval.dim()
    }

    /// The exact polynomial, for polynomial fields.
    pub fn poly(&self) -> Option<&MultiIndexPoly> {
        self.poly.as_deref()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.eval.value(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.eval.gradient(x, &mut g);
        g
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        self.eval.gradient(x, out)
    }

    pub fn value_grad(&self, x: &[f64], out: &mut [f64]) -> f64 {
        self.eval.value_grad(x, out)
    }

    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        self.eval.hessian(x)
    }

    /// `w(y) = α u(β y) + γ`, the family under which `N̄` is invariant.
    pub fn affine_rescale(&self, alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        if beta == 0.0 {
            return Err(Error::InvalidArgument("β must be nonzero".into()));
        }
        if let Some(p) = &self.poly {
            let q = p.dilate(beta).scale(alpha).add(&MultiIndexPoly::constant(p.dim(), gamma));
            return Ok(Self::polynomial(q));
        }
        let parent = self.clone();
        let parent2 = self.clone();
        let n = self.dim();
        let domain = Ball::new(
            self.domain.center.iter().map(|c| c / beta).collect(),
            self.domain.radius / beta.abs(),
        );
        Ok(Self::closed(
            format!("{}∘affine({alpha},{beta},{gamma})", self.id),
            n,
            domain,
            move |y| {
                let x: Vec<f64> = y.iter().map(|v| v * beta).collect();
                alpha * parent.value(&x) + gamma
            },
            move |y, out| {
                let x: Vec<f64> = y.iter().map(|v| v * beta).collect();
                parent2.gradient_into(&x, out);
                out.iter_mut().for_each(|g| *g *= alpha * beta);
            },
        ))
    }

    /// Largest deviation of the gradient from central differences over `samples` points.
    pub fn gradient_fd_error(&self, samples: &[Vec<f64>], h: f64) -> f64 {
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for x in samples {
            let g = self.gradient(x);
            let mut xp = x.clone();
            for i in 0..n {
                xp[i] = x[i] + h;
                let fp = self.value(&xp);
                xp[i] = x[i] - h;
                let fm = self.value(&xp);
                xp[i] = x[i];
                worst = worst.max(((fp - fm) / (2.0 * h) - g[i]).abs());
            }
        }
        worst
    }

    /// Parses `x1`, `x1x2`, `re-z<d>`, `im-z<d>`, `poly:<terms>` and `grid:<path>`.
    /// `n` pads polynomial presets to a larger dimension.
    pub fn from_spec(spec: &str, n: usize) -> Result<Self> {
        let s = spec.trim();
        if let Some(path) = s.strip_prefix("grid:") {
            return grid_field(GridData::load(path)?, None);
        }
        let p = preset_poly(s, n)?;
        Ok(Self::polynomial(p).with_id(s))
    }
}

/// Polynomial presets, padded with inactive variables up to dimension `n`.
pub fn preset_poly(spec: &str, n: usize) -> Result<MultiIndexPoly> {
    let pad = |p: MultiIndexPoly| -> Result<MultiIndexPoly> {
        if p.dim() > n {
            return Err(Error::InvalidArgument(format!("preset {spec:?} needs n ≥ {}", p.dim())));
        }
        Ok(MultiIndexPoly::from_terms(
            n,
            p.terms().map(|(e, c)| {
                let mut f = e.clone();
                f.resize(n, 0);
                (f, c)
            }),
        ))
    };
    if let Some(body) = spec.strip_prefix("poly:") {
        return pad(MultiIndexPoly::parse_infer(body, 1)?);
    }
    if let Some(d) = spec.strip_prefix("re-z") {
        let d: u32 = d.parse().map_err(|_| Error::Parse(format!("bad degree in {spec:?}")))?;
        return pad(planar_power(d).0);
    }
    if let Some(d) = spec.strip_prefix("im-z") {
        let d: u32 = d.parse().map_err(|_| Error::Parse(format!("bad degree in {spec:?}")))?;
        return pad(planar_power(d).1);
    }
    match spec {
        "x1" => pad(MultiIndexPoly::variable(1, 0)),
        "x1x2" => pad(MultiIndexPoly::monomial(2, vec![1, 1], 1.0)),
        _ => Err(Error::Parse(format!("unknown field spec {spec:?}"))),
    }
}

/// `(Re zᵈ, Im zᵈ)` with `z = x₁ + i x₂`.
pub fn planar_power(d: u32) -> (MultiIndexPoly, MultiIndexPoly) {
    let mut re = Vec::new();
    let mut im = Vec::new();
    for k in 0..=d {
        // i^k x1^{d−k} x2^k C(d,k)
        let c = binom(d, k);
        let e = vec![d - k, k];
        match k % 4 {
            0 => re.push((e, c)),
            1 => im.push((e, c)),
            2 => re.push((e, -c)),
            _ => im.push((e, -c)),
        }
    }
    (MultiIndexPoly::from_terms(2, re), MultiIndexPoly::from_terms(2, im))
}

fn binom(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Affine map used by a blow-up.
#[derive(Clone, Debug)]
pub enum BlowupMap {
    Identity,
    /// `y ↦ x + t·Q⁻¹y` with the metric chart at `x`.
    Ellipsoidal(DMatrix<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Normalization {
    /// Euclidean sphere average of the blow-up squared equals 1.
    Euclidean,
    /// Geodesic sphere average (density `√(ηⁿ a)`) equals 1.
    Geodesic,
}

/// `y ↦ (u(x + r·A y) − u(x)) / norm`.
#[derive(Clone)]
pub struct BlowupField {
    pub parent: ScalarField,
    pub base: Vec<f64>,
    pub scale: f64,
    pub map: BlowupMap,
    pub normalization: Normalization,
    /// The sphere-L² denominator.
    pub norm: f64,
    pub center_value: f64,
    poly: Option<MultiIndexPoly>,
}

impl fmt::Debug for BlowupField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BlowupField")
            .field("parent", &self.parent.id)
            .field("base", &self.base)
            .field("scale", &self.scale)
            .field("norm", &self.norm)
            .finish()
    }
}

impl BlowupField {
    pub fn dim(&self) -> usize {
        self.base.len()
    }

    /// Exact polynomial form of the blow-up, for polynomial parents.
    pub fn poly(&self) -> Option<&MultiIndexPoly> {
        self.poly.as_ref()
    }

    fn map_point(&self, y: &[f64], out: &mut [f64]) {
        let n = self.dim();
        match &self.map {
            BlowupMap::Identity => {
                for i in 0..n {
                    out[i] = self.base[i] + self.scale * y[i];
                }
            }
            BlowupMap::Ellipsoidal(a) => {
                for i in 0..n {
                    let mut s = 0.0;
                    for j in 0..n {
                        s += a[(i, j)] * y[j];
                    }
                    out[i] = self.base[i] + self.scale * s;
                }
            }
        }
    }

    fn map_norm(&self) -> f64 {
        match &self.map {
            BlowupMap::Identity => 1.0,
            BlowupMap::Ellipsoidal(a) => a.clone().svd(false, false).singular_values.max(),
        }
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        let mut x = vec![0.0; self.dim()];
        self.map_point(y, &mut x);
        (self.parent.value(&x) - self.center_value) / self.norm
    }

    pub fn gradient(&self, y: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let mut x = vec![0.0; n];
        self.map_point(y, &mut x);
        let mut g = vec![0.0; n];
        self.parent.gradient_into(&x, &mut g);
        self.pull_back_gradient(&g, out);
    }

    fn pull_back_gradient(&self, g: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let s = self.scale / self.norm;
        match &self.map {
            BlowupMap::Identity => {
                for i in 0..n {
                    out[i] = s * g[i];
                }
            }
            BlowupMap::Ellipsoidal(a) => {
                for j in 0..n {
                    let mut acc = 0.0;
                    for i in 0..n {
                        acc += a[(i, j)] * g[i];
                    }
                    out[j] = s * acc;
                }
            }
        }
    }

    /// The blow-up as a field on the largest ball around 0 mapped into the parent domain.
    pub fn into_field(self) -> ScalarField {
        let n = self.dim();
        let reach = if self.parent.domain.radius.is_infinite() {
            f64::INFINITY
        } else {
            let room = self.parent.domain.radius - crate::util::dist(&self.base, &self.parent.domain.center);
            room / (self.scale * self.map_norm())
        };
        let id = format!("T[{}; x={:?}, r={}]", self.parent.id, self.base, self.scale);
        let domain = Ball::new(vec![0.0; n], reach);
        if let Some(p) = self.poly.clone() {
            let mut f = ScalarField::polynomial(p);
            f.domain = domain;
            f.kind = FieldKind::Blowup;
            f.id = id;
            return f;
        }
        let smooth = self.parent.smoothness;
        ScalarField::from_evaluator(id, Arc::new(self), domain, FieldKind::Blowup, smooth)
    }
}

impl Evaluator for BlowupField {
    fn dim(&self) -> usize {
        self.base.len()
    }
    fn value(&self, y: &[f64]) -> f64 {
        BlowupField::value(self, y)
    }
    fn gradient(&self, y: &[f64], out: &mut [f64]) {
        BlowupField::gradient(self, y, out)
    }
    fn value_grad(&self, y: &[f64], out: &mut [f64]) -> f64 {
        let n = self.dim();
        let mut x = vec![0.0; n];
        self.map_point(y, &mut x);
        let mut g = vec![0.0; n];
        let v = self.parent.value_grad(&x, &mut g);
        self.pull_back_gradient(&g, out);
        (v - self.center_value) / self.norm
    }
}

/// Default sphere rule used for blow-up normalization of non-polynomial fields.
pub fn default_sphere_rule(n: usize) -> SphereRule {
    match n {
        2 => SphereRule::new(2, 64).expect("valid rule"),
        3 => SphereRule::new(3, 16).expect("valid rule"),
        _ => SphereRule::new(n, 8).expect("valid rule"),
    }
}

/// `T_{x,r}u(y) = (u(x+ry) − u(x)) / (⨏_{∂B₁}(u(x+ry) − u(x))²)^{1/2}`.
pub fn blowup_t(u: &ScalarField, x: &[f64], r: f64, rule: &SphereRule) -> Result<BlowupField> {
    build_blowup(u, x, r, BlowupMap::Identity, Normalization::Euclidean, rule, None)
}

/// `T_{x,t}` precomposed with `Q_x⁻¹`, normalized on the Euclidean unit sphere.
pub fn blowup_t_elliptic(
    u: &ScalarField,
    x: &[f64],
    t: f64,
    op: &EllipticOperator,
    rule: &SphereRule,
) -> Result<BlowupField> {
    check_op(u, op)?;
    let chart = MetricChart::new(op, x);
    build_blowup(u, x, t, BlowupMap::Ellipsoidal(chart.q_inv.clone()), Normalization::Euclidean, rule, None)
}

/// `U_{x,t}`: same ellipsoidal rays, normalized in the geodesic sphere average.
pub fn blowup_u(
    u: &ScalarField,
    x: &[f64],
    t: f64,
    op: &EllipticOperator,
    rule: &SphereRule,
) -> Result<BlowupField> {
    check_op(u, op)?;
    let chart = MetricChart::new(op, x);
    build_blowup(
        u,
        x,
        t,
        BlowupMap::Ellipsoidal(chart.q_inv.clone()),
        Normalization::Geodesic,
        rule,
        Some((op, &chart)),
    )
}

fn check_op(u: &ScalarField, op: &EllipticOperator) -> Result<()> {
    if op.dim() != u.dim() {
        return Err(Error::InvalidArgument(format!(
            "operator dimension {} differs from field dimension {}",
            op.dim(),
            u.dim()
        )));
    }
    Ok(())
}

fn build_blowup(
    u: &ScalarField,
    x: &[f64],
    r: f64,
    map: BlowupMap,
    normalization: Normalization,
    rule: &SphereRule,
    geo: Option<(&EllipticOperator, &MetricChart)>,
) -> Result<BlowupField> {
    let n = u.dim();
    if x.len() != n {
        return Err(Error::InvalidArgument("base point dimension mismatch".into()));
    }
    if r.is_nan() || r <= 0.0 {
        return Err(Error::InvalidArgument(format!("blow-up scale must be positive, got {r}")));
    }
    let mut bf = BlowupField {
        parent: u.clone(),
        base: x.to_vec(),
        scale: r,
        map,
        normalization,
        norm: 1.0,
        center_value: u.value(x),
        poly: None,
    };
    u.domain.require_ball(x, r * bf.map_norm())?;

    let mut vals = Vec::with_capacity(rule.len());
    let mut weights = Vec::with_capacity(rule.len());
    let mut p = vec![0.0; n];
    for k in 0..rule.len() {
        bf.map_point(rule.node(k), &mut p);
        vals.push(u.value(&p) - bf.center_value);
        weights.push(match geo {
            Some((op, chart)) => rule.weights[k] * chart.volume_density(op, &p),
            None => rule.weights[k],
        });
    }
    let sup = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let total_w: f64 = weights.iter().sum();
    let quad_denom2 = vals.iter().zip(&weights).map(|(v, w)| v * v * w).sum::<f64>() / total_w;

    let shifted_poly = match (u.poly(), geo) {
        (Some(pu), _) => {
            let a = match &bf.map {
                BlowupMap::Identity => DMatrix::identity(n, n) * r,
                BlowupMap::Ellipsoidal(m) => m * r,
            };
            let q = pu.translate(x).compose_linear(&a);
            let q = q.sub(&MultiIndexPoly::constant(n, q.coeff(&vec![0; n])));
            let scale = q.max_abs_coeff();
            Some(q.pruned(1e-15 * scale))
        }
        _ => None,
    };
    let denom2 = match (&shifted_poly, geo) {
        (Some(q), None) => sphere_inner(q, q),
        _ => quad_denom2,
    };
    if !(denom2 >= DEGENERATE_REL * sup * sup) || denom2 == 0.0 {
        return Err(Error::Degenerate(format!(
            "blow-up denominator vanishes at x={x:?}, r={r} (field is constant on the sphere)"
        )));
    }
    bf.norm = denom2.sqrt();
    bf.poly = shifted_poly.map(|q| q.scale(1.0 / bf.norm));
    Ok(bf)
}

/// Samples on a regular lattice: `values[i₀, …, i_{n−1}]` at `origin + h·i`,
/// row-major with the last index fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct GridData {
    pub dims: Vec<usize>,
    pub h: f64,
    pub origin: Vec<f64>,
    pub values: Vec<f64>,
}

impl GridData {
    pub fn from_fn(dims: Vec<usize>, h: f64, origin: Vec<f64>, f: impl Fn(&[f64]) -> f64) -> Self {
        let n = dims.len();
        let total: usize = dims.iter().product();
        let mut values = Vec::with_capacity(total);
        let mut idx = vec![0usize; n];
        let mut x = vec![0.0; n];
        for _ in 0..total {
            for i in 0..n {
                x[i] = origin[i] + h * idx[i] as f64;
            }
            values.push(f(&x));
            for k in (0..n).rev() {
                idx[k] += 1;
                if idx[k] < dims[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Self { dims, h, origin, values }
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.origin
            .iter()
            .zip(&self.dims)
            .map(|(o, &d)| o + self.h * (d - 1) as f64)
            .collect()
    }

    fn strides(&self) -> Vec<usize> {
        let n = self.dim();
        let mut s = vec![1; n];
        for k in (0..n.saturating_sub(1)).rev() {
            s[k] = s[k + 1] * self.dims[k + 1];
        }
        s
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&(self.dim() as u64).to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&self.h.to_le_bytes())?;
        for &o in &self.origin {
            w.write_all(&o.to_le_bytes())?;
        }
        for &v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut b8 = [0u8; 8];
        let mut next_u64 = |r: &mut dyn Read| -> Result<u64> {
            r.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let n = next_u64(r)? as usize;
        if n == 0 || n > 8 {
            return Err(Error::Parse(format!("grid file dimension {n} out of range")));
        }
        let mut dims = Vec::with_capacity(n);
        for _ in 0..n {
            dims.push(next_u64(r)? as usize);
        }
        let h = f64::from_bits(next_u64(r)?);
        let mut origin = Vec::with_capacity(n);
        for _ in 0..n {
            origin.push(f64::from_bits(next_u64(r)?));
        }
        let total: usize = dims.iter().product();
        let mut values = Vec::with_capacity(total);
        for _ in 0..total {
            values.push(f64::from_bits(next_u64(r)?));
        }
        Ok(Self { dims, h, origin, values })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

/// Tensor-product cubic convolution (Keys, `a = −1/2`), `C¹` and exact on quadratics.
struct GridEval {
    data: GridData,
    strides: Vec<usize>,
}

impl GridEval {
    /// Sample at an index that may lie one step outside the lattice; ghost values
    /// come from quadratic extrapolation along the first offending axis.
    fn sample(&self, idx: &mut [isize]) -> f64 {
        for k in 0..idx.len() {
            let d = self.data.dims[k] as isize;
            let i = idx[k];
            if i < 0 || i >= d {
                let (a, s) = if i < 0 { (0, 1) } else { (d - 1, -1) };
                idx[k] = a;
                let f0 = self.sample(idx);
                idx[k] = a + s;
                let f1 = self.sample(idx);
                idx[k] = a + 2 * s;
                let f2 = self.sample(idx);
                idx[k] = i;
                return 3.0 * f0 - 3.0 * f1 + f2;
            }
        }
        let off: usize = idx.iter().zip(&self.strides).map(|(&i, &s)| i as usize * s).sum();
        self.data.values[off]
    }

    fn locate(&self, x: &[f64]) -> (Vec<isize>, Vec<[f64; 4]>, Vec<[f64; 4]>) {
        let n = self.data.dim();
        let mut base = vec![0isize; n];
        let mut w = vec![[0.0; 4]; n];
        let mut dw = vec![[0.0; 4]; n];
        for k in 0..n {
            let s = (x[k] - self.data.origin[k]) / self.data.h;
            let i = (s.floor() as isize).clamp(0, self.data.dims[k] as isize - 2);
            let t = s - i as f64;
            base[k] = i - 1;
            let (t2, t3) = (t * t, t * t * t);
            w[k] = [
                0.5 * (-t3 + 2.0 * t2 - t),
                0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
                0.5 * (-3.0 * t3 + 4.0 * t2 + t),
                0.5 * (t3 - t2),
            ];
            let ih = 1.0 / self.data.h;
            dw[k] = [
                0.5 * (-3.0 * t2 + 4.0 * t - 1.0) * ih,
                0.5 * (9.0 * t2 - 10.0 * t) * ih,
                0.5 * (-9.0 * t2 + 8.0 * t + 1.0) * ih,
                0.5 * (3.0 * t2 - 2.0 * t) * ih,
            ];
        }
        (base, w, dw)
    }

    fn eval(&self, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let n = self.data.dim();
        let (base, w, dw) = self.locate(x);
        let mut value = 0.0;
        let mut g = vec![0.0; n];
        let want_grad = grad.is_some();
        let mut off = vec![0usize; n];
        let mut idx = vec![0isize; n];
        let count = 4usize.pow(n as u32);
        for _ in 0..count {
            for k in 0..n {
                idx[k] = base[k] + off[k] as isize;
            }
            let f = self.sample(&mut idx);
            let mut prod = 1.0;
            for k in 0..n {
                prod *= w[k][off[k]];
            }
            value += prod * f;
            if want_grad {
                for (d, gd) in g.iter_mut().enumerate() {
                    let mut p = 1.0;
                    for k in 0..n {
                        p *= if k == d { dw[k][off[k]] } else { w[k][off[k]] };
                    }
                    *gd += p * f;
                }
            }
            for k in (0..n).rev() {
                off[k] += 1;
                if off[k] < 4 {
                    break;
                }
                off[k] = 0;
            }
        }
        if let Some(out) = grad {
            out.copy_from_slice(&g);
        }
        value
    }
}

impl Evaluator for GridEval {
    fn dim(&self) -> usize {
        self.data.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x, None)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        self.eval(x, Some(out));
    }
    fn value_grad(&self, x: &[f64], out: &mut [f64]) -> f64 {
        self.eval(x, Some(out))
    }
}

/// `C¹` interpolant of lattice samples. Without an explicit domain, the largest ball
/// inscribed in the lattice box is used.
pub fn grid_field(data: GridData, domain: Option<Ball>) -> Result<ScalarField> {
    let n = data.dim();
    if data.dims.iter().any(|&d| d < 4) {
        return Err(Error::InvalidArgument("grid needs at least 4 samples per axis".into()));
    }
    if data.values.len() != data.dims.iter().product::<usize>() {
        return Err(Error::InvalidArgument("grid payload size does not match dims".into()));
    }
    if !(data.h > 0.0) {
        return Err(Error::InvalidArgument("grid spacing must be positive".into()));
    }
    let lo = data.origin.clone();
    let hi = data.upper();
    let domain = match domain {
        Some(b) => {
            for k in 0..n {
                if b.center[k] - b.radius < lo[k] - 1e-12 || b.center[k] + b.radius > hi[k] + 1e-12 {
                    return Err(Error::InvalidArgument(format!(
                        "lattice [{:?}, {:?}] does not cover the domain ball",
                        lo, hi
                    )));
                }
            }
            b
        }
        None => {
            let center: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
            let radius = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (b - a)).fold(f64::INFINITY, f64::min);
            Ball::new(center, radius)
        }
    };
    let strides = data.strides();
    let id = format!("grid[{:?}, h={}]", data.dims, data.h);
    Ok(ScalarField::from_evaluator(
        id,
        Arc::new(GridEval { data, strides }),
        domain,
        FieldKind::Grid,
        FieldSmoothness::C1Alpha,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn poly(n: usize, s: &str) -> MultiIndexPoly {
        MultiIndexPoly::from_text(n, s).unwrap()
    }

    #[test]
    fn compiled_poly_matches_direct() {
        let p = poly(3, "2 * x1^3 x2; -1.5 * x3^2; 0.25 * x1 x2 x3; 4");
        let c = CompiledPoly::new(&p);
        let x = [0.3, -0.7, 1.1];
        assert_abs_diff_eq!(c.eval(&x), p.eval(&x), epsilon = 1e-14);
        let mut g = [0.0; 3];
        c.eval_grad(&x, &mut g);
        for i in 0..3 {
            assert_abs_diff_eq!(g[i], p.derivative(i).eval(&x), epsilon = 1e-14);
        }
    }

    #[test]
    fn blowup_examples() {
        for n in [2usize, 3] {
            let rule = default_sphere_rule(n);
            let u = ScalarField::polynomial(MultiIndexPoly::variable(n, 0));
            for r in [0.1, 1.0, 3.0] {
                let t = blowup_t(&u, &vec![0.0; n], r, &rule).unwrap();
                let mut y = vec![0.0; n];
                y[0] = 0.7;
                assert_abs_diff_eq!(t.value(&y), (n as f64).sqrt() * 0.7, epsilon = 1e-13);
            }
        }
        let rule = default_sphere_rule(2);
        let p = poly(2, "1 * x1^2; -1 * x2^2");
        let u = ScalarField::polynomial(p.clone());
        let nrm = crate::polyharm::sphere_norm(&p);
        for r in [0.2, 0.5, 2.0] {
            let t = blowup_t(&u, &[0.0, 0.0], r, &rule).unwrap();
            let y = [0.3, 0.4];
            assert_abs_diff_eq!(t.value(&y), p.eval(&y) / nrm, epsilon = 1e-13);
        }
        let c = ScalarField::polynomial(MultiIndexPoly::constant(2, 3.0));
        assert!(matches!(blowup_t(&c, &[0.0, 0.0], 0.5, &rule), Err(Error::Degenerate(_))));
    }

    #[test]
    fn blowup_normalization_and_idempotence() {
        let rule = default_sphere_rule(3);
        let u = ScalarField::polynomial(poly(3, "1 * x1; 0.5 * x1 x2; -0.2 * x3^3"));
        let t = blowup_t(&u, &[0.1, 0.0, -0.1], 0.4, &rule).unwrap();
        let avg = rule.average(&[0.0; 3], 1.0, |y| t.value(y).powi(2));
        assert_abs_diff_eq!(avg.value, 1.0, epsilon = 1e-8);
        assert_eq!(t.value(&[0.0; 3]), 0.0);
        let tf = t.clone().into_field();
        let tt = blowup_t(&tf, &[0.0; 3], 1.0, &rule).unwrap();
        for y in [[0.2, 0.1, -0.3], [0.5, -0.5, 0.1]] {
            assert_abs_diff_eq!(tt.value(&y), t.value(&y), epsilon = 1e-10);
        }
    }

    #[test]
    fn elliptic_blowups() {
        let rule = default_sphere_rule(2);
        let lap = EllipticOperator::laplace(2);
        let u = ScalarField::polynomial(poly(2, "1 * x1 x2; 0.3 * x1"));
        let t = blowup_t(&u, &[0.1, 0.2], 0.3, &rule).unwrap();
        let te = blowup_t_elliptic(&u, &[0.1, 0.2], 0.3, &lap, &rule).unwrap();
        let uu = blowup_u(&u, &[0.1, 0.2], 0.3, &lap, &rule).unwrap();
        for y in [[0.2, 0.1], [-0.5, 0.4]] {
            assert_abs_diff_eq!(t.value(&y), te.value(&y), epsilon = 1e-13);
            assert_abs_diff_eq!(t.value(&y), uu.value(&y), epsilon = 1e-12);
        }

        let op = EllipticOperator::const_anisotropic(&[4.0, 1.0]).unwrap();
        let u = ScalarField::polynomial(poly(2, "0.25 * x1^2; -1 * x2^2"));
        let a = blowup_t_elliptic(&u, &[0.0, 0.0], 0.2, &op, &rule).unwrap();
        let b = blowup_t_elliptic(&u, &[0.0, 0.0], 0.7, &op, &rule).unwrap();
        let pa = a.poly().unwrap();
        assert!(pa.laplacian().max_abs_coeff() < 1e-12);
        assert_eq!(pa.homogeneous_degree(), Some(2));
        let y = [0.3, -0.6];
        assert_abs_diff_eq!(a.value(&y), b.value(&y), epsilon = 1e-13);

        let u = ScalarField::polynomial(MultiIndexPoly::variable(2, 0));
        let a = blowup_t_elliptic(&u, &[0.0, 0.0], 0.2, &op, &rule).unwrap();
        let q = a.poly().unwrap();
        assert_eq!(q.num_terms(), 1);
        assert_abs_diff_eq!(q.coeff(&[1, 0]), 2f64.sqrt(), epsilon = 1e-13);
    }

    #[test]
    fn u_blowup_converges_to_t_elliptic() {
        let rule = default_sphere_rule(2);
        // scalar multiples of I give a constant geodesic weight, so use an anisotropic field
        let op = EllipticOperator::new(
            "aniso",
            2,
            Arc::new(|x: &[f64]| {
                DMatrix::from_row_slice(2, 2, &[1.2 + 0.5 * x[0].abs(), 0.0, 0.0, 1.0 + 0.3 * x[1] * x[1]])
            }),
            1.0,
            crate::operator::Smoothness::Lipschitz,
        );
        let u = ScalarField::polynomial(poly(2, "1 * x1; 0.5 * x1 x2"));
        let lattice: Vec<[f64; 2]> = (0..11)
            .flat_map(|i| (0..11).map(move |j| [-0.5 + 0.1 * i as f64, -0.5 + 0.1 * j as f64]))
            .filter(|y| y[0] * y[0] + y[1] * y[1] <= 0.25)
            .collect();
        let mut prev = f64::INFINITY;
        for t in [0.2, 0.1, 0.05] {
            let a = blowup_u(&u, &[0.3, 0.1], t, &op, &rule).unwrap();
            let b = blowup_t_elliptic(&u, &[0.3, 0.1], t, &op, &rule).unwrap();
            let d = lattice.iter().map(|y| (a.value(y) - b.value(y)).abs()).fold(0.0, f64::max);
            assert!(d < prev, "t={t}: {d} ≥ {prev}");
            prev = d;
        }
    }

    #[test]
    fn grid_examples() {
        let h = 1.0 / 64.0;
        let data = GridData::from_fn(vec![129, 129], h, vec![-1.0, -1.0], |x| x[0] * x[0] - x[1] * x[1]);
        let f = grid_field(data, None).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..41 {
            for j in 0..41 {
                let x = [-0.5 + i as f64 / 40.0, -0.5 + j as f64 / 40.0];
                if x[0] * x[0] + x[1] * x[1] <= 0.25 {
                    worst = worst.max((f.value(&x) - (x[0] * x[0] - x[1] * x[1])).abs());
                }
            }
        }
        assert!(worst <= 1e-3, "{worst}");

        let data = GridData::from_fn(vec![9, 9, 9], 0.25, vec![-1.0; 3], |_| 2.5);
        let f = grid_field(data, None).unwrap();
        assert_abs_diff_eq!(f.value(&[0.1, 0.3, -0.2]), 2.5, epsilon = 1e-14);
        assert!(f.gradient(&[0.1, 0.3, -0.2]).iter().all(|g| g.abs() < 1e-13));

        let data = GridData::from_fn(vec![33, 33], 1.0 / 16.0, vec![-1.0, -1.0], |x| x[0]);
        let f = grid_field(data, None).unwrap();
        let g = f.gradient(&[0.0, 0.0]);
        assert_abs_diff_eq!(g[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(g[1], 0.0, epsilon = 1e-6);

        let tiny = GridData::from_fn(vec![3, 3], 0.5, vec![0.0, 0.0], |_| 0.0);
        assert!(grid_field(tiny, None).is_err());
    }

    #[test]
    fn grid_quadratic_exact_with_ghosts() {
        let data = GridData::from_fn(vec![6, 7], 0.2, vec![0.0, 0.0], |x| 1.0 + x[0] * x[1] - 2.0 * x[1] * x[1]);
        let f = grid_field(data, None).unwrap();
        for x in [[0.05, 0.03], [0.97, 1.15], [0.5, 0.61]] {
            let want = 1.0 + x[0] * x[1] - 2.0 * x[1] * x[1];
            assert_abs_diff_eq!(f.value(&x), want, epsilon = 1e-12);
            let g = f.gradient(&x);
            assert_abs_diff_eq!(g[0], x[1], epsilon = 1e-11);
            assert_abs_diff_eq!(g[1], x[0] - 4.0 * x[1], epsilon = 1e-11);
        }
    }

    #[test]
    fn grid_file_round_trip() {
        let data = GridData::from_fn(vec![5, 6, 4], 0.1, vec![0.5, -0.25, 1.0], |x| x[0] - x[1] * x[2]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.bin");
        data.save(&path).unwrap();
        let back = GridData::load(&path).unwrap();
        assert_eq!(back, data);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 8 * (1 + 3 + 1 + 3 + 5 * 6 * 4));
        assert_eq!(u64::from_le_bytes(bytes[..8].try_into().unwrap()), 3);
    }

    #[test]
    fn gradient_agrees_with_differences() {
        let samples: Vec<Vec<f64>> = vec![vec![0.1, 0.2], vec![-0.3, 0.05], vec![0.2, -0.4]];
        let u = ScalarField::polynomial(poly(2, "1 * x1^3; -3 * x1 x2^2; 0.5 * x2"));
        assert!(u.gradient_fd_error(&samples, 1e-5) < 1e-8);
        let data = GridData::from_fn(vec![65, 65], 1.0 / 32.0, vec![-1.0, -1.0], |x| (x[0] * 2.0).sin() * x[1].exp());
        let g = grid_field(data, None).unwrap();
        assert!(g.gradient_fd_error(&samples, 1e-6) < 1e-6);
    }

    #[test]
    fn presets() {
        let f = ScalarField::from_spec("re-z3", 2).unwrap();
        assert_eq!(f.poly().unwrap().coeff(&[3, 0]), 1.0);
        assert_eq!(f.poly().unwrap().coeff(&[1, 2]), -3.0);
        let f = ScalarField::from_spec("im-z2", 3).unwrap();
        assert_eq!(f.poly().unwrap().coeff(&[1, 1, 0]), 2.0);
        let f = ScalarField::from_spec("poly:1 * x1^2; -1 * x3^2", 3).unwrap();
        assert_eq!(f.dim(), 3);
        assert!(ScalarField::from_spec("x1x2", 1).is_err());
        assert!(ScalarField::from_spec("banana", 2).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn affine_invariance_of_blowups(
                alpha in prop_oneof![-3.0f64..-0.2, 0.2f64..3.0],
                beta in 0.3f64..3.0,
                gamma in -2.0f64..2.0,
                r in 0.1f64..1.0,
            ) {
                let rule = default_sphere_rule(2);
                let u = ScalarField::polynomial(poly(2, "1 * x1; 0.7 * x1 x2; 0.2 * x1^3; -0.6 * x1 x2^2"));
                let w = u.affine_rescale(alpha, beta, gamma).unwrap();
                let tu = blowup_t(&u, &[0.0, 0.0], r, &rule).unwrap();
                let tw = blowup_t(&w, &[0.0, 0.0], r / beta, &rule).unwrap();
                let y = [0.31, -0.42];
                prop_assert!((tw.value(&y) - alpha.signum() * tu.value(&y)).abs() < 1e-10);
            }
        }
    }
}
