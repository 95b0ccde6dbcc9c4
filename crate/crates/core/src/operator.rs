//! Divergence-form elliptic operators `∂_i(a^{ij}∂_j u) + b^i ∂_i u + c u` and the
//! metric geometry of `g = η·a` attached to a base point.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};

pub type MatFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;
pub type VecFn = dyn Fn(&[f64]) -> DVector<f64> + Send + Sync;
pub type ScalarFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Relative finite-difference step for derivatives of Lipschitz coefficients.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Smoothness {
    Constant,
    Lipschitz,
    /// `C^M` coefficients.
    Smooth(u32),
}

/// Coefficient fields with a declared bound `λ`: `(1+λ)⁻¹I ≤ a ≤ (1+λ)I`,
/// `Lip(a^{ij}) ≤ λ`, `|b|, |c| ≤ λ`.
#[derive(Clone)]
pub struct EllipticOperator {
    pub id: String,
    dim: usize,
    a: Arc<MatFn>,
    b: Option<Arc<VecFn>>,
    c: Option<Arc<ScalarFn>>,
    /// Column divergence `(∂_i a^{ij})_j`, when known in closed form.
    div_a: Option<Arc<VecFn>>,
    pub lambda: f64,
    pub smoothness: Smoothness,
}

impl fmt::Debug for EllipticOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EllipticOperator")
            .field("id", &self.id)
            .field("dim", &self.dim)
            .field("lambda", &self.lambda)
            .field("smoothness", &self.smoothness)
            .finish()
    }
}

impl EllipticOperator {
    pub fn new(id: impl Into<String>, dim: usize, a: Arc<MatFn>, lambda: f64, smoothness: Smoothness) -> Self {
        Self {
            id: id.into(),
            dim,
            a,
            b: None,
            c: None,
            div_a: None,
            lambda,
            smoothness,
        }
    }

    pub fn with_b(mut self, b: Arc<VecFn>) -> Self {
        self.b = Some(b);
        self
    }

    pub fn with_c(mut self, c: Arc<ScalarFn>) -> Self {
        self.c = Some(c);
        self
    }

    pub fn with_div_a(mut self, div_a: Arc<VecFn>) -> Self {
        self.div_a = Some(div_a);
        self
    }

    pub fn laplace(n: usize) -> Self {
        Self::constant(n, DMatrix::identity(n, n), "laplace").expect("identity is SPD")
    }

    /// Constant coefficients `a^{ij}`; `λ` is the smallest admissible bound.
    pub fn constant(n: usize, a: DMatrix<f64>, id: &str) -> Result<Self> {
        if a.nrows() != n || a.ncols() != n {
            return Err(Error::InvalidArgument(format!("coefficient matrix must be {n}×{n}")));
        }
        if (&a - a.transpose()).abs().max() > 1e-14 * a.abs().max() {
            return Err(Error::InvalidArgument("coefficient matrix must be symmetric".into()));
        }
        let eig = SymmetricEigen::new(a.clone()).eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        if lo <= 0.0 {
            return Err(Error::InvalidArgument("coefficient matrix must be positive definite".into()));
        }
        let lambda = (hi - 1.0).max(1.0 / lo - 1.0).max(0.0);
        let am = a.clone();
        Ok(Self::new(id, n, Arc::new(move |_| am.clone()), lambda, Smoothness::Constant)
            .with_div_a(Arc::new(move |_| DVector::zeros(n))))
    }

    pub fn const_anisotropic(alphas: &[f64]) -> Result<Self> {
        let n = alphas.len();
        let id = format!(
            "const-anisotropic:{}",
            alphas.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(",")
        );
        Self::constant(n, DMatrix::from_diagonal(&DVector::from_column_slice(alphas)), &id)
    }

    /// `a(x) = (1 + A·(1 − |x − center|)₊)·I`: Lipschitz with constant `A`, not `C¹`
    /// at the center or on the unit sphere around it.
    pub fn lipschitz_bump(amplitude: f64, center: &[f64]) -> Result<Self> {
        if amplitude < 0.0 {
            return Err(Error::InvalidArgument("bump amplitude must be nonnegative".into()));
        }
        let n = center.len();
        let c = center.to_vec();
        let id = format!(
            "lipschitz-bump:{},{}",
            amplitude,
            center.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(",")
        );
        let a = Arc::new(move |x: &[f64]| {
            let d = dist(x, &c);
            DMatrix::identity(n, n) * (1.0 + amplitude * (1.0 - d).max(0.0))
        });
        Ok(Self::new(id, n, a, amplitude, Smoothness::Lipschitz))
    }

    /// Parses `laplace`, `const-anisotropic:a1,..,an`, `lipschitz-bump:A,c1,..,cn`.
    pub fn from_spec(spec: &str, n: usize) -> Result<Self> {
        let (name, args) = spec.split_once(':').unwrap_or((spec, ""));
        let nums = || -> Result<Vec<f64>> {
            args.split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Parse(format!("bad number {s:?} in operator spec {spec:?}")))
                })
                .collect()
        };
        match name.trim() {
            "laplace" => Ok(Self::laplace(n)),
            "const-anisotropic" => {
                let v = nums()?;
                if v.len() != n {
                    return Err(Error::InvalidArgument(format!(
                        "const-anisotropic needs {n} coefficients, got {}",
                        v.len()
                    )));
                }
                Self::const_anisotropic(&v)
            }
            "lipschitz-bump" => {
                let v = nums()?;
                match v.len() {
                    1 => Self::lipschitz_bump(v[0], &vec![0.0; n]),
                    m if m == n + 1 => Self::lipschitz_bump(v[0], &v[1..]),
                    _ => Err(Error::InvalidArgument(format!(
                        "lipschitz-bump needs amplitude and {n} center coordinates"
                    ))),
                }
            }
            other => Err(Error::Parse(format!("unknown operator preset {other:?}"))),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_constant(&self) -> bool {
        self.smoothness == Smoothness::Constant && self.b.is_none() && self.c.is_none()
    }

    pub fn has_lower_order(&self) -> bool {
        self.b.is_some() || self.c.is_some()
    }

    /// Upper-index coefficients `a^{ij}(x)`.
    pub fn a_upper(&self, x: &[f64]) -> DMatrix<f64> {
        (self.a)(x)
    }

    /// Lower-index coefficients `a_{ij}(x)`, the inverse of `a^{ij}(x)`.
    pub fn a_lower(&self, x: &[f64]) -> DMatrix<f64> {
        spd_inverse(&self.a_upper(x))
    }

    pub fn b(&self, x: &[f64]) -> DVector<f64> {
        match &self.b {
            Some(f) => f(x),
            None => DVector::zeros(self.dim),
        }
    }

    pub fn c(&self, x: &[f64]) -> f64 {
        self.c.as_ref().map_or(0.0, |f| f(x))
    }

    /// `(∂_i a^{ij})_j`, closed form if supplied, else central differences.
    pub fn div_a(&self, x: &[f64]) -> DVector<f64> {
        if let Some(f) = &self.div_a {
            return f(x);
        }
        let h = DEFAULT_FD_STEP * norm(x).max(1.0);
        let mut out = DVector::zeros(self.dim);
        let mut xp = x.to_vec();
        for i in 0..self.dim {
            xp[i] = x[i] + h;
            let ap = self.a_upper(&xp);
            xp[i] = x[i] - h;
            let am = self.a_upper(&xp);
            xp[i] = x[i];
            for j in 0..self.dim {
                out[j] += (ap[(i, j)] - am[(i, j)]) / (2.0 * h);
            }
        }
        out
    }

    /// `L u` at `x` for a function given by value, gradient and Hessian.
    pub fn apply(&self, x: &[f64], u: f64, grad: &[f64], hess: &DMatrix<f64>) -> f64 {
        let a = self.a_upper(x);
        let da = self.div_a(x);
        let b = self.b(x);
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += a[(i, j)] * hess[(i, j)];
            }
            s += (da[i] + b[i]) * grad[i];
        }
        s + self.c(x) * u
    }
}

/// Cached quantities at a base point `x̄`.
#[derive(Clone, Debug)]
pub struct MetricChart {
    pub base: Vec<f64>,
    pub a_upper: DMatrix<f64>,
    pub a_lower: DMatrix<f64>,
    /// `Q = sqrt(a_{ij}(x̄))`, so `‖Q(y − x̄)‖ = r(x̄, y)`.
    pub q: DMatrix<f64>,
    pub q_inv: DMatrix<f64>,
    pub det_q_inv: f64,
    constant: bool,
}

impl MetricChart {
    pub fn new(op: &EllipticOperator, base: &[f64]) -> Self {
        let a_upper = op.a_upper(base);
        let eig = SymmetricEigen::new(a_upper.clone());
        let v = &eig.eigenvectors;
        let sq = eig.eigenvalues.map(|l| l.sqrt());
        let q_inv = v * DMatrix::from_diagonal(&sq) * v.transpose();
        let q = v * DMatrix::from_diagonal(&sq.map(|s| 1.0 / s)) * v.transpose();
        let a_lower = v * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l)) * v.transpose();
        Self {
            base: base.to_vec(),
            det_q_inv: sq.iter().product(),
            a_upper,
            a_lower,
            q,
            q_inv,
            constant: op.smoothness == Smoothness::Constant,
        }
    }

    pub fn dim(&self) -> usize {
        self.base.len()
    }

    /// `r(x̄, x)² = a_{ij}(x̄)(x − x̄)^i(x − x̄)^j`.
    pub fn radius(&self, x: &[f64]) -> f64 {
        let d = self.offset(x);
        let w = &self.a_lower * &d;
        w.dot(&d).max(0.0).sqrt()
    }

    fn offset(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.dim(), x.iter().zip(&self.base).map(|(a, b)| a - b))
    }

    /// `η(x̄, x) = a^{kl}(x) ∂_k r ∂_l r`; exactly 1 for constant coefficients and at `x = x̄`.
    pub fn eta(&self, op: &EllipticOperator, x: &[f64]) -> f64 {
        if self.constant {
            return 1.0;
        }
        self.eta_with(&op.a_upper(x), x)
    }

    fn eta_with(&self, a_x: &DMatrix<f64>, x: &[f64]) -> f64 {
        let d = self.offset(x);
        let w = &self.a_lower * &d;
        let r2 = w.dot(&d);
        if r2 <= 0.0 {
            return 1.0;
        }
        (a_x * &w).dot(&w) / r2
    }

    /// `log(√g / η) = (n/2 − 1) log η + ½ log det a_{ij}(x)`.
    fn log_density_over_eta(&self, op: &EllipticOperator, x: &[f64]) -> f64 {
        let a_x = op.a_upper(x);
        let eta = if self.constant { 1.0 } else { self.eta_with(&a_x, x) };
        let n = self.dim() as f64;
        (n / 2.0 - 1.0) * eta.ln() - 0.5 * a_x.determinant().ln()
    }

    /// Riemannian volume density `√(ηⁿ det a_{ij}(x))`.
    pub fn volume_density(&self, op: &EllipticOperator, x: &[f64]) -> f64 {
        let a_x = op.a_upper(x);
        let eta = if self.constant { 1.0 } else { self.eta_with(&a_x, x) };
        (eta.powi(self.dim() as i32) / a_x.determinant()).sqrt()
    }

    /// Drift field `B_i = −a_{ij}(x) b^j + ∂_i log(√g/η)`.
    ///
    /// The derivative uses central differences with step `h`, capped at 1/16 of
    /// `|x − x̄|` because `η` varies on that scale near the base point.
    pub fn drift(&self, op: &EllipticOperator, x: &[f64], h: Option<f64>) -> Result<DVector<f64>> {
        let n = self.dim();
        let dist0 = self.offset(x).norm();
        if dist0 == 0.0 {
            return Err(Error::Precondition("drift is undefined at the base point".into()));
        }
        let mut out = DVector::zeros(n);
        if op.b.is_some() {
            out -= op.a_lower(x) * op.b(x);
        }
        if self.constant {
            return Ok(out);
        }
        let h = h
            .unwrap_or(DEFAULT_FD_STEP * norm(x).max(1.0))
            .min(dist0 / 16.0);
        let mut xp = x.to_vec();
        for i in 0..n {
            let hi = h;
            xp[i] = x[i] + hi;
            let up = xp[i];
            xp[i] = x[i] - hi;
            let dn = xp[i];
            if up == x[i] || dn == x[i] {
                return Err(Error::Precondition(format!("finite-difference step {h:e} underflows at {x:?}")));
            }
            xp[i] = up;
            let fp = self.log_density_over_eta(op, &xp);
            xp[i] = dn;
            let fm = self.log_density_over_eta(op, &xp);
            xp[i] = x[i];
            out[i] += (fp - fm) / (up - dn);
        }
        Ok(out)
    }

    /// `⟨v, w⟩_g = η⁻¹ a^{ij}(x) v_i w_j` on covectors.
    pub fn g_inner(&self, op: &EllipticOperator, x: &[f64], v: &[f64], w: &[f64]) -> f64 {
        let a_x = op.a_upper(x);
        let eta = if self.constant { 1.0 } else { self.eta_with(&a_x, x) };
        let vv = DVector::from_column_slice(v);
        let ww = DVector::from_column_slice(w);
        (&a_x * vv).dot(&ww) / eta
    }

    /// Maps a unit-sphere direction to the point `x̄ + s·Q⁻¹θ`.
    pub fn ray_point(&self, theta: &[f64], s: f64, out: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += self.q_inv[(i, j)] * theta[j];
            }
            out[i] = self.base[i] + s * acc;
        }
    }
}

/// `r(x̄, x)`.
pub fn radius(op: &EllipticOperator, xbar: &[f64], x: &[f64]) -> f64 {
    MetricChart::new(op, xbar).radius(x)
}

/// `η(x̄, x)`.
pub fn eta(op: &EllipticOperator, xbar: &[f64], x: &[f64]) -> f64 {
    MetricChart::new(op, xbar).eta(op, x)
}

/// `B(x̄, x)` with optional finite-difference step.
pub fn drift_b(op: &EllipticOperator, xbar: &[f64], x: &[f64], h: Option<f64>) -> Result<DVector<f64>> {
    MetricChart::new(op, xbar).drift(op, x, h)
}

/// Worst observed values of the structural bounds on a sample lattice.
#[derive(Clone, Debug, Serialize)]
pub struct EllipticityReport {
    pub lambda: f64,
    pub samples: usize,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub max_lipschitz: f64,
    pub max_b: f64,
    pub max_c: f64,
    /// Smallest `λ` satisfying every sampled bound.
    pub required_lambda: f64,
    /// `λ − required`, nonnegative when all bounds hold.
    pub margin: f64,
}

/// Checks the `λ` bounds on a `density`-per-axis lattice of the unit ball.
pub fn ellipticity_check(op: &EllipticOperator, density: usize) -> Result<EllipticityReport> {
    ellipticity_check_on(op, density, &vec![0.0; op.dim], 1.0)
}

pub fn ellipticity_check_on(
    op: &EllipticOperator,
    density: usize,
    center: &[f64],
    radius: f64,
) -> Result<EllipticityReport> {
    let rep = ellipticity_scan(op, density, center, radius)?;
    let tol = 1e-9 * (1.0 + op.lambda);
    let checks = [
        ("lower eigenvalue", rep.min_eigenvalue, 1.0 / (1.0 + op.lambda), false, rep.argmin_eig.clone()),
        ("upper eigenvalue", rep.max_eigenvalue, 1.0 + op.lambda, true, rep.argmax_eig.clone()),
        ("Lipschitz constant", rep.max_lipschitz, op.lambda, true, rep.argmax_lip.clone()),
        ("|b|", rep.max_b, op.lambda, true, rep.argmax_b.clone()),
        ("|c|", rep.max_c, op.lambda, true, rep.argmax_c.clone()),
    ];
    for (bound, value, limit, upper, point) in checks {
        let bad = if upper { value > limit + tol } else { value < limit - tol };
        if bad {
            return Err(Error::Validation {
                bound: bound.into(),
                point,
                value,
                limit,
            });
        }
    }
    Ok(rep.report)
}

struct Scan {
    report: EllipticityReport,
    argmin_eig: Vec<f64>,
    argmax_eig: Vec<f64>,
    argmax_lip: Vec<f64>,
    argmax_b: Vec<f64>,
    argmax_c: Vec<f64>,
}

impl std::ops::Deref for Scan {
    type Target = EllipticityReport;
    fn deref(&self) -> &EllipticityReport {
        &self.report
    }
}

fn ellipticity_scan(op: &EllipticOperator, density: usize, center: &[f64], radius: f64) -> Result<Scan> {
    if density < 2 {
        return Err(Error::InvalidArgument("ellipticity lattice needs at least 2 points per axis".into()));
    }
    let n = op.dim;
    let h = 2.0 * radius / (density - 1) as f64;
    let mut s = Scan {
        report: EllipticityReport {
            lambda: op.lambda,
            samples: 0,
            min_eigenvalue: f64::INFINITY,
            max_eigenvalue: 0.0,
            max_lipschitz: 0.0,
            max_b: 0.0,
            max_c: 0.0,
            required_lambda: 0.0,
            margin: 0.0,
        },
        argmin_eig: center.to_vec(),
        argmax_eig: center.to_vec(),
        argmax_lip: center.to_vec(),
        argmax_b: center.to_vec(),
        argmax_c: center.to_vec(),
    };
    let mut idx = vec![0usize; n];
    let mut x = vec![0.0; n];
    let mut xn = vec![0.0; n];
    loop {
        for i in 0..n {
            x[i] = center[i] - radius + h * idx[i] as f64;
        }
        if dist(&x, center) <= radius * (1.0 + 1e-12) {
            s.report.samples += 1;
            let a = op.a_upper(&x);
            let eig = SymmetricEigen::new(a.clone()).eigenvalues;
            if eig.min() < s.report.min_eigenvalue {
                s.report.min_eigenvalue = eig.min();
                s.argmin_eig = x.clone();
            }
            if eig.max() > s.report.max_eigenvalue {
                s.report.max_eigenvalue = eig.max();
                s.argmax_eig = x.clone();
            }
            for i in 0..n {
                xn.copy_from_slice(&x);
                xn[i] += h;
                if dist(&xn, center) > radius * (1.0 + 1e-12) {
                    continue;
                }
                let an = op.a_upper(&xn);
                let q = (&an - &a).abs().max() / h;
                if q > s.report.max_lipschitz {
                    s.report.max_lipschitz = q;
                    s.argmax_lip = x.clone();
                }
            }
            let b = op.b(&x).norm();
            if b > s.report.max_b {
                s.report.max_b = b;
                s.argmax_b = x.clone();
            }
            let c = op.c(&x).abs();
            if c > s.report.max_c {
                s.report.max_c = c;
                s.argmax_c = x.clone();
            }
        }
        let mut k = 0;
        loop {
            if k == n {
                let r = &mut s.report;
                r.required_lambda = (r.max_eigenvalue - 1.0)
                    .max(1.0 / r.min_eigenvalue - 1.0)
                    .max(r.max_lipschitz)
                    .max(r.max_b)
                    .max(r.max_c)
                    .max(0.0);
                r.margin = r.lambda - r.required_lambda;
                return Ok(s);
            }
            idx[k] += 1;
            if idx[k] < density {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Smallest `λ` consistent with the sampled bounds, without validating the declared one.
pub fn required_lambda(op: &EllipticOperator, density: usize, center: &[f64], radius: f64) -> Result<f64> {
    Ok(ellipticity_scan(op, density, center, radius)?.report.required_lambda)
}

pub(crate) fn spd_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    match a.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => a.clone().try_inverse().unwrap_or_else(|| DMatrix::from_element(a.nrows(), a.ncols(), f64::NAN)),
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}
