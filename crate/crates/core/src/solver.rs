//! Dirichlet solver for `div(a∇u) + b·∇u + cu = f` on a square and a
//! manufactured-operator factory.

use std::sync::Arc;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{grid_field, Ball, GridData, ScalarField};
use crate::operator::{EllipticOperator, Smoothness};
use crate::util::{ball_lattice, linear_fit, norm};

pub type BoundaryFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Axis-aligned cube `center + [−half, half]ⁿ`.
#[derive(Clone, Debug, Serialize)]
pub struct Square {
    pub center: Vec<f64>,
    pub half_width: f64,
}

#[derive(Clone)]
pub struct DirichletProblem {
    pub op: EllipticOperator,
    pub boundary: Arc<BoundaryFn>,
    pub source: Option<Arc<BoundaryFn>>,
    pub domain: Square,
    pub h: f64,
}

impl DirichletProblem {
    /// `L u = 0` on `[−1/2, 1/2]ⁿ` with boundary values `g`.
    pub fn new(op: EllipticOperator, boundary: Arc<BoundaryFn>, h: f64) -> Self {
        let n = op.dim();
        Self {
            op,
            boundary,
            source: None,
            domain: Square {
                center: vec![0.0; n],
                half_width: 0.5,
            },
            h,
        }
    }

    pub fn with_domain(mut self, domain: Square) -> Self {
        self.domain = domain;
        self
    }

    pub fn with_source(mut self, f: Arc<BoundaryFn>) -> Self {
        self.source = Some(f);
        self
    }

    /// Intervals per axis.
    fn intervals(&self) -> Result<usize> {
        if !(self.h > 0.0) {
            return Err(Error::InvalidArgument("grid spacing must be positive".into()));
        }
        let m = 2.0 * self.domain.half_width / self.h;
        let mi = m.round();
        if (m - mi).abs() > 1e-9 * m.max(1.0) || mi < 3.0 {
            return Err(Error::InvalidArgument(format!(
                "h = {} does not divide the domain width {}",
                self.h,
                2.0 * self.domain.half_width
            )));
        }
        Ok(mi as usize)
    }
}

/// Discrete residual bound on `h²`-scaled rows.
pub const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Clone, Debug, Serialize)]
pub struct SolveStats {
    pub unknowns: usize,
    pub residual: f64,
    pub iterations: usize,
    pub method: &'static str,
    pub upwinded_rows: usize,
}

/// Compressed sparse rows.
struct Csr {
    ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl Csr {
    fn rows(&self) -> usize {
        self.ptr.len() - 1
    }

    fn mul(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.rows() {
            let mut s = 0.0;
            for k in self.ptr[i]..self.ptr[i + 1] {
                s += self.val[k] * x[self.col[k]];
            }
            y[i] = s;
        }
    }

    fn diag(&self) -> Vec<f64> {
        (0..self.rows())
            .map(|i| {
                (self.ptr[i]..self.ptr[i + 1])
                    .find(|&k| self.col[k] == i)
                    .map(|k| self.val[k])
                    .unwrap_or(0.0)
            })
            .collect()
    }

    fn residual(&self, x: &[f64], b: &[f64]) -> f64 {
        let mut y = vec![0.0; b.len()];
        self.mul(x, &mut y);
        y.iter().zip(b).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max)
    }
}

fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

struct Assembly {
    matrix: Csr,
    rhs: Vec<f64>,
    /// Full grid values with boundary data filled in.
    full: Vec<f64>,
    /// Unknown index → flat grid index.
    unknown_to_grid: Vec<usize>,
    upwinded: usize,
    bandwidth: usize,
}

fn assemble(p: &DirichletProblem, m: usize) -> Result<Assembly> {
    let n = p.op.dim();
    if p.domain.center.len() != n {
        return Err(Error::InvalidArgument("domain dimension mismatch".into()));
    }
    let h = p.h;
    let side = m + 1;
    let total = side.pow(n as u32);
    let mut stride = vec![1usize; n];
    for k in (0..n.saturating_sub(1)).rev() {
        stride[k] = stride[k + 1] * side;
    }
    let lo: Vec<f64> = p.domain.center.iter().map(|c| c - p.domain.half_width).collect();
    let coords = |flat: usize, out: &mut [f64], idx: &mut [usize]| {
        let mut r = flat;
        for k in 0..n {
            idx[k] = r / stride[k];
            r %= stride[k];
            out[k] = lo[k] + h * idx[k] as f64;
        }
    };
    let mut x = vec![0.0; n];
    let mut idx = vec![0usize; n];
    let mut a_nodes: Vec<f64> = Vec::with_capacity(total * n * n);
    let mut full = vec![0.0; total];
    let mut grid_to_unknown = vec![usize::MAX; total];
    let mut unknown_to_grid = Vec::new();
    let mut off_diagonal = false;
    for flat in 0..total {
        coords(flat, &mut x, &mut idx);
        let a = p.op.a_upper(&x);
        if a.clone().symmetric_eigen().eigenvalues.min() <= 0.0 {
            return Err(Error::Precondition(format!("coefficient matrix not positive definite at {x:?}")));
        }
        for i in 0..n {
            for j in 0..n {
                if i != j && a[(i, j)] != 0.0 {
                    off_diagonal = true;
                }
                a_nodes.push(a[(i, j)]);
            }
        }
        if idx.iter().any(|&i| i == 0 || i == m) {
            full[flat] = (p.boundary)(&x);
        } else {
            grid_to_unknown[flat] = unknown_to_grid.len();
            unknown_to_grid.push(flat);
        }
    }
    let aij = |flat: usize, i: usize, j: usize| a_nodes[flat * n * n + i * n + j];
    let mut ptr = vec![0usize];
    let mut col = Vec::new();
    let mut val = Vec::new();
    let mut rhs = Vec::with_capacity(unknown_to_grid.len());
    let mut upwinded = 0;
    let mut row: Vec<(usize, f64)> = Vec::new();
    let h2 = h * h;
    for &flat in &unknown_to_grid {
        coords(flat, &mut x, &mut idx);
        row.clear();
        let mut diag = 0.0;
        let mut b_rhs = match &p.source {
            Some(f) => h2 * f(&x),
            None => 0.0,
        };
        let push = |g: usize, w: f64, row: &mut Vec<(usize, f64)>, b_rhs: &mut f64| {
            if grid_to_unknown[g] == usize::MAX {
                *b_rhs -= w * full[g];
            } else {
                row.push((grid_to_unknown[g], w));
            }
        };
        let b = p.op.b(&x);
        let mut any_upwind = false;
        for i in 0..n {
            let (gp, gm) = (flat + stride[i], flat - stride[i]);
            let a0 = aij(flat, i, i);
            let ap = harmonic_mean(a0, aij(gp, i, i));
            let am = harmonic_mean(a0, aij(gm, i, i));
            let (mut wp, mut wm) = (ap, am);
            diag -= ap + am;
            let bi = b[i];
            if bi != 0.0 {
                if bi.abs() * h <= 2.0 * a0 {
                    wp += 0.5 * h * bi;
                    wm -= 0.5 * h * bi;
                } else {
                    any_upwind = true;
                    if bi > 0.0 {
                        wp += h * bi;
                        diag -= h * bi;
                    } else {
                        wm -= h * bi;
                        diag += h * bi;
                    }
                }
            }
            push(gp, wp, &mut row, &mut b_rhs);
            push(gm, wm, &mut row, &mut b_rhs);
        }
        if off_diagonal {
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    for (si, sgn_i) in [(1isize, 1.0), (-1, -1.0)] {
                        let gi = (flat as isize + si * stride[i] as isize) as usize;
                        let w = sgn_i * aij(gi, i, j) / 4.0;
                        if w == 0.0 {
                            continue;
                        }
                        push(gi + stride[j], w, &mut row, &mut b_rhs);
                        push(gi - stride[j], -w, &mut row, &mut b_rhs);
                    }
                }
            }
        }
        if p.op.has_lower_order() {
            diag += h2 * p.op.c(&x);
        }
        if any_upwind {
            upwinded += 1;
        }
        let me = grid_to_unknown[flat];
        row.push((me, diag));
        row.sort_by_key(|e| e.0);
        let start = col.len();
        for &(c, w) in row.iter() {
            if col.len() > start && *col.last().expect("nonempty") == c {
                *val.last_mut().expect("nonempty") += w;
            } else {
                col.push(c);
                val.push(w);
            }
        }
        ptr.push(col.len());
        rhs.push(b_rhs);
    }
    let inner = m - 1;
    let bandwidth = if n == 1 { 1 } else { inner.pow(n as u32 - 1) + if off_diagonal { 1 } else { 0 } };
    Ok(Assembly {
        matrix: Csr { ptr, col, val },
        rhs,
        full,
        unknown_to_grid,
        upwinded,
        bandwidth,
    })
}

/// LU without pivoting in band storage; the assembled matrices are diagonally dominant.
fn banded_solve(a: &Csr, rhs: &[f64], bw: usize) -> Result<Vec<f64>> {
    let m = a.rows();
    let width = 2 * bw + 1;
    let mut band = vec![0.0; m * width];
    let at = |i: usize, j: usize| i * width + (j + bw - i);
    for i in 0..m {
        for k in a.ptr[i]..a.ptr[i + 1] {
            let j = a.col[k];
            if j + bw < i || j > i + bw {
                return Err(Error::InvalidArgument("matrix entry outside the band".into()));
            }
            band[at(i, j)] += a.val[k];
        }
    }
    for k in 0..m {
        let piv = band[at(k, k)];
        if !(piv.abs() > 0.0) || !piv.is_finite() {
            return Err(Error::Precondition("zero pivot: indefinite discretization".into()));
        }
        let hi = (k + bw).min(m - 1);
        for i in k + 1..=hi {
            let l = band[at(i, k)] / piv;
            if l == 0.0 {
                continue;
            }
            band[at(i, k)] = l;
            for j in k + 1..=hi {
                band[at(i, j)] -= l * band[at(k, j)];
            }
        }
    }
    let mut y = rhs.to_vec();
    for i in 0..m {
        let lo = i.saturating_sub(bw);
        let mut s = y[i];
        for j in lo..i {
            s -= band[at(i, j)] * y[j];
        }
        y[i] = s;
    }
    for i in (0..m).rev() {
        let hi = (i + bw).min(m - 1);
        let mut s = y[i];
        for j in i + 1..=hi {
            s -= band[at(i, j)] * y[j];
        }
        y[i] = s / band[at(i, i)];
    }
    Ok(y)
}

/// Jacobi-preconditioned BiCGSTAB.
fn bicgstab(a: &Csr, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize)> {
    let m = a.rows();
    let dinv: Vec<f64> = a.diag().iter().map(|d| if *d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let mut x = vec![0.0; m];
    let mut r = b.to_vec();
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; m];
    let mut p = vec![0.0; m];
    let mut y = vec![0.0; m];
    let mut z = vec![0.0; m];
    let mut s = vec![0.0; m];
    let mut t = vec![0.0; m];
    for it in 1..=max_iter {
        let rho1 = dot(&r0, &r);
        if rho1 == 0.0 {
            break;
        }
        let beta = (rho1 / rho) * (alpha / omega);
        for i in 0..m {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = dinv[i] * p[i];
        }
        a.mul(&y, &mut v);
        alpha = rho1 / dot(&r0, &v);
        for i in 0..m {
            s[i] = r[i] - alpha * v[i];
            z[i] = dinv[i] * s[i];
        }
        a.mul(&z, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..m {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        rho = rho1;
        if it % 10 == 0 || r.iter().all(|v| v.abs() <= tol) {
            if a.residual(&x, b) <= tol {
                return Ok((x, it));
            }
        }
        if omega == 0.0 {
            break;
        }
    }
    if a.residual(&x, b) <= tol {
        return Ok((x, max_iter));
    }
    Err(Error::Convergence(format!(
        "BiCGSTAB stalled at residual {:e}",
        a.residual(&x, b)
    )))
}

/// Solves the problem; the result is a grid field on the inscribed ball shrunk by `h`.
pub fn solve(p: &DirichletProblem) -> Result<(ScalarField, SolveStats)> {
    let (data, stats) = solve_grid(p)?;
    let domain = Ball::new(p.domain.center.clone(), p.domain.half_width - p.h);
    let f = grid_field(data, Some(domain))?.with_id(format!("solve[{}; h={}]", p.op.id, p.h));
    Ok((f, stats))
}

/// Solves and returns the raw lattice values.
pub fn solve_grid(p: &DirichletProblem) -> Result<(GridData, SolveStats)> {
    let m = p.intervals()?;
    let n = p.op.dim();
    let asm = assemble(p, m)?;
    let scale = asm.rhs.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let tol = RESIDUAL_TOL * scale;
    let (mut sol, iterations, method) = if n <= 2 {
        (banded_solve(&asm.matrix, &asm.rhs, asm.bandwidth)?, 1, "banded-lu")
    } else {
        let (x, it) = bicgstab(&asm.matrix, &asm.rhs, tol * 0.1, 20_000)?;
        (x, it, "bicgstab")
    };
    let mut residual = asm.matrix.residual(&sol, &asm.rhs);
    if residual > tol && n <= 2 {
        // one step of iterative refinement
        let mut ax = vec![0.0; sol.len()];
        asm.matrix.mul(&sol, &mut ax);
        let r: Vec<f64> = asm.rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let d = banded_solve(&asm.matrix, &r, asm.bandwidth)?;
        for (s, e) in sol.iter_mut().zip(&d) {
            *s += e;
        }
        residual = asm.matrix.residual(&sol, &asm.rhs);
    }
    if residual > tol {
        return Err(Error::Convergence(format!("discrete residual {residual:e} exceeds {tol:e}")));
    }
    let mut full = asm.full;
    for (u, &g) in asm.unknown_to_grid.iter().enumerate() {
        full[g] = sol[u];
    }
    let lo: Vec<f64> = p.domain.center.iter().map(|c| c - p.domain.half_width).collect();
    let data = GridData {
        dims: vec![m + 1; n],
        h: p.h,
        origin: lo,
        values: full,
    };
    Ok((
        data,
        SolveStats {
            unknowns: asm.unknown_to_grid.len(),
            residual: residual / scale,
            iterations,
            method,
            upwinded_rows: asm.upwinded,
        },
    ))
}

/// Sampling density used to bound `b` and check `∇u ≠ 0`.
const MANUFACTURE_PER_AXIS: usize = 41;

/// `(a, b, 0)` with `b = −div(a∇u) ∇u/|∇u|²`, so that `div(a∇u) + b·∇u = 0`.
pub fn manufacture_operator(u: &ScalarField, a: &EllipticOperator, domain: &Ball) -> Result<EllipticOperator> {
    let n = u.dim();
    if a.dim() != n || domain.dim() != n {
        return Err(Error::InvalidArgument("dimension mismatch".into()));
    }
    let samples = ball_lattice(&domain.center, domain.radius * 2f64.sqrt(), MANUFACTURE_PER_AXIS);
    let mut gmin = f64::INFINITY;
    let mut gmax: f64 = 0.0;
    for s in &samples {
        let g = norm(&u.gradient(s));
        gmin = gmin.min(g);
        gmax = gmax.max(g);
    }
    if !(gmin > 1e-8 * gmax.max(1e-300)) {
        return Err(Error::InvalidArgument(format!(
            "∇u vanishes in the domain (min |∇u| = {gmin:e}); b would be unbounded"
        )));
    }
    let uu = u.clone();
    let aa = a.clone();
    let b = Arc::new(move |x: &[f64]| -> DVector<f64> {
        let g = uu.gradient(x);
        let hess = uu.hessian(x);
        let am = aa.a_upper(x);
        let da = aa.div_a(x);
        let mut div = 0.0;
        for i in 0..g.len() {
            div += da[i] * g[i];
            for j in 0..g.len() {
                div += am[(i, j)] * hess[(i, j)];
            }
        }
        let g2: f64 = g.iter().map(|v| v * v).sum();
        DVector::from_iterator(g.len(), g.iter().map(|v| -div * v / g2))
    });
    let mut bmax: f64 = 0.0;
    for s in &samples {
        bmax = bmax.max(b(s).norm());
    }
    let lambda = a.lambda.max(bmax);
    let div_a = {
        let aa = a.clone();
        Arc::new(move |x: &[f64]| aa.div_a(x))
    };
    let smooth = match a.smoothness {
        Smoothness::Constant => Smoothness::Lipschitz,
        s => s,
    };
    let a_fn = {
        let aa = a.clone();
        Arc::new(move |x: &[f64]| aa.a_upper(x))
    };
    Ok(EllipticOperator::new(format!("manufactured[{}; {}]", a.id, u.id), n, a_fn, lambda, smooth)
        .with_b(b)
        .with_div_a(div_a))
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceStudy {
    pub hs: Vec<f64>,
    /// Max nodal error against the exact solution, or successive differences.
    pub errors: Vec<f64>,
    pub slopes: Vec<f64>,
    /// Least-squares slope of `log e` against `log h`; `None` when exact.
    pub order: Option<f64>,
    pub exact: bool,
    pub richardson: bool,
}

/// Errors at or below this level count as exact reproduction.
pub const EXACT_TOL: f64 = 1e-11;

/// Observed order over `≥ 3` spacings. With `exact`, errors are nodal maxima
/// against it; otherwise successive-resolution differences at common nodes.
pub fn convergence_study(
    p: &DirichletProblem,
    hs: &[f64],
    exact: Option<&(dyn Fn(&[f64]) -> f64 + Sync)>,
) -> Result<ConvergenceStudy> {
    if hs.len() < 3 {
        return Err(Error::InvalidArgument("convergence study needs at least 3 resolutions".into()));
    }
    let mut hs: Vec<f64> = hs.to_vec();
    hs.sort_by(|a, b| b.total_cmp(a));
    let grids: Vec<GridData> = hs
        .iter()
        .map(|&h| {
            let q = DirichletProblem { h, ..p.clone() };
            solve_grid(&q).map(|g| g.0)
        })
        .collect::<Result<_>>()?;
    let errors: Vec<f64> = match exact {
        Some(f) => grids
            .iter()
            .map(|g| {
                let e = GridData::from_fn(g.dims.clone(), g.h, g.origin.clone(), f);
                g.values.iter().zip(&e.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            })
            .collect(),
        None => grids
            .windows(2)
            .map(|w| coarse_difference(&w[0], &w[1]))
            .collect::<Result<_>>()?,
    };
    let used_h: Vec<f64> = if exact.is_some() { hs.clone() } else { hs[..hs.len() - 1].to_vec() };
    let exact_flag = errors.iter().all(|&e| e <= EXACT_TOL);
    let slopes: Vec<f64> = errors
        .windows(2)
        .zip(used_h.windows(2))
        .map(|(e, h)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
        .collect();
    let order = if exact_flag {
        None
    } else {
        let lx: Vec<f64> = used_h.iter().map(|h| h.ln()).collect();
        let ly: Vec<f64> = errors.iter().map(|e| e.max(1e-300).ln()).collect();
        Some(linear_fit(&lx, &ly).0)
    };
    Ok(ConvergenceStudy {
        hs,
        errors,
        slopes,
        order,
        exact: exact_flag,
        richardson: exact.is_none(),
    })
}

fn coarse_difference(coarse: &GridData, fine: &GridData) -> Result<f64> {
    let ratio = (coarse.h / fine.h).round() as usize;
    if ratio < 2 || ((coarse.h / fine.h) - ratio as f64).abs() > 1e-9 {
        return Err(Error::InvalidArgument("Richardson study needs nested grids".into()));
    }
    let n = coarse.dim();
    let mut worst: f64 = 0.0;
    let fs: Vec<usize> = {
        let mut s = vec![1usize; n];
        for k in (0..n.saturating_sub(1)).rev() {
            s[k] = s[k + 1] * fine.dims[k + 1];
        }
        s
    };
    let mut idx = vec![0usize; n];
    for c in 0..coarse.values.len() {
        let mut r = c;
        let mut flat = 0;
        for k in (0..n).rev() {
            idx[k] = r % coarse.dims[k];
            r /= coarse.dims[k];
        }
        for k in 0..n {
            flat += idx[k] * ratio * fs[k];
        }
        worst = worst.max((coarse.values[c] - fine.values[flat]).abs());
    }
    Ok(worst)
}
