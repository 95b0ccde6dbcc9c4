//! Frequency functions `N`, `N̄`, `F̄`, `F`, doubling, pinching and monotonicity checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ScalarField, DEGENERATE_REL};
use crate::operator::{EllipticOperator, MetricChart};
use crate::quad::{pairwise_sum, BallRule, SphereRule};

/// Paired sphere and ball rules used for one frequency evaluation.
#[derive(Clone, Debug)]
pub struct Quadrature {
    pub sphere: SphereRule,
    pub ball: BallRule,
    pub order: usize,
}

impl Quadrature {
    /// Rules of resolution `order` (see [`SphereRule::new`] and [`BallRule::new`]).
    pub fn new(n: usize, order: usize) -> Result<Self> {
        let sphere = match n {
            2 => SphereRule::new(2, 2 * order)?,
            _ => SphereRule::new(n, order)?,
        };
        Ok(Self {
            sphere,
            ball: BallRule::new(n, order)?,
            order,
        })
    }

    /// Exact for `u²` and `|∇u|²` when `u` is a polynomial of degree `≤ d`.
    pub fn for_degree(n: usize, d: u32) -> Result<Self> {
        Self::new(n, d as usize + 3)
    }

    /// Polynomial fields get an exact rule; other fields a fixed fine rule.
    pub fn auto(u: &ScalarField) -> Result<Self> {
        let n = u.dim();
        match u.poly().and_then(|p| p.degree()) {
            Some(d) if n <= 3 => Self::for_degree(n, d),
            _ => Self::new(n, default_order(n)),
        }
    }

    /// A strictly finer rule, used to estimate quadrature error.
    pub fn refined(&self) -> Result<Self> {
        let n = self.sphere.dim;
        Self::new(n, self.order + (self.order / 2).max(4))
    }

    pub fn dim(&self) -> usize {
        self.sphere.dim
    }
}

/// Resolution used for non-polynomial fields.
pub fn default_order(n: usize) -> usize {
    match n {
        2 => 32,
        3 => 14,
        _ => 4,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrequencyKind {
    #[serde(rename = "N")]
    N,
    #[serde(rename = "Nbar")]
    NBar,
    #[serde(rename = "Fbar")]
    FBar,
    #[serde(rename = "F")]
    F,
}

impl std::str::FromStr for FrequencyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "N" | "n" => Ok(Self::N),
            "Nbar" | "nbar" => Ok(Self::NBar),
            "Fbar" | "fbar" => Ok(Self::FBar),
            "F" | "f" => Ok(Self::F),
            _ => Err(Error::Parse(format!("unknown frequency kind {s:?}"))),
        }
    }
}

/// Integrals behind one frequency value, all as totals.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct FrequencyParts {
    /// `∫ |∇u|²` (metric norm for elliptic kinds).
    pub d: f64,
    /// `D` plus the drift (or zero-order) term; equals `D` for Euclidean kinds.
    pub i: f64,
    /// `∫_{∂B} (u − shift)²`.
    pub h: f64,
    pub value: f64,
    pub order: usize,
    pub nodes: usize,
}

fn check_point(u: &ScalarField, x: &[f64], r: f64) -> Result<()> {
    if x.len() != u.dim() {
        return Err(Error::InvalidArgument("point dimension mismatch".into()));
    }
    if r.is_nan() || r <= 0.0 {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {r}")));
    }
    u.domain.require_ball(x, r)
}

fn euclidean_parts(u: &ScalarField, x: &[f64], r: f64, shift: Option<f64>, q: &Quadrature) -> Result<FrequencyParts> {
    check_point(u, x, r)?;
    let n = u.dim();
    let s0 = shift.unwrap_or(0.0);
    let sphere = &q.sphere;
    let mut p = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut hv = Vec::with_capacity(sphere.len());
    let mut sup: f64 = 0.0;
    for k in 0..sphere.len() {
        let nd = sphere.node(k);
        for i in 0..n {
            p[i] = x[i] + r * nd[i];
        }
        let v = u.value(&p) - s0;
        sup = sup.max(v.abs());
        hv.push(sphere.weights[k] * v * v);
    }
    let h_avg = pairwise_sum(&hv);
    let ball = &q.ball;
    let mut dv = Vec::with_capacity(ball.len());
    for k in 0..ball.len() {
        let nd = ball.node(k);
        for i in 0..n {
            p[i] = x[i] + r * nd[i];
        }
        u.gradient_into(&p, &mut g);
        dv.push(ball.weights[k] * g.iter().map(|v| v * v).sum::<f64>());
    }
    let d_avg = pairwise_sum(&dv);
    if shift.is_some() {
        if !(h_avg >= DEGENERATE_REL * sup * sup) || h_avg == 0.0 {
            return Err(Error::Degenerate(format!("H vanishes at x={x:?}, r={r}")));
        }
    } else if h_avg == 0.0 {
        return Err(Error::Degenerate(format!("u vanishes on ∂B_{r}({x:?})")));
    }
    let area = crate::quad::sphere_area(n) * r.powi(n as i32 - 1);
    let vol = crate::quad::ball_volume(n) * r.powi(n as i32);
    let d = d_avg * vol;
    let h = h_avg * area;
    Ok(FrequencyParts {
        d,
        i: d,
        h,
        value: r * d / h,
        order: q.order,
        nodes: sphere.len() + ball.len(),
    })
}

/// `N(x,r) = r ∫_{B_r}|∇u|² / ∫_{∂B_r} u²`.
pub fn almgren_n(u: &ScalarField, x: &[f64], r: f64, q: &Quadrature) -> Result<f64> {
    Ok(euclidean_parts(u, x, r, None, q)?.value)
}

pub fn almgren_n_parts(u: &ScalarField, x: &[f64], r: f64, q: &Quadrature) -> Result<FrequencyParts> {
    euclidean_parts(u, x, r, None, q)
}

/// `N̄(x,r)`: `N` of `u − u(x)`.
pub fn normalized_nbar(u: &ScalarField, x: &[f64], r: f64, q: &Quadrature) -> Result<f64> {
    Ok(nbar_parts(u, x, r, q)?.value)
}

pub fn nbar_parts(u: &ScalarField, x: &[f64], r: f64, q: &Quadrature) -> Result<FrequencyParts> {
    let c = u.value(x);
    euclidean_parts(u, x, r, Some(c), q)
}

#[derive(Clone, Copy, PartialEq)]
enum GeoKind {
    Generalized,
    Singular,
}

fn geodesic_parts(
    u: &ScalarField,
    x: &[f64],
    r: f64,
    op: &EllipticOperator,
    q: &Quadrature,
    kind: GeoKind,
) -> Result<FrequencyParts> {
    let n = u.dim();
    if op.dim() != n {
        return Err(Error::InvalidArgument("operator dimension mismatch".into()));
    }
    if x.len() != n {
        return Err(Error::InvalidArgument("point dimension mismatch".into()));
    }
    if r.is_nan() || r <= 0.0 {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {r}")));
    }
    let chart = MetricChart::new(op, x);
    let reach = chart.q_inv.clone().svd(false, false).singular_values.max() * r;
    u.domain.require_ball(x, reach)?;
    let u0 = u.value(x);
    let shift = match kind {
        GeoKind::Generalized => u0,
        GeoKind::Singular => 0.0,
    };

    let sphere = &q.sphere;
    let mut p = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut hv = Vec::with_capacity(sphere.len());
    let mut sup: f64 = 0.0;
    for k in 0..sphere.len() {
        chart.ray_point(sphere.node(k), r, &mut p);
        let v = u.value(&p) - shift;
        sup = sup.max(v.abs());
        hv.push(sphere.weights[k] * v * v * chart.volume_density(op, &p));
    }
    let h_w = pairwise_sum(&hv);
    if !(h_w >= DEGENERATE_REL * sup * sup) || h_w == 0.0 {
        return Err(Error::Degenerate(format!("H vanishes at x={x:?}, r={r}")));
    }

    let ball = &q.ball;
    let mut dv = Vec::with_capacity(ball.len());
    let mut extra = Vec::with_capacity(ball.len());
    let trivial_drift = op.is_constant();
    for k in 0..ball.len() {
        chart.ray_point(ball.node(k), r, &mut p);
        let v = u.value_grad(&p, &mut g) - shift;
        let dens = chart.volume_density(op, &p);
        let w = ball.weights[k] * dens;
        dv.push(w * chart.g_inner(op, &p, &g, &g));
        if trivial_drift {
            continue;
        }
        let b = chart.drift(op, &p, None)?;
        let mut t = v * chart.g_inner(op, &p, b.as_slice(), &g);
        if kind == GeoKind::Singular && op.has_lower_order() {
            t -= v * v * op.c(&p) / chart.eta(op, &p);
        }
        extra.push(w * t);
    }
    let scale_ball = crate::quad::ball_volume(n) * r.powi(n as i32) * chart.det_q_inv;
    let scale_sphere = crate::quad::sphere_area(n) * r.powi(n as i32 - 1) * chart.det_q_inv;
    let d = pairwise_sum(&dv) * scale_ball;
    let i = d + pairwise_sum(&extra) * scale_ball;
    let h = h_w * scale_sphere;
    Ok(FrequencyParts {
        d,
        i,
        h,
        value: r * i / h,
        order: q.order,
        nodes: sphere.len() + ball.len(),
    })
}

/// `F̄(x,r) = r I / H` over geodesic balls of `g = η a`, where
/// `I = ∫ |∇u|²_g + (u − u(x))⟨B, ∇u⟩_g dV_g`.
pub fn generalized_fbar(u: &ScalarField, x: &[f64], r: f64, op: &EllipticOperator, q: &Quadrature) -> Result<f64> {
    Ok(geodesic_parts(u, x, r, op, q, GeoKind::Generalized)?.value)
}

pub fn fbar_parts(u: &ScalarField, x: &[f64], r: f64, op: &EllipticOperator, q: &Quadrature) -> Result<FrequencyParts> {
    geodesic_parts(u, x, r, op, q, GeoKind::Generalized)
}

/// Relative tolerance on `|u(x)|` for the singular frequency precondition.
pub const SINGULAR_TOL: f64 = 1e-8;

/// `F(x,r) = r ∫ (|∇u|²_g + u Δ_g u) dV_g / ∫_{∂B} u² dS_g`, defined when `u(x) = 0`.
pub fn singular_f(u: &ScalarField, x: &[f64], r: f64, op: &EllipticOperator, q: &Quadrature) -> Result<f64> {
    let u0 = u.value(x);
    let g = u.gradient(x);
    let scale = 1.0 + r * crate::util::norm(&g);
    if u0.abs() > SINGULAR_TOL * scale {
        return Err(Error::Precondition(format!(
            "singular frequency needs u(x) = 0, got u(x) = {u0}"
        )));
    }
    Ok(geodesic_parts(u, x, r, op, q, GeoKind::Singular)?.value)
}

/// Sampled frequency values over a geometric radius grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrequencyProfile {
    pub field_id: String,
    pub point: Vec<f64>,
    pub kind: FrequencyKind,
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    /// Per-point tolerance: `max(10·|v − v_refined|, 1e−12·|v|)`.
    pub tolerances: Vec<f64>,
    pub order: usize,
    pub nodes: usize,
    pub op_id: Option<String>,
    /// Constant `C` in `e^{Cr}` used by monotonicity checks.
    pub c_const: f64,
}

impl FrequencyProfile {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("r,value,tolerance\n");
        for ((r, v), t) in self.radii.iter().zip(&self.values).zip(&self.tolerances) {
            s.push_str(&format!("{r},{v},{t}\n"));
        }
        s
    }

    pub fn is_sorted(&self) -> bool {
        self.radii.windows(2).all(|w| w[0] < w[1])
    }
}

/// `count` radii geometrically spaced in `[r_min, r_max]`.
pub fn geometric_radii(r_min: f64, r_max: f64, count: usize) -> Result<Vec<f64>> {
    if !(r_min > 0.0) || r_max < r_min || count == 0 {
        return Err(Error::InvalidArgument(format!(
            "invalid radius range [{r_min}, {r_max}] with {count} points"
        )));
    }
    if count == 1 {
        return Ok(vec![r_max]);
    }
    if r_min == r_max {
        return Err(Error::InvalidArgument("radius grid needs r_min < r_max".into()));
    }
    let ratio = (r_max / r_min).ln();
    Ok((0..count)
        .map(|i| {
            if i + 1 == count {
                r_max
            } else {
                r_min * (ratio * i as f64 / (count - 1) as f64).exp()
            }
        })
        .collect())
}

/// One value of the chosen kind.
pub fn frequency_value(
    u: &ScalarField,
    x: &[f64],
    r: f64,
    kind: FrequencyKind,
    op: Option<&EllipticOperator>,
    q: &Quadrature,
) -> Result<f64> {
    let need_op = || op.ok_or_else(|| Error::InvalidArgument(format!("{kind:?} needs an operator")));
    match kind {
        FrequencyKind::N => almgren_n(u, x, r, q),
        FrequencyKind::NBar => normalized_nbar(u, x, r, q),
        FrequencyKind::FBar => generalized_fbar(u, x, r, need_op()?, q),
        FrequencyKind::F => singular_f(u, x, r, need_op()?, q),
    }
}

/// Profile on `count` geometric radii, with tolerances from a refined rule.
#[allow(clippy::too_many_arguments)]
pub fn profile(
    u: &ScalarField,
    x: &[f64],
    kind: FrequencyKind,
    r_min: f64,
    r_max: f64,
    count: usize,
    op: Option<&EllipticOperator>,
    q: &Quadrature,
) -> Result<FrequencyProfile> {
    let radii = geometric_radii(r_min, r_max, count)?;
    profile_on(u, x, kind, &radii, op, q)
}

pub fn profile_on(
    u: &ScalarField,
    x: &[f64],
    kind: FrequencyKind,
    radii: &[f64],
    op: Option<&EllipticOperator>,
    q: &Quadrature,
) -> Result<FrequencyProfile> {
    let fine = q.refined()?;
    let mut values = Vec::with_capacity(radii.len());
    let mut tolerances = Vec::with_capacity(radii.len());
    for &r in radii {
        let v = frequency_value(u, x, r, kind, op, q)?;
        let vf = frequency_value(u, x, r, kind, op, &fine)?;
        values.push(v);
        tolerances.push((10.0 * (v - vf).abs()).max(1e-12 * v.abs()));
    }
    Ok(FrequencyProfile {
        field_id: u.id.clone(),
        point: x.to_vec(),
        kind,
        radii: radii.to_vec(),
        values,
        tolerances,
        order: q.order,
        nodes: q.sphere.len() + q.ball.len(),
        op_id: op.map(|o| o.id.clone()),
        c_const: 0.0,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Violation {
    pub index: usize,
    pub r_lo: f64,
    pub r_hi: f64,
    /// `e^{C r_lo} v_lo − e^{C r_hi} v_hi`, positive when decreasing.
    pub excess: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MonotonicityReport {
    pub kind: FrequencyKind,
    pub point: Vec<f64>,
    pub c_const: f64,
    pub violations: Vec<Violation>,
    /// `min_i (e^{C r_{i+1}} v_{i+1} − e^{C r_i} v_i)`.
    pub worst_slack: f64,
    pub pass: bool,
}

/// Lists adjacent pairs where `e^{Cr}v` decreases beyond the profile tolerances.
pub fn monotonicity_report(p: &FrequencyProfile, c: f64) -> MonotonicityReport {
    monotonicity_report_with_tol(p, c, 0.0)
}

/// As [`monotonicity_report`], with an additional absolute tolerance.
pub fn monotonicity_report_with_tol(p: &FrequencyProfile, c: f64, abs_tol: f64) -> MonotonicityReport {
    let mut violations = Vec::new();
    let mut worst = f64::INFINITY;
    for i in 0..p.radii.len().saturating_sub(1) {
        let lo = (c * p.radii[i]).exp() * p.values[i];
        let hi = (c * p.radii[i + 1]).exp() * p.values[i + 1];
        let tol = abs_tol + p.tolerances[i].max(p.tolerances[i + 1]);
        worst = worst.min(hi - lo);
        if lo - hi > tol {
            violations.push(Violation {
                index: i,
                r_lo: p.radii[i],
                r_hi: p.radii[i + 1],
                excess: lo - hi,
                tolerance: tol,
            });
        }
    }
    MonotonicityReport {
        kind: p.kind,
        point: p.point.clone(),
        c_const: c,
        pass: violations.is_empty(),
        violations,
        worst_slack: if worst.is_finite() { worst } else { 0.0 },
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DoublingCheck {
    /// `H̄(x, r₂)`.
    pub lhs: f64,
    /// `(r₂/r₁)^{2N̄(x,r₂)} H̄(x, r₁)`.
    pub rhs: f64,
    pub slack: f64,
    pub nbar_r2: f64,
}

/// Doubling for sphere averages `H̄(r) = ⨏_{∂B_r}(u − u(x))²`.
///
/// With averages the homogeneous case is an equality, `H̄ ∝ r^{2d}`.
pub fn doubling_check(u: &ScalarField, x: &[f64], r1: f64, r2: f64, q: &Quadrature) -> Result<DoublingCheck> {
    if !(r1 > 0.0) || r2 < r1 {
        return Err(Error::InvalidArgument(format!("doubling needs 0 < r₁ ≤ r₂, got ({r1}, {r2})")));
    }
    let n = u.dim();
    let p2 = nbar_parts(u, x, r2, q)?;
    let p1 = if r1 == r2 { p2 } else { nbar_parts(u, x, r1, q)? };
    let avg = |p: &FrequencyParts, r: f64| p.h / (crate::quad::sphere_area(n) * r.powi(n as i32 - 1));
    let lhs = avg(&p2, r2);
    let rhs = (r2 / r1).powf(2.0 * p2.value) * avg(&p1, r1);
    Ok(DoublingCheck {
        lhs,
        rhs,
        slack: if r1 == r2 { 0.0 } else { rhs - lhs },
        nbar_r2: p2.value,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct PinchingTable {
    pub point: Vec<f64>,
    pub gamma: f64,
    /// `r_i = γ^{i₀+i}` for `i = 0..=depth`, decreasing.
    pub radii: Vec<f64>,
    pub nbar: Vec<f64>,
    /// `W_i = N̄(r_i) − N̄(r_{i+1})`.
    pub drops: Vec<f64>,
    pub delta: f64,
    pub bad_scales: usize,
    /// `(N̄(x, r_0) − 1)/δ`.
    pub bound: f64,
}

/// Index of the first scale `γ^i` that is at most 1/3.
pub fn first_scale_index(gamma: f64) -> u32 {
    let mut i = 0;
    while gamma.powi(i as i32) > 1.0 / 3.0 + 1e-15 {
        i += 1;
    }
    i
}

/// Per-scale drops of `N̄` on `γ^i`, starting at the first `γ^i ≤ 1/3`.
pub fn pinching_table(
    u: &ScalarField,
    x: &[f64],
    gamma: f64,
    depth: usize,
    delta: f64,
    q: &Quadrature,
) -> Result<PinchingTable> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!("γ must lie in (0,1), got {gamma}")));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument("δ must be positive".into()));
    }
    let i0 = first_scale_index(gamma) as i32;
    let radii: Vec<f64> = (0..=depth as i32).map(|i| gamma.powi(i0 + i)).collect();
    let nbar: Vec<f64> = radii
        .iter()
        .map(|&r| normalized_nbar(u, x, r, q))
        .collect::<Result<_>>()?;
    let drops: Vec<f64> = nbar.windows(2).map(|w| w[0] - w[1]).collect();
    let bad_scales = drops.iter().filter(|&&w| w > delta).count();
    Ok(PinchingTable {
        point: x.to_vec(),
        gamma,
        bound: (nbar[0] - 1.0) / delta,
        radii,
        nbar,
        drops,
        delta,
        bad_scales,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct UniformScan {
    pub lambda_claim: f64,
    pub value_at_unit: f64,
    pub sup: f64,
    pub argmax_point: Vec<f64>,
    pub argmax_radius: f64,
    pub evaluations: usize,
}

/// Lattice resolution for [`uniform_bound_scan`].
#[derive(Clone, Copy, Debug)]
pub struct ScanGrid {
    pub points_per_axis: usize,
    pub radii: usize,
    pub r_min: f64,
}

impl Default for ScanGrid {
    fn default() -> Self {
        Self {
            points_per_axis: 9,
            radii: 8,
            r_min: 1e-3,
        }
    }
}

/// Sup of `N̄` (or `F̄` with an operator) over `x ∈ B_{κ/2}`, `r ∈ [r_min, 1 − κ]`,
/// after confirming `N̄(0,1) ≤ Λ_claim`.
pub fn uniform_bound_scan(
    u: &ScalarField,
    lambda_claim: f64,
    kappa: f64,
    op: Option<&EllipticOperator>,
    grid: ScanGrid,
    q: &Quadrature,
) -> Result<UniformScan> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::InvalidArgument(format!("κ must lie in (0,1), got {kappa}")));
    }
    let n = u.dim();
    let origin = vec![0.0; n];
    let value_at_unit = normalized_nbar(u, &origin, 1.0, q)?;
    if value_at_unit > lambda_claim {
        return Err(Error::Precondition(format!(
            "N̄(0,1) = {value_at_unit} exceeds the claimed bound {lambda_claim}"
        )));
    }
    let radii = geometric_radii(grid.r_min, 1.0 - kappa, grid.radii)?;
    let points = crate::util::ball_lattice(&origin, kappa / 2.0, grid.points_per_axis);
    let mut best = (f64::NEG_INFINITY, origin.clone(), 0.0);
    let mut evaluations = 0;
    for p in &points {
        for &r in &radii {
            let v = match op {
                Some(o) => generalized_fbar(u, p, r, o, q),
                None => normalized_nbar(u, p, r, q),
            };
            let v = match v {
                Ok(v) => v,
                Err(Error::Degenerate(_)) => continue,
                Err(e) => return Err(e),
            };
            evaluations += 1;
            if v > best.0 {
                best = (v, p.clone(), r);
            }
        }
    }
    Ok(UniformScan {
        lambda_claim,
        value_at_unit,
        sup: best.0,
        argmax_point: best.1,
        argmax_radius: best.2,
        evaluations,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Calibration {
    /// Least `C ∈ [0, 64]` removing all violations, `None` if even 64 fails.
    pub c: Option<f64>,
    pub training_size: usize,
    pub violations_at_zero: usize,
    pub violations_at_max: usize,
}

pub const CALIBRATION_MAX_C: f64 = 64.0;

/// Bisection for the least `C` making every profile `e^{Cr}v` nondecreasing.
pub fn calibrate_c(profiles: &[FrequencyProfile], abs_tol: f64) -> Calibration {
    let count = |c: f64| -> usize {
        profiles
            .iter()
            .map(|p| monotonicity_report_with_tol(p, c, abs_tol).violations.len())
            .sum()
    };
    let v0 = count(0.0);
    let vmax = count(CALIBRATION_MAX_C);
    let c = if v0 == 0 {
        Some(0.0)
    } else if vmax > 0 {
        None
    } else {
        let (mut lo, mut hi) = (0.0, CALIBRATION_MAX_C);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if count(mid) == 0 {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo < 1e-6 {
                break;
            }
        }
        Some(hi)
    };
    Calibration {
        c,
        training_size: profiles.len(),
        violations_at_zero: v0,
        violations_at_max: vmax,
    }
}
