//! Quantitative strata, the frequency-decomposition cover, tube volumes and
//! planar critical-point counting.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Matrix2, Vector2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::frequency::{normalized_nbar, Quadrature};
use crate::polyharm::MultiIndexPoly;
use crate::symmetry::{is_symmetric, nonsymmetry};
use crate::util::{ball_lattice, dist, linear_fit};

/// `τ`: cone-splitting gap as a fraction of the refinement radius.
pub const DEFAULT_TAU: f64 = 1.0 / 7.0;

fn unit_ball_volume(k: usize) -> f64 {
    if k == 0 {
        1.0
    } else {
        crate::quad::ball_volume(k)
    }
}

/// Constant `c₀(n,k)` with: points of `B_{γ^{a−1}}` within `τγ^a` of a `k`-plane are
/// covered by `c₀ γ^{−k}` balls of radius `γ^a` centered in the set (packing bound).
pub fn c0(n: usize, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k >= n {
        return c1(n);
    }
    let v = unit_ball_volume(k) * unit_ball_volume(n - k) / unit_ball_volume(n)
        * 2f64.powi(n as i32)
        * 1.5f64.powi(k as i32)
        * (DEFAULT_TAU + 0.5).powi((n - k) as i32);
    v.floor().max(1.0)
}

/// `c₁(n) = 3ⁿ`: centers `γ^a`-separated inside `B_{γ^{a−1}}` number at most `(2/γ + 1)ⁿ`.
pub fn c1(n: usize) -> f64 {
    3f64.powi(n as i32)
}

#[derive(Clone, Debug, Serialize)]
pub struct StrataParams {
    pub k: usize,
    pub eta: f64,
    pub gamma: f64,
    /// Depth `j`.
    pub depth: usize,
    /// `H`/`L` threshold on `𝒩`.
    pub eps: f64,
    pub tau: f64,
    /// Claimed `N̄(0,1)` bound.
    pub lambda: f64,
    pub d_max: u32,
    /// Sample spacing; defaults to `γ^j/4`.
    pub spacing: f64,
    /// Radius of the sampled target ball around the origin.
    pub domain_radius: f64,
    /// True when `γ = c₀^{−2/η}` was unusable and `1/2` was substituted.
    pub gamma_fallback: bool,
}

impl StrataParams {
    /// Defaults: `γ = c₀^{−2/η}` when it lies in `[1/16, 1)`, else `1/2`.
    pub fn new(n: usize, k: usize, eta: f64, depth: usize) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(Error::InvalidArgument("η must be positive".into()));
        }
        if k >= n {
            return Err(Error::InvalidArgument(format!("k must be below n = {n}")));
        }
        let g = c0(n, k).powf(-2.0 / eta);
        let (gamma, fallback) = if (1.0 / 16.0..1.0).contains(&g) { (g, false) } else { (0.5, true) };
        Ok(Self {
            k,
            eta,
            gamma,
            depth,
            eps: 0.02,
            tau: DEFAULT_TAU,
            lambda: 8.0,
            d_max: 4,
            spacing: gamma.powi(depth as i32) / 4.0,
            domain_radius: 0.5,
            gamma_fallback: fallback,
        })
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self.gamma_fallback = false;
        self.spacing = gamma.powi(self.depth as i32) / 4.0;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidArgument(format!("γ must lie in (0,1), got {}", self.gamma)));
        }
        if self.depth == 0 {
            return Err(Error::InvalidArgument("depth must be at least 1".into()));
        }
        if !(self.spacing > 0.0) || self.spacing > self.gamma.powi(self.depth as i32) / 4.0 * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument("sample spacing must be positive and ≤ γ^j/4".into()));
        }
        if !(self.eps >= 0.0 && self.eta > 0.0 && self.tau > 0.0) {
            return Err(Error::InvalidArgument("ε ≥ 0, η > 0, τ > 0 required".into()));
        }
        Ok(())
    }
}

fn effective_d_max(n: usize, k: usize, d_max: u32) -> u32 {
    if n - k.min(n) < 2 {
        d_max.min(1)
    } else {
        d_max
    }
}

/// `x ∈ S^k_{η,r}`: no scale `s ∈ {γ^i ≥ r} ∪ {1}` is `(k+1, η)`-symmetric.
#[allow(clippy::too_many_arguments)]
pub fn stratum_membership(
    u: &ScalarField,
    x: &[f64],
    k: usize,
    eta: f64,
    r: f64,
    gamma: f64,
    d_max: u32,
) -> Result<bool> {
    let n = u.dim();
    if k + 1 > n {
        return Err(Error::InvalidArgument(format!("k + 1 = {} exceeds n = {n}", k + 1)));
    }
    let dm = effective_d_max(n, k + 1, d_max);
    for s in scale_set(gamma, r)? {
        if is_symmetric(u, x, s, k + 1, eta, dm)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `{γ^i : γ^i ≥ r} ∪ {1}`, smallest first.
pub fn scale_set(gamma: f64, r: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0 && gamma < 1.0) || !(r > 0.0) {
        return Err(Error::InvalidArgument("need γ ∈ (0,1) and r > 0".into()));
    }
    let mut s = vec![1.0];
    let mut g = gamma;
    while g >= r * (1.0 - 1e-12) {
        s.push(g);
        g *= gamma;
    }
    s.reverse();
    Ok(s)
}

#[derive(Clone, Debug, Serialize)]
pub struct Partition {
    /// Points with `𝒩 ≥ ε`.
    pub high: Vec<Vec<f64>>,
    /// Points with `𝒩 < ε`.
    pub low: Vec<Vec<f64>>,
}

pub fn classify_hl(u: &ScalarField, points: &[Vec<f64>], r: f64, eps: f64, d_max: u32) -> Result<Partition> {
    let mut out = Partition {
        high: Vec::new(),
        low: Vec::new(),
    };
    for p in points {
        if nonsymmetry(u, p, r, 0, d_max)? >= eps {
            out.high.push(p.clone());
        } else {
            out.low.push(p.clone());
        }
    }
    Ok(out)
}

/// `T^j(x)`: entry `i` (scale `γ^i`, `i = 1..=j`) is 1 iff `𝒩(u,x,γ^i) ≥ ε`.
pub fn scale_tuple(u: &ScalarField, x: &[f64], j: usize, gamma: f64, eps: f64, d_max: u32) -> Result<Vec<u8>> {
    (1..=j)
        .map(|i| Ok(u8::from(nonsymmetry(u, x, gamma.powi(i as i32), 0, d_max)? >= eps)))
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct CoverBall {
    pub level: usize,
    pub center: Vec<f64>,
    pub radius: f64,
    pub tuple: String,
    pub parent: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Refinement {
    pub level: usize,
    pub parent: usize,
    pub bit: u8,
    pub points: usize,
    pub balls: usize,
    pub bound: f64,
    pub within_bound: bool,
    /// Max distance of the class points to the fitted `k`-plane, over `γ^a`.
    pub plane_gap: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PinchingSummary {
    /// `max N̄(x, γ)` over stratum samples.
    pub lambda_top: f64,
    /// Smallest drop `N̄(x,γ^i) − N̄(x,γ^{i+1})` at a tuple entry equal to 1.
    pub delta: Option<f64>,
    /// `(λ_top − 1)/δ`.
    pub bound: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Cover {
    pub params: StrataParams,
    pub levels: Vec<Vec<CoverBall>>,
    pub refinements: Vec<Refinement>,
    /// Level-`j` ball count per tuple class.
    pub class_counts: BTreeMap<String, usize>,
    pub stratum_points: usize,
    pub d_measured: usize,
    pub nonempty_classes: usize,
    /// `Σ_{i≤D} C(j,i)`.
    pub class_bound_binomial: f64,
    /// `j^D`.
    pub class_bound: f64,
    pub total_balls: usize,
    /// `j^D (c₁γ^{−n})^D (c₀γ^{−k})^{j−D}`.
    pub total_bound: f64,
    pub pinching: PinchingSummary,
    pub count_bounds_hold: bool,
    pub proximity_holds: bool,
    pub sound: bool,
}

impl Cover {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cover serializes")
    }

    pub fn to_csv(&self) -> String {
        let n = self.levels.first().and_then(|l| l.first()).map(|b| b.center.len()).unwrap_or(0);
        let mut s = String::from("level,");
        for i in 1..=n {
            s.push_str(&format!("c{i},"));
        }
        s.push_str("radius,tuple\n");
        for lvl in &self.levels {
            for b in lvl {
                s.push_str(&format!("{},", b.level));
                for c in &b.center {
                    s.push_str(&format!("{c},"));
                }
                s.push_str(&format!("{},{}\n", b.radius, b.tuple));
            }
        }
        s
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Greedy cover: among uncovered points pick the center covering most uncovered points.
fn greedy_cover(points: &[Vec<f64>], idx: &[usize], radius: f64) -> Vec<usize> {
    let mut uncovered: Vec<usize> = idx.to_vec();
    let mut centers = Vec::new();
    while !uncovered.is_empty() {
        let mut best = (0usize, uncovered[0]);
        for &c in &uncovered {
            let cnt = uncovered
                .iter()
                .filter(|&&p| dist(&points[p], &points[c]) <= radius)
                .count();
            if cnt > best.0 {
                best = (cnt, c);
            }
        }
        let c = best.1;
        centers.push(c);
        uncovered.retain(|&p| dist(&points[p], &points[c]) > radius);
    }
    centers
}

/// Max distance of points to the best `k`-plane: PCA, then for `k = 0` a
/// minimal-enclosing-ball refinement of the center.
pub fn plane_gap(points: &[Vec<f64>], k: usize) -> f64 {
    if points.len() <= 1 {
        return 0.0;
    }
    let n = points[0].len();
    let m = points.len() as f64;
    let mut c = vec![0.0; n];
    for p in points {
        for i in 0..n {
            c[i] += p[i] / m;
        }
    }
    if k == 0 {
        for it in 1..=400 {
            let far = points
                .iter()
                .max_by(|a, b| dist(a, &c).total_cmp(&dist(b, &c)))
                .expect("nonempty");
            let t = 1.0 / (it as f64 + 1.0);
            for i in 0..n {
                c[i] += t * (far[i] - c[i]);
            }
        }
        return points.iter().map(|p| dist(p, &c)).fold(0.0, f64::max);
    }
    let mut cov: DMatrix<f64> = DMatrix::zeros(n, n);
    for p in points {
        for i in 0..n {
            for j in 0..n {
                cov[(i, j)] += (p[i] - c[i]) * (p[j] - c[j]);
            }
        }
    }
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let dirs: Vec<Vec<f64>> = order[..k.min(n)]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    let plane = crate::polyharm::SymmetrySubspace::span(n, &dirs);
    points
        .iter()
        .map(|p| {
            let w: Vec<f64> = p.iter().zip(&c).map(|(a, b)| a - b).collect();
            plane.distance(&w)
        })
        .fold(0.0, f64::max)
}

/// Frequency-decomposition cover of the sampled stratum `S^k_{η,γ^j} ∩ B_{1/2}`.
pub fn build_cover(u: &ScalarField, params: &StrataParams) -> Result<Cover> {
    params.validate()?;
    let n = u.dim();
    let origin = vec![0.0; n];
    let q = Quadrature::auto(u)?;
    let lam0 = normalized_nbar(u, &origin, 1.0, &q)?;
    if lam0 > params.lambda {
        return Err(Error::Precondition(format!(
            "N̄(0,1) = {lam0} exceeds Λ = {}",
            params.lambda
        )));
    }
    let (gamma, j, k) = (params.gamma, params.depth, params.k);
    let rj = gamma.powi(j as i32);
    let per_axis = (2.0 * params.domain_radius / params.spacing).ceil() as usize + 1;
    let grid = ball_lattice(&origin, params.domain_radius, per_axis);
    let mut pts: Vec<Vec<f64>> = Vec::new();
    for x in grid {
        if stratum_membership(u, &x, k, params.eta, rj, gamma, params.d_max)? {
            pts.push(x);
        }
    }
    let tuples: Vec<Vec<u8>> = pts
        .iter()
        .map(|x| scale_tuple(u, x, j, gamma, params.eps, params.d_max))
        .collect::<Result<_>>()?;

    // pinching along each stratum sample
    let mut lambda_top: f64 = 1.0;
    let mut delta: Option<f64> = None;
    for (x, t) in pts.iter().zip(&tuples) {
        let nb: Vec<f64> = (1..=j + 1)
            .map(|i| normalized_nbar(u, x, gamma.powi(i as i32), &q))
            .collect::<Result<_>>()?;
        lambda_top = lambda_top.max(nb[0]);
        for i in 0..j {
            if t[i] == 1 {
                let w = nb[i] - nb[i + 1];
                delta = Some(delta.map_or(w, |d: f64| d.min(w)));
            }
        }
    }
    let pinch_bound = delta.map(|d| if d > 0.0 { (lambda_top - 1.0) / d } else { f64::INFINITY });

    let mut levels: Vec<Vec<CoverBall>> = vec![vec![CoverBall {
        level: 0,
        center: origin.clone(),
        radius: 1.0,
        tuple: String::new(),
        parent: None,
    }]];
    let mut owner: Vec<usize> = vec![0; pts.len()];
    let mut refinements = Vec::new();
    let (b0, b1) = (c0(n, k) * gamma.powi(-(k as i32)), c1(n) * gamma.powi(-(n as i32)));
    for a in 1..=j {
        let ra = gamma.powi(a as i32);
        let mut next: Vec<CoverBall> = Vec::new();
        let mut next_owner = vec![usize::MAX; pts.len()];
        for (pi, parent) in levels[a - 1].iter().enumerate() {
            for bit in [0u8, 1] {
                let idx: Vec<usize> = (0..pts.len())
                    .filter(|&i| owner[i] == pi && tuples[i][a - 1] == bit)
                    .collect();
                if idx.is_empty() {
                    continue;
                }
                let centers = greedy_cover(&pts, &idx, ra);
                let bound = if bit == 0 { b0 } else { b1 };
                let gap = (bit == 0).then(|| {
                    let sel: Vec<Vec<f64>> = idx.iter().map(|&i| pts[i].clone()).collect();
                    plane_gap(&sel, k) / ra
                });
                refinements.push(Refinement {
                    level: a,
                    parent: pi,
                    bit,
                    points: idx.len(),
                    balls: centers.len(),
                    bound,
                    within_bound: centers.len() as f64 <= bound + 1e-9,
                    plane_gap: gap,
                });
                let tuple = format!("{}{}", parent.tuple, bit);
                let first = next.len();
                for &c in &centers {
                    next.push(CoverBall {
                        level: a,
                        center: pts[c].clone(),
                        radius: ra,
                        tuple: tuple.clone(),
                        parent: Some(pi),
                    });
                }
                for &i in &idx {
                    let o = (0..centers.len())
                        .find(|&m| dist(&pts[i], &pts[centers[m]]) <= ra)
                        .expect("greedy cover covers its points");
                    next_owner[i] = first + o;
                }
            }
        }
        levels.push(next);
        owner = next_owner;
    }

    let mut class_counts: BTreeMap<String, usize> = BTreeMap::new();
    for b in &levels[j] {
        *class_counts.entry(b.tuple.clone()).or_default() += 1;
    }
    let d_measured = tuples.iter().map(|t| t.iter().map(|&b| b as usize).sum()).max().unwrap_or(0);
    let nonempty_classes = class_counts.len();
    let class_bound_binomial: f64 = (0..=d_measured.min(j)).map(|i| binomial(j, i)).sum();
    let class_bound = (j as f64).powi(d_measured as i32);
    let total_balls = levels[j].len();
    let total_bound = class_bound * b1.powi(d_measured as i32) * b0.powi((j - d_measured.min(j)) as i32);
    let sound = pts
        .iter()
        .all(|p| levels[j].iter().any(|b| dist(p, &b.center) <= b.radius));
    let count_bounds_hold = refinements.iter().all(|r| r.within_bound)
        && nonempty_classes as f64 <= class_bound_binomial.min(class_bound.max(1.0))
        && total_balls as f64 <= total_bound.max(1.0);
    let proximity_holds = refinements
        .iter()
        .filter_map(|r| r.plane_gap)
        .all(|g| g <= params.tau);
    Ok(Cover {
        params: params.clone(),
        levels,
        refinements,
        class_counts,
        stratum_points: pts.len(),
        d_measured,
        nonempty_classes,
        class_bound_binomial,
        class_bound,
        total_balls,
        total_bound,
        pinching: PinchingSummary {
            lambda_top,
            delta,
            bound: pinch_bound,
        },
        count_bounds_hold,
        proximity_holds,
        sound,
    })
}

/// `|B_r(S) ∩ B_{R}(0)|` by counting grid cells of the given spacing whose centers
/// lie within `r` of the point set.
pub fn tube_volume(points: &[Vec<f64>], r: f64, spacing: f64, domain_radius: f64) -> Result<f64> {
    if !(spacing > 0.0) || spacing >= r {
        return Err(Error::InvalidArgument(format!("tube spacing {spacing} must be below r = {r}")));
    }
    if points.is_empty() {
        return Ok(0.0);
    }
    let n = points[0].len();
    let m = (2.0 * domain_radius / spacing).ceil() as usize;
    let total = m
        .checked_pow(n as u32)
        .filter(|&t| t <= 1usize << 33)
        .ok_or_else(|| Error::InvalidArgument("tube grid too large".into()))?;
    let mut marked = vec![0u64; total.div_ceil(64)];
    let lo = -domain_radius;
    let center = |c: usize| lo + (c as f64 + 0.5) * spacing;
    let reach = (r / spacing).ceil() as isize + 1;
    let mut idx = vec![0isize; n];
    let mut cellp = vec![0.0; n];
    for p in points {
        let base: Vec<isize> = p.iter().map(|&v| ((v - lo) / spacing).floor() as isize).collect();
        for i in 0..n {
            idx[i] = -reach;
        }
        'walk: loop {
            let mut flat = 0usize;
            let mut inside = true;
            for i in 0..n {
                let c = base[i] + idx[i];
                if c < 0 || c >= m as isize {
                    inside = false;
                    break;
                }
                cellp[i] = center(c as usize);
                flat = flat * m + c as usize;
            }
            if inside && dist(&cellp, p) <= r && crate::util::norm(&cellp) <= domain_radius {
                marked[flat / 64] |= 1u64 << (flat % 64);
            }
            for i in (0..n).rev() {
                idx[i] += 1;
                if idx[i] <= reach {
                    continue 'walk;
                }
                idx[i] = -reach;
            }
            break;
        }
    }
    let count: u64 = marked.iter().map(|w| w.count_ones() as u64).sum();
    Ok(count as f64 * spacing.powi(n as i32))
}

#[derive(Clone, Debug, Serialize)]
pub struct MinkowskiFit {
    /// Decreasing.
    pub radii: Vec<f64>,
    pub volumes: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    /// `n − k − η`.
    pub target: f64,
    pub margin: f64,
    pub empty: bool,
    pub pass: bool,
}

/// Least-squares slope of `log Vol` against `log r`.
pub fn minkowski_fit(volumes: &[(f64, f64)], target: f64, margin: f64) -> Result<MinkowskiFit> {
    if volumes.len() < 4 {
        return Err(Error::InvalidArgument("minkowski_fit needs at least 4 radii".into()));
    }
    let mut v: Vec<(f64, f64)> = volumes.to_vec();
    v.sort_by(|a, b| b.0.total_cmp(&a.0));
    let radii: Vec<f64> = v.iter().map(|p| p.0).collect();
    let vols: Vec<f64> = v.iter().map(|p| p.1).collect();
    if vols.iter().all(|&x| x == 0.0) {
        return Ok(MinkowskiFit {
            radii,
            volumes: vols,
            slope: f64::NAN,
            intercept: f64::NAN,
            target,
            margin,
            empty: true,
            pass: true,
        });
    }
    if vols.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Degenerate("some tube volumes vanish; log fit undefined".into()));
    }
    let lx: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let ly: Vec<f64> = vols.iter().map(|r| r.ln()).collect();
    let (slope, intercept) = linear_fit(&lx, &ly);
    Ok(MinkowskiFit {
        radii,
        volumes: vols,
        slope,
        intercept,
        target,
        margin,
        empty: false,
        pass: slope >= target - margin,
    })
}

/// Grid sample of `C_r(u) ∩ B_R` at the given spacing.
pub fn effective_critical_sample(
    u: &ScalarField,
    r: f64,
    spacing: f64,
    domain_radius: f64,
    cfg: crate::symmetry::LinearityConfig,
) -> Result<Vec<Vec<f64>>> {
    let n = u.dim();
    let per_axis = (2.0 * domain_radius / spacing).round() as usize + 1;
    let grid = ball_lattice(&vec![0.0; n], domain_radius, per_axis);
    let scales = crate::symmetry::default_scales();
    Ok(crate::symmetry::effective_critical_set(u, r, &grid, &scales, cfg)?
        .into_iter()
        .map(|p| p.x)
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct TubeSample {
    pub r: f64,
    pub spacing: f64,
    /// Lattice points tested at this radius.
    pub candidates: usize,
    pub points: Vec<Vec<f64>>,
    pub volume: f64,
}

/// `Vol(B_r(C_r(u)) ∩ B_R)` for each radius, largest first, at spacing `r/4`
/// (capped at `max_spacing`). Since `C_r ⊆ C_{r'}` for `r < r'`, each finer
/// lattice is only tested within `r'` of the previous sample.
pub fn tube_volume_study(
    u: &ScalarField,
    radii: &[f64],
    domain_radius: f64,
    max_spacing: f64,
    cfg: crate::symmetry::LinearityConfig,
) -> Result<Vec<TubeSample>> {
    let n = u.dim();
    let mut radii = radii.to_vec();
    radii.sort_by(|a, b| b.total_cmp(a));
    let scales = crate::symmetry::default_scales();
    let mut out: Vec<TubeSample> = Vec::with_capacity(radii.len());
    for &r in &radii {
        if !(r > 0.0) {
            return Err(Error::InvalidArgument(format!("tube radius must be positive, got {r}")));
        }
        let per_axis = (2.0 * domain_radius / (r / 4.0).min(max_spacing)).ceil() as usize + 1;
        let spacing = 2.0 * domain_radius / (per_axis - 1) as f64;
        let grid = match out.last() {
            None => ball_lattice(&vec![0.0; n], domain_radius, per_axis),
            Some(prev) => lattice_near(&prev.points, prev.r, domain_radius, per_axis),
        };
        let candidates = grid.len();
        let points: Vec<Vec<f64>> = crate::symmetry::effective_critical_set(u, r, &grid, &scales, cfg)?
            .into_iter()
            .map(|p| p.x)
            .collect();
        let volume = tube_volume(&points, r, spacing / 2.0, domain_radius)?;
        out.push(TubeSample {
            r,
            spacing,
            candidates,
            points,
            volume,
        });
    }
    Ok(out)
}

/// Points of `ball_lattice(0, R, m)` within `margin` of some seed.
fn lattice_near(seeds: &[Vec<f64>], margin: f64, radius: f64, m: usize) -> Vec<Vec<f64>> {
    let Some(first) = seeds.first() else {
        return Vec::new();
    };
    let n = first.len();
    let h = 2.0 * radius / (m - 1) as f64;
    let mut keys = std::collections::BTreeSet::new();
    let mut idx = vec![0usize; n];
    for p in seeds {
        let lo: Vec<usize> = p.iter().map(|c| (((c - margin + radius) / h).floor().max(0.0)) as usize).collect();
        let hi: Vec<usize> = p
            .iter()
            .map(|c| (((c + margin + radius) / h).ceil() as usize).min(m - 1))
            .collect();
        idx.copy_from_slice(&lo);
        'odometer: loop {
            let x: Vec<f64> = idx.iter().map(|&i| -radius + h * i as f64).collect();
            if dist(&x, p) <= margin && crate::util::norm(&x) <= radius * (1.0 + 1e-12) {
                keys.insert(idx.clone());
            }
            for k in (0..n).rev() {
                if idx[k] < hi[k] {
                    idx[k] += 1;
                    continue 'odometer;
                }
                idx[k] = lo[k];
            }
            break;
        }
    }
    keys.into_iter()
        .map(|k| k.iter().map(|&i| -radius + h * i as f64).collect())
        .collect()
}

#[derive(Clone, Copy, Debug)]
struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }
    fn add(self, o: Self) -> Self {
        Self {
            lo: self.lo + o.lo,
            hi: self.hi + o.hi,
        }
    }
    fn mul(self, o: Self) -> Self {
        let c = [self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi];
        Self {
            lo: c.iter().copied().fold(f64::INFINITY, f64::min),
            hi: c.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
    fn scale(self, s: f64) -> Self {
        if s >= 0.0 {
            Self {
                lo: self.lo * s,
                hi: self.hi * s,
            }
        } else {
            Self {
                lo: self.hi * s,
                hi: self.lo * s,
            }
        }
    }
    fn powi(self, k: u32) -> Self {
        if k == 0 {
            return Self::point(1.0);
        }
        let (a, b) = (self.lo.powi(k as i32), self.hi.powi(k as i32));
        if k % 2 == 1 {
            Self { lo: a, hi: b }
        } else if self.lo >= 0.0 {
            Self { lo: a, hi: b }
        } else if self.hi <= 0.0 {
            Self { lo: b, hi: a }
        } else {
            Self { lo: 0.0, hi: a.max(b) }
        }
    }
    /// Outward widening to absorb rounding.
    fn widen(self) -> Self {
        let e = 1e-13 * self.lo.abs().max(self.hi.abs()) + 1e-300;
        Self {
            lo: self.lo - e,
            hi: self.hi + e,
        }
    }
    fn contains_zero(self) -> bool {
        self.lo <= 0.0 && self.hi >= 0.0
    }
    fn mid(self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

fn interval_eval(p: &MultiIndexPoly, x: Interval, y: Interval) -> Interval {
    let mut acc = Interval::point(0.0);
    for (e, c) in p.terms() {
        acc = acc.add(x.powi(e[0]).mul(y.powi(e[1])).scale(c));
    }
    acc.widen()
}

const SPLIT: f64 = 0.4870913;

/// A critical point found in the plane.
#[derive(Clone, Debug, Serialize)]
pub struct PlanarCritical {
    pub x: [f64; 2],
    /// Existence and uniqueness certified by the Krawczyk test.
    pub verified: bool,
    /// Winding number of `∇u` around a small box.
    pub index: i32,
    pub residual: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct CriticalSearch {
    /// `[x_lo, x_hi] × [y_lo, y_hi]`.
    pub region: [f64; 4],
    /// Smallest subdivided box width.
    pub min_width: f64,
    /// Points closer than this are merged.
    pub merge_tol: f64,
}

impl Default for CriticalSearch {
    fn default() -> Self {
        Self {
            region: [-0.5, 0.5, -0.5, 0.5],
            min_width: 1e-7,
            merge_tol: 1e-5,
        }
    }
}

fn winding(gx: &MultiIndexPoly, gy: &MultiIndexPoly, c: [f64; 2], h: f64) -> i32 {
    let m = 256;
    let corners = [
        [c[0] - h, c[1] - h],
        [c[0] + h, c[1] - h],
        [c[0] + h, c[1] + h],
        [c[0] - h, c[1] + h],
    ];
    let mut total = 0.0;
    let mut prev: Option<f64> = None;
    for s in 0..4 {
        let (a, b) = (corners[s], corners[(s + 1) % 4]);
        for t in 0..=m {
            let f = t as f64 / m as f64;
            let p = [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])];
            let ang = gy.eval(&p).atan2(gx.eval(&p));
            if let Some(q) = prev {
                let mut d = ang - q;
                while d > std::f64::consts::PI {
                    d -= 2.0 * std::f64::consts::PI;
                }
                while d < -std::f64::consts::PI {
                    d += 2.0 * std::f64::consts::PI;
                }
                total += d;
            }
            prev = Some(ang);
        }
    }
    (total / (2.0 * std::f64::consts::PI)).round() as i32
}

/// Critical points of a planar polynomial field: interval exclusion, Krawczyk
/// certification, Newton polish and a winding-number index per cluster.
pub fn count_critical_2d(u: &ScalarField, search: CriticalSearch) -> Result<Vec<PlanarCritical>> {
    if u.dim() != 2 {
        return Err(Error::InvalidArgument("count_critical_2d needs a planar field".into()));
    }
    let p = u
        .poly()
        .ok_or_else(|| Error::Unsupported("critical counting needs a polynomial field".into()))?;
    let gx = p.derivative(0);
    let gy = p.derivative(1);
    let hxx = gx.derivative(0);
    let hxy = gx.derivative(1);
    let hyy = gy.derivative(1);
    let jac = |x: &[f64]| Matrix2::new(hxx.eval(x), hxy.eval(x), hxy.eval(x), hyy.eval(x));
    let [x0, x1, y0, y1] = search.region;
    let pad = search.min_width;
    let mut stack = vec![(Interval { lo: x0 - pad, hi: x1 + pad }, Interval { lo: y0 - pad, hi: y1 + pad })];
    let mut verified: Vec<[f64; 2]> = Vec::new();
    let mut unresolved: Vec<[f64; 2]> = Vec::new();
    let mut guard = 0usize;
    while let Some((bx, by)) = stack.pop() {
        guard += 1;
        if guard > 4_000_000 {
            return Err(Error::Convergence("critical point subdivision exceeded its budget".into()));
        }
        let fx = interval_eval(&gx, bx, by);
        let fy = interval_eval(&gy, bx, by);
        if !fx.contains_zero() || !fy.contains_zero() {
            continue;
        }
        let w = (bx.hi - bx.lo).max(by.hi - by.lo);
        if w <= 0.25 {
            // Krawczyk: K = c − Y f(c) + (I − Y J(X))(X − c)
            let c = [bx.mid(), by.mid()];
            if let Some(y) = jac(&c).try_inverse() {
                let jx = [
                    [interval_eval(&hxx, bx, by), interval_eval(&hxy, bx, by)],
                    [interval_eval(&hxy, bx, by), interval_eval(&hyy, bx, by)],
                ];
                let f = Vector2::new(gx.eval(&c), gy.eval(&c));
                let yf = y * f;
                let dx = [
                    Interval { lo: bx.lo - c[0], hi: bx.hi - c[0] },
                    Interval { lo: by.lo - c[1], hi: by.hi - c[1] },
                ];
                let mut k = [Interval::point(c[0] - yf[0]), Interval::point(c[1] - yf[1])];
                for i in 0..2 {
                    for jj in 0..2 {
                        let mut m = Interval::point(if i == jj { 1.0 } else { 0.0 });
                        for l in 0..2 {
                            m = m.add(jx[l][jj].scale(-y[(i, l)]));
                        }
                        k[i] = k[i].add(m.mul(dx[jj]));
                    }
                    k[i] = k[i].widen();
                }
                let inside = k[0].lo > bx.lo && k[0].hi < bx.hi && k[1].lo > by.lo && k[1].hi < by.hi;
                let disjoint = k[0].hi < bx.lo || k[0].lo > bx.hi || k[1].hi < by.lo || k[1].lo > by.hi;
                if disjoint {
                    continue;
                }
                if inside {
                    let mut z = Vector2::new(c[0], c[1]);
                    for _ in 0..60 {
                        let zz = [z[0], z[1]];
                        let f = Vector2::new(gx.eval(&zz), gy.eval(&zz));
                        match jac(&zz).try_inverse() {
                            Some(inv) => z -= inv * f,
                            None => break,
                        }
                    }
                    verified.push([z[0], z[1]]);
                    continue;
                }
            }
        }
        if w <= search.min_width {
            unresolved.push([bx.mid(), by.mid()]);
            continue;
        }
        // off-center split keeps symmetric roots away from box edges
        let (mx, my) = (bx.lo + SPLIT * (bx.hi - bx.lo), by.lo + SPLIT * (by.hi - by.lo));
        for (ax, ay) in [
            (Interval { lo: bx.lo, hi: mx }, Interval { lo: by.lo, hi: my }),
            (Interval { lo: mx, hi: bx.hi }, Interval { lo: by.lo, hi: my }),
            (Interval { lo: bx.lo, hi: mx }, Interval { lo: my, hi: by.hi }),
            (Interval { lo: mx, hi: bx.hi }, Interval { lo: my, hi: by.hi }),
        ] {
            stack.push((ax, ay));
        }
    }

    let mut out: Vec<PlanarCritical> = Vec::new();
    let merge = search.merge_tol;
    for v in verified {
        if out.iter().any(|c| dist(&c.x, &v) <= merge) {
            continue;
        }
        out.push(PlanarCritical {
            x: v,
            verified: true,
            index: 0,
            residual: (gx.eval(&v).powi(2) + gy.eval(&v).powi(2)).sqrt(),
        });
    }
    // unresolved tiny boxes: cluster, then polish each cluster center
    let mut clusters: Vec<Vec<[f64; 2]>> = Vec::new();
    for b in unresolved {
        match clusters.iter_mut().find(|c| c.iter().any(|q| dist(q, &b) <= merge)) {
            Some(c) => c.push(b),
            None => clusters.push(vec![b]),
        }
    }
    for c in clusters {
        let m = c.len() as f64;
        let mut z = [c.iter().map(|p| p[0]).sum::<f64>() / m, c.iter().map(|p| p[1]).sum::<f64>() / m];
        let spread = c.iter().map(|p| dist(p, &z)).fold(0.0, f64::max);
        for _ in 0..200 {
            let f = Vector2::new(gx.eval(&z), gy.eval(&z));
            let step = match jac(&z).try_inverse() {
                Some(inv) => inv * f,
                None => break,
            };
            if !(step.norm() <= 10.0 * (spread + search.min_width)) {
                break;
            }
            z = [z[0] - step[0], z[1] - step[1]];
        }
        if out.iter().any(|o| dist(&o.x, &z) <= merge) {
            continue;
        }
        out.push(PlanarCritical {
            x: z,
            verified: false,
            index: 0,
            residual: (gx.eval(&z).powi(2) + gy.eval(&z).powi(2)).sqrt(),
        });
    }
    let tol = search.min_width * 4.0;
    out.retain(|c| c.x[0] >= x0 - tol && c.x[0] <= x1 + tol && c.x[1] >= y0 - tol && c.x[1] <= y1 + tol);
    let sep = out
        .iter()
        .enumerate()
        .flat_map(|(i, a)| out[i + 1..].iter().map(move |b| dist(&a.x, &b.x)))
        .fold(f64::INFINITY, f64::min);
    let h = (sep / 3.0).min(1e-2).max(search.min_width * 8.0);
    for c in &mut out {
        c.index = winding(&gx, &gy, c.x, h);
    }
    out.sort_by(|a, b| a.x[0].total_cmp(&b.x[0]).then(a.x[1].total_cmp(&b.x[1])));
    Ok(out)
}

/// Keeps points with `|u − level| ≤ tol`.
pub fn singular_restrict(u: &ScalarField, points: &[Vec<f64>], level: f64, tol: f64) -> Vec<Vec<f64>> {
    points
        .iter()
        .filter(|p| (u.value(p) - level).abs() <= tol)
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::planar_power;
    use approx::assert_relative_eq;

    fn field(n: usize, s: &str) -> ScalarField {
        ScalarField::polynomial(MultiIndexPoly::from_text(n, s).unwrap())
    }

    #[test]
    fn constants() {
        assert_eq!(c0(2, 0), 1.0);
        assert_eq!(c1(2), 9.0);
        assert!(c0(3, 1) >= 1.0);
        let p = StrataParams::new(2, 0, 0.1, 6).unwrap();
        assert!(p.gamma_fallback);
        assert_eq!(p.gamma, 0.5);
        assert_eq!(p.spacing, 1.0 / 256.0);
    }

    #[test]
    fn membership_examples() {
        let u = field(2, "1 * x1");
        assert!(!stratum_membership(&u, &[0.0, 0.0], 0, 0.1, 1.0 / 64.0, 0.5, 4).unwrap());
        let u = field(2, "1 * x1^2; -1 * x2^2");
        assert!(stratum_membership(&u, &[0.0, 0.0], 0, 0.1, 1.0 / 64.0, 0.5, 4).unwrap());
        let far = [0.3, 0.1];
        assert!(!stratum_membership(&u, &far, 0, 0.1, 1.0 / 64.0, 0.5, 4).unwrap());
        // monotone inclusion: smaller η and larger r keep membership
        for x in [[0.001, 0.0], [0.01, 0.004], [0.05, 0.0]] {
            if stratum_membership(&u, &x, 0, 0.2, 1.0 / 64.0, 0.5, 4).unwrap() {
                assert!(stratum_membership(&u, &x, 0, 0.1, 1.0 / 16.0, 0.5, 4).unwrap());
            }
        }
        assert_eq!(scale_set(0.5, 0.2).unwrap(), vec![0.25, 0.5, 1.0]);
    }

    #[test]
    fn hl_examples() {
        let u = field(2, "1 * x1^2; -1 * x2^2");
        let pts = vec![vec![0.0, 0.0], vec![0.2, 0.1], vec![-0.3, 0.25]];
        let all_h = classify_hl(&u, &pts, 0.1, 0.0, 4).unwrap();
        assert_eq!(all_h.high.len(), 3);
        let all_l = classify_hl(&u, &pts, 0.1, 1e6, 4).unwrap();
        assert_eq!(all_l.low.len(), 3);
        let p = classify_hl(&u, &pts, 0.1, 0.01, 4).unwrap();
        assert!(p.low.contains(&vec![0.0, 0.0]));
    }

    #[test]
    fn tuples() {
        let u = field(2, "1 * x1^2; -1 * x2^2");
        assert!(scale_tuple(&u, &[0.0, 0.0], 6, 0.5, 0.02, 4).unwrap().iter().all(|&b| b == 0));
        let u = field(2, "1 * x1; 1 * x1 x2");
        let t6 = scale_tuple(&u, &[0.0, 0.0], 6, 0.5, 0.005, 4).unwrap();
        let t8 = scale_tuple(&u, &[0.0, 0.0], 8, 0.5, 0.005, 4).unwrap();
        assert_eq!(&t8[..6], &t6[..]);
        let ones: usize = t8.iter().map(|&b| b as usize).sum();
        assert!(ones >= 1 && ones < 8, "{t8:?}");
    }

    #[test]
    fn trivial_cover() {
        let u = field(2, "1 * x1");
        let p = StrataParams::new(2, 0, 0.1, 3).unwrap();
        let p = StrataParams {
            spacing: 1.0 / 32.0,
            ..p
        };
        let c = build_cover(&u, &p).unwrap();
        assert_eq!(c.stratum_points, 0);
        assert_eq!(c.total_balls, 0);
        assert!(c.sound && c.count_bounds_hold);
    }

    #[test]
    fn cover_concentrates() {
        let (re2, _) = planar_power(2);
        let u = ScalarField::polynomial(re2);
        let p = StrataParams::new(2, 0, 0.1, 4).unwrap();
        let c = build_cover(&u, &p).unwrap();
        assert!(c.stratum_points > 0);
        assert!(c.sound);
        assert!(c.count_bounds_hold, "{:?}", c.refinements);
        assert!(c.total_balls <= 4);
        let far = c.levels[4].iter().map(|b| crate::util::norm(&b.center)).fold(0.0, f64::max);
        assert!(far < 0.1);
        if let Some(b) = c.pinching.bound {
            assert!(c.d_measured as f64 <= b);
        }
        assert!(c.to_csv().lines().count() > 1);
        assert!(c.to_json().contains("class_counts"));
    }

    #[test]
    fn nested_tube_study() {
        let (re2, _) = planar_power(2);
        let u = ScalarField::polynomial(re2);
        let cfg = crate::symmetry::LinearityConfig {
            c1_per_axis: 17,
            holder_per_axis: 17,
            alpha: 0.5,
        };
        let study = tube_volume_study(&u, &[0.125, 0.0625, 0.25], 0.5, 1.0 / 32.0, cfg).unwrap();
        assert_eq!(study.iter().map(|s| s.r).collect::<Vec<_>>(), vec![0.25, 0.125, 0.0625]);
        assert!(study[2].candidates < ball_lattice(&[0.0, 0.0], 0.5, 65).len());
        let flat = effective_critical_sample(&u, 0.0625, study[2].spacing, 0.5, cfg).unwrap();
        assert_eq!(flat.len(), study[2].points.len());
        assert!(study.windows(2).all(|w| w[0].volume >= w[1].volume));
    }

    #[test]
    fn tube_examples() {
        let v = tube_volume(&[vec![0.0, 0.0]], 0.125, 1.0 / 512.0, 0.5).unwrap();
        assert_relative_eq!(v, std::f64::consts::PI / 64.0, max_relative = 0.05);
        let seg: Vec<Vec<f64>> = (0..=200).map(|i| vec![-0.2 + 0.4 * i as f64 / 200.0, 0.0]).collect();
        let v = tube_volume(&seg, 0.05, 1.0 / 512.0, 0.5).unwrap();
        assert_relative_eq!(v, 2.0 * 0.4 * 0.05 + std::f64::consts::PI * 0.0025, max_relative = 0.05);
        assert!(tube_volume(&seg, 0.01, 0.01, 0.5).is_err());
        assert_eq!(tube_volume(&[], 0.1, 0.01, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn minkowski_examples() {
        let disks: Vec<(f64, f64)> =
            [0.2, 0.1, 0.05, 0.025].iter().map(|&r| (r, std::f64::consts::PI * r * r)).collect();
        let f = minkowski_fit(&disks, 2.0, 0.0).unwrap();
        assert_relative_eq!(f.slope, 2.0, epsilon = 1e-12);
        let cyl: Vec<(f64, f64)> = [0.1, 0.05, 0.025, 0.0125]
            .iter()
            .map(|&r| (r, 2.0 * 0.4 * r + std::f64::consts::PI * r * r))
            .collect();
        assert!(minkowski_fit(&cyl, 1.0, 0.0).unwrap().slope >= 1.0);
        let empty = minkowski_fit(&[(0.1, 0.0), (0.05, 0.0), (0.02, 0.0), (0.01, 0.0)], 2.0, 0.3).unwrap();
        assert!(empty.empty && empty.pass);
        assert!(minkowski_fit(&disks[..3], 2.0, 0.0).is_err());
    }

    #[test]
    fn critical_examples() {
        let (re3, _) = planar_power(3);
        let c = count_critical_2d(&ScalarField::polynomial(re3), CriticalSearch::default()).unwrap();
        assert_eq!(c.len(), 1);
        assert!(crate::util::norm(&c[0].x) < 1e-5);
        assert_eq!(c[0].index, -2);
        let u = field(2, "1 * x1^2; -1 * x2^2; 1 * x1");
        let c = count_critical_2d(&u, CriticalSearch::default()).unwrap();
        assert_eq!(c.len(), 1);
        assert!(dist(&c[0].x, &[-0.5, 0.0]) < 1e-9);
        assert_eq!(c[0].index, -1);
        let (re4, _) = planar_power(4);
        let u = ScalarField::polynomial(re4.add(&MultiIndexPoly::from_text(2, "0.1 * x1").unwrap()));
        let c = count_critical_2d(&u, CriticalSearch::default()).unwrap();
        assert!(c.len() <= 9);
        assert_eq!(c.len(), 3);
        assert!(c.iter().all(|p| p.verified && p.index == -1), "{c:?}");
    }

    #[test]
    fn restrict_examples() {
        let pts = vec![vec![0.0, 0.0]];
        let u = field(2, "1 * x1^2; -1 * x2^2");
        assert_eq!(singular_restrict(&u, &pts, 0.0, 1e-12).len(), 1);
        let u = field(2, "1 * x1^2; -1 * x2^2; 1");
        assert!(singular_restrict(&u, &pts, 0.0, 1e-12).is_empty());
        assert_eq!(singular_restrict(&u, &pts, 0.0, f64::INFINITY).len(), 1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn tube_monotone_in_r(x in -0.3f64..0.3, y in -0.3f64..0.3, r in 0.02f64..0.1) {
                let pts = vec![vec![x, y], vec![-y, x]];
                let a = tube_volume(&pts, r, 1.0 / 256.0, 0.5).unwrap();
                let b = tube_volume(&pts, 1.5 * r, 1.0 / 256.0, 0.5).unwrap();
                prop_assert!(a <= b);
            }

            #[test]
            fn critical_count_bound(d in 2u32..6, eps in 0.0f64..0.2) {
                let (re, _) = planar_power(d);
                let u = ScalarField::polynomial(re.add(&MultiIndexPoly::from_text(2, &format!("{eps} * x1")).unwrap()));
                let c = count_critical_2d(&u, CriticalSearch::default()).unwrap();
                prop_assert!(c.len() <= ((d - 1) * (d - 1)) as usize);
            }
        }
    }
}
