//! Subcommand parameters and runners.

use std::sync::Arc;

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use freqstrat::field::{Ball, GridData, ScalarField};
use freqstrat::frequency::{self, FrequencyKind, FrequencyProfile, Quadrature};
use freqstrat::operator::EllipticOperator;
use freqstrat::polyharm::{random_harmonic_sum, MultiIndexPoly};
use freqstrat::solver::{self, DirichletProblem, Square};
use freqstrat::stratify::{self, CriticalSearch, StrataParams};
use freqstrat::symmetry::{self, LinearityConfig};
use freqstrat::util::ball_lattice;

use crate::artifacts::{PlotKind, Run};
use crate::config::{CliError, CliResult, Context};

/// Field specs: library presets (`x1`, `x1x2`, `re-z<d>`, `im-z<d>`, `poly:<terms>`,
/// `grid:<path>`) plus `random-harmonic:<d1>+<d2>+...`, drawn from the run seed.
pub fn load_field(spec: &str, n: usize, seed: u64) -> CliResult<ScalarField> {
    if let Some(body) = spec.strip_prefix("random-harmonic:") {
        let degrees: Vec<u32> = body
            .split('+')
            .map(|d| d.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::Config(format!("bad degree list in field spec {spec:?}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_harmonic_sum(n, &degrees, &mut rng).ctx("polyharm")?;
        return Ok(ScalarField::polynomial(p).with_id(format!("{spec}#seed={seed}")));
    }
    let f = ScalarField::from_spec(spec, n).ctx("field")?;
    if f.dim() != n {
        return Err(CliError::Config(format!(
            "field {spec:?} has dimension {}, but dim = {n}",
            f.dim()
        )));
    }
    Ok(f)
}

fn load_op(spec: &str, n: usize) -> CliResult<EllipticOperator> {
    EllipticOperator::from_spec(spec, n).ctx("operator")
}

fn quadrature(u: &ScalarField, order: Option<usize>, run: &mut Run) -> CliResult<Quadrature> {
    let q = match order {
        Some(o) => Quadrature::new(u.dim(), o),
        None => Quadrature::auto(u),
    }
    .ctx("quadrature")?;
    run.quadrature(q.order);
    Ok(q)
}

fn point(p: &[f64], n: usize) -> CliResult<Vec<f64>> {
    if p.is_empty() {
        return Ok(vec![0.0; n]);
    }
    if p.len() != n {
        return Err(CliError::Config(format!("point has {} coordinates, dim = {n}", p.len())));
    }
    Ok(p.to_vec())
}

fn req<T: Clone>(v: &Option<T>, name: &str) -> CliResult<T> {
    v.clone().ok_or_else(|| CliError::Config(format!("missing required parameter `{name}`")))
}

/// Declares a parameter struct whose every field is optional on the command line
/// and in the file; `defaults()` fills the documented defaults.
macro_rules! params {
    ($(#[$m:meta])* $name:ident { $($(#[$fm:meta])* $field:ident : $ty:ty = $def:expr),* $(,)? }) => {
        $(#[$m])*
        #[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct $name {
            $($(#[$fm])* #[serde(skip_serializing_if = "Option::is_none")] pub $field: Option<$ty>,)*
        }
        impl $name {
            pub fn defaults() -> Self {
                Self { $($field: $def,)* }
            }
        }
    };
}

params!(FreqScan {
    /// Field spec.
    #[arg(long)] field: String = None,
    #[arg(long)] dim: usize = Some(2),
    /// Base point, comma separated (default: origin).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)] point: Vec<f64> = Some(vec![]),
    /// N, Nbar, Fbar or F.
    #[arg(long)] kind: String = Some("Nbar".into()),
    /// Operator preset (Fbar and F).
    #[arg(long)] op: String = Some("laplace".into()),
    #[arg(long)] r_min: f64 = Some(0.05),
    #[arg(long)] r_max: f64 = Some(0.9),
    #[arg(long)] count: usize = Some(12),
    /// Quadrature order (default: exact for polynomials, else per-dimension).
    #[arg(long)] order: usize = None,
    /// `C` in `e^{Cr}` for the monotonicity check.
    #[arg(long)] c: f64 = Some(0.0),
    /// Absolute slack added to the per-point tolerances.
    #[arg(long)] abs_tol: f64 = Some(0.0),
});

fn freq_profile(p: &FreqScan, run: &mut Run) -> CliResult<FrequencyProfile> {
    let n = req(&p.dim, "dim")?;
    let u = load_field(&req(&p.field, "field")?, n, run.seed)?;
    let x = point(&req(&p.point, "point")?, n)?;
    let kind: FrequencyKind = req(&p.kind, "kind")?.parse().ctx("frequency")?;
    let op = load_op(&req(&p.op, "op")?, n)?;
    let q = quadrature(&u, p.order, run)?;
    let uses_op = matches!(kind, FrequencyKind::FBar | FrequencyKind::F);
    frequency::profile(
        &u,
        &x,
        kind,
        req(&p.r_min, "r_min")?,
        req(&p.r_max, "r_max")?,
        req(&p.count, "count")?,
        uses_op.then_some(&op),
        &q,
    )
    .ctx("frequency")
}

pub fn freq_scan(p: &FreqScan, run: &mut Run) -> CliResult<serde_json::Value> {
    let prof = freq_profile(p, run)?;
    let csv = run.write("profile.csv", &prof.to_csv())?;
    run.write_json("profile.json", &prof)?;
    run.plot(PlotKind::Profile, &csv)?;
    let (lo, hi) = prof
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    println!("{:?} over {} radii: min {lo:.10}, max {hi:.10}", prof.kind, prof.radii.len());
    Ok(json!({ "min": lo, "max": hi }))
}

pub fn monotonicity(p: &FreqScan, run: &mut Run) -> CliResult<serde_json::Value> {
    let prof = freq_profile(p, run)?;
    let rep = frequency::monotonicity_report_with_tol(&prof, req(&p.c, "c")?, req(&p.abs_tol, "abs_tol")?);
    let csv = run.write("profile.csv", &prof.to_csv())?;
    run.write_json("monotonicity.json", &rep)?;
    run.plot(PlotKind::Profile, &csv)?;
    println!(
        "monotonicity {}: {} violations, worst slack {:.3e}",
        if rep.pass { "holds" } else { "fails" },
        rep.violations.len(),
        rep.worst_slack
    );
    Ok(json!({ "pass": rep.pass, "violations": rep.violations.len(), "worst_slack": rep.worst_slack }))
}

params!(Doubling {
    #[arg(long)] field: String = None,
    #[arg(long)] dim: usize = Some(2),
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)] point: Vec<f64> = Some(vec![]),
    #[arg(long)] r1: f64 = Some(0.2),
    #[arg(long)] r2: f64 = Some(0.4),
    #[arg(long)] order: usize = None,
});

pub fn doubling(p: &Doubling, run: &mut Run) -> CliResult<serde_json::Value> {
    let n = req(&p.dim, "dim")?;
    let u = load_field(&req(&p.field, "field")?, n, run.seed)?;
    let x = point(&req(&p.point, "point")?, n)?;
    let q = quadrature(&u, p.order, run)?;
    let c = frequency::doubling_check(&u, &x, req(&p.r1, "r1")?, req(&p.r2, "r2")?, &q).ctx("frequency")?;
    run.write_json("doubling.json", &c)?;
    println!("doubling slack {:.3e} (lhs {:.6e}, rhs {:.6e})", c.slack, c.lhs, c.rhs);
    Ok(json!({ "slack": c.slack }))
}

params!(SymmetryScan {
    #[arg(long)] field: String = None,
    #[arg(long)] dim: usize = Some(2),
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)] point: Vec<f64> = Some(vec![]),
    /// Symmetry dimension `k`.
    #[arg(long)] k: usize = Some(0),
    #[arg(long)] d_max: u32 = Some(symmetry::DEFAULT_D_MAX),
    #[arg(long)] r_min: f64 = Some(0.05),
    #[arg(long)] r_max: f64 = Some(0.5),
    #[arg(long)] count: usize = Some(6),
});

pub fn symmetry_scan(p: &SymmetryScan, run: &mut Run) -> CliResult<serde_json::Value> {
    let n = req(&p.dim, "dim")?;
    let u = load_field(&req(&p.field, "field")?, n, run.seed)?;
    let x = point(&req(&p.point, "point")?, n)?;
    let (k, d_max) = (req(&p.k, "k")?, req(&p.d_max, "d_max")?);
    let radii = frequency::geometric_radii(req(&p.r_min, "r_min")?, req(&p.r_max, "r_max")?, req(&p.count, "count")?)
        .ctx("frequency")?;
    let mut csv = String::from("r,nonsymmetry,degree\n");
    let mut fits = Vec::new();
    for &r in &radii {
        let fit = symmetry::nonsymmetry_fit(&u, &x, r, k, d_max).ctx("symmetry")?;
        csv.push_str(&format!("{r},{},{}\n", fit.distance, fit.d));
        fits.push(serde_json::from_str::<serde_json::Value>(&fit.to_json()).expect("fit json"));
    }
    run.write("nonsymmetry.csv", &csv)?;
    run.write_json("fits.json", &fits)?;
    println!("{k}-nonsymmetry at {} radii written", radii.len());
    Ok(json!({ "radii": radii.len() }))
}

params!(Linearity {
    #[arg(long)] field: String = None,
    #[arg(long)] dim: usize = Some(2),
    /// Threshold `r` of the effective critical set `C_r`.
    #[arg(long)] r: f64 = Some(0.0625),
    #[arg(long)] domain_radius: f64 = Some(0.5),
    /// Lattice points per axis for the scan.
    #[arg(long)] per_axis: usize = Some(33),
    #[arg(long)] c1_per_axis: usize = None,
    #[arg(long)] holder_per_axis: usize = None,
    #[arg(long)] alpha: f64 = None,
});

fn linearity_cfg(n: usize, c1: Option<usize>, holder: Option<usize>, alpha: Option<f64>) -> LinearityConfig {
    let d = LinearityConfig::for_dim(n);
    LinearityConfig {
        c1_per_axis: c1.unwrap_or(d.c1_per_axis),
        holder_per_axis: holder.unwrap_or(d.holder_per_axis),
        alpha: alpha.unwrap_or(d.alpha),
    }
}

pub fn linearity(p: &Linearity, run: &mut Run) -> CliResult<serde_json::Value> {
    let n = req(&p.dim, "dim")?;
    let u = load_field(&req(&p.field, "field")?, n, run.seed)?;
    let cfg = linearity_cfg(n, p.c1_per_axis, p.holder_per_axis, p.alpha);
    let grid = ball_lattice(&vec![0.0; n], req(&p.domain_radius, "domain_radius")?, req(&p.per_axis, "per_axis")?);
    let set = symmetry::effective_critical_set(&u, req(&p.r, "r")?, &grid, &symmetry::default_scales(), cfg)
        .ctx("symmetry")?;
    run.write("critical_set.csv", &symmetry::points_to_csv(&set))?;
    println!("{} of {} lattice points in C_r", set.len(), grid.len());
    Ok(json!({ "points": set.len(), "tested": grid.len() }))
}

params!(StratifyCover {
    #[arg(long)] field: String = None,
    #[arg(long)] dim: usize = Some(2),
    #[arg(long)] k: usize = Some(0),
    #[arg(long)] eta: f64 = Some(0.1),
    /// Scale ratio (default: `c₀^{−2/η}` or the 1/2 fallback).
    #[arg(long)] gamma: f64 = None,
    /// Depth `j`.
    #[arg(long)] depth: usize = Some(6),
    #[arg(long)] eps: f64 = None,
    #[arg(long)] d_max: u32 = None,
    #[arg(long)] lambda: f64 = None,
    #[arg(long)] spacing: f64 = None,
    #[arg(long)] domain_radius: f64 = None,
});

pub fn stratify_cover(p: &StratifyCover, run: &mut Run) -> CliResult<serde_json::Value> {
    let n = req(&p.dim, "dim")?;
    let u = load_field(&req(&p.field, "field")?, n, run.seed)?;
    let mut sp = StrataParams::new(n, req(&p.k, "k")?, req(&p.eta, "eta")?, req(&p.depth, "depth")?).ctx("stratify")?;
    if let Some(g) = p.gamma {
        sp = sp.with_gamma(g);
    }
    sp.eps = p.eps.unwrap_or(sp.eps);
    sp.d_max = p.d_max.unwrap_or(sp.d_max);
    sp.lambda = p.lambda.unwrap_or(sp.lambda);
    sp.spacing = p.spacing.unwrap_or(sp.spacing);
    sp.domain_radius = p.domain_radius.unwrap_or(sp.domain_radius);
    let cover = stratify::build_cover(&u, &sp).ctx("stratify")?;
    run.write("cover.json", &cover.to_json())?;
    run.write("cover.csv", &cover.to_csv())?;
    let mut counts = String::from("level,balls\n");
    for (a, lvl) in cover.levels.iter().enumerate() {
        counts.push_str(&format!("{a},{}\n", lvl.len()));
    }
    let csv = run.write("cover_counts.csv", &counts)?;
    run.plot(PlotKind::Cover, &csv)?;
    println!(
        "cover: {} stratum points, {} balls, D = {}, count bounds {}",
        cover.stratum_points,
        cover.total_balls,
        cover.d_measured,
        if cover.count_bounds_hold { "hold" } else { "fail" }
    );
    Ok(json!({
        "stratum_points": cover.stratum_points,
        "total_balls": cover.total_balls,
        "d_measured": cover.d_measured,
        "pinching_bound": cover.pinching.bound,
        "count_bounds_hold": cover.count_bounds_hold,
        "sound": cover.sound,
    }))
}

params!(TubeVolume {
    /// CSV point set with columns `x1..xn` (other columns ignored).
    #[arg(long)] set: String = None,
    /// Field spec; sampled `C_r(u)` is used when no set is given.
    #[arg(long)] field: String = None,
    #[arg(long)] dim: usize = Some(2),
    #[arg(long, value_delimiter = ',')] radii: Vec<f64> = Some(vec![0.125, 0.0625, 0.03125, 0.015625, 0.0078125]),
    /// Bitset spacing (default: smallest radius / 8).
    #[arg(long)] spacing: f64 = None,
    #[arg(long)] domain_radius: f64 = Some(0.5),
    /// Expected Minkowski slope `n − k − η`.
    #[arg(long)] target: f64 = Some(2.0),
    #[arg(long)] margin: f64 = Some(0.3),
});

/// Reads `x1..xn` columns of a point CSV.
pub fn read_points(path: &str, n: usize) -> CliResult<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("set {path}: {e}")))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').map(str::trim).collect();
    let cols: Vec<usize> = (1..=n)
        .map(|i| {
            let name = format!("x{i}");
            header
                .iter()
                .position(|h| *h == name)
                .ok_or_else(|| CliError::Config(format!("set {path} lacks column `{name}`")))
        })
        .collect::<CliResult<_>>()?;
    let mut pts = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let p = cols
            .iter()
            .map(|&c| f.get(c).and_then(|s| s.trim().parse::<f64>().ok()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| CliError::Config(format!("set {path}: bad row {}", ln + 2)))?;
        pts.push(p);
    }
    Ok(pts)
}

pub fn tube_volume(p: &TubeVolume, run: &mut Run) -> CliResult<serde_json::Value> {
    let n = req(&p.dim, "dim")?;
    let radii = req(&p.radii, "radii")?;
    let rmin = radii.iter().cloned().fold(f64::INFINITY, f64::min);
    let domain = req(&p.domain_radius, "domain_radius")?;
    let mut vols = Vec::new();
    match (&p.set, &p.field) {
        (Some(set), _) => {
            let pts = read_points(set, n)?;
            let spacing = p.spacing.unwrap_or(rmin / 8.0);
            for &r in &radii {
                vols.push((r, stratify::tube_volume(&pts, r, spacing, domain).ctx("stratify")?));
            }
        }
        (None, Some(spec)) => {
            let u = load_field(spec, n, run.seed)?;
            let study = stratify::tube_volume_study(&u, &radii, domain, 1.0 / 64.0, LinearityConfig::for_dim(n))
                .ctx("stratify")?;
            vols = study.iter().map(|s| (s.r, s.volume)).collect();
        }
        (None, None) => return Err(CliError::Config("tube-volume needs `set` or `field`".into())),
    }
    let target = req(&p.target, "target")?;
    let fit = stratify::minkowski_fit(&vols, target, req(&p.margin, "margin")?).ctx("stratify")?;
    let mut csv = String::from("r,volume\n");
    for (r, v) in &vols {
        csv.push_str(&format!("{r},{v}\n"));
    }
    let path = run.write("volumes.csv", &csv)?;
    run.write_json("minkowski.json", &fit)?;
    run.plot(
        PlotKind::Tube {
            target_milli: (target * 1000.0).round() as u32,
        },
        &path,
    )?;
    println!("Minkowski slope {:.3} (need ≥ {:.3})", fit.slope, target - fit.margin);
    Ok(json!({ "slope": fit.slope, "pass": fit.pass }))
}

params!(CriticalCount {
    #[arg(long)] field: String = None,
    /// `x_lo,x_hi,y_lo,y_hi`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)] region: Vec<f64> = Some(vec![-0.5, 0.5, -0.5, 0.5]),
    #[arg(long)] min_width: f64 = Some(CriticalSearch::default().min_width),
    #[arg(long)] merge_tol: f64 = Some(CriticalSearch::default().merge_tol),
    /// Keep only points with `|u| ≤ tol` (singular set).
    #[arg(long)] singular_tol: f64 = None,
});

pub fn critical_count(p: &CriticalCount, run: &mut Run) -> CliResult<serde_json::Value> {
    let u = load_field(&req(&p.field, "field")?, 2, run.seed)?;
    let region: [f64; 4] = req(&p.region, "region")?
        .try_into()
        .map_err(|_| CliError::Config("region needs 4 numbers".into()))?;
    let search = CriticalSearch {
        region,
        min_width: req(&p.min_width, "min_width")?,
        merge_tol: req(&p.merge_tol, "merge_tol")?,
    };
    let mut found = stratify::count_critical_2d(&u, search).ctx("stratify")?;
    if let Some(tol) = p.singular_tol {
        let pts: Vec<Vec<f64>> = found.iter().map(|c| c.x.to_vec()).collect();
        let keep = stratify::singular_restrict(&u, &pts, 0.0, tol);
        found.retain(|c| keep.iter().any(|k| k[..] == c.x[..]));
    }
    let mut csv = String::from("x1,x2,verified,index,residual\n");
    for c in &found {
        csv.push_str(&format!("{},{},{},{},{}\n", c.x[0], c.x[1], c.verified, c.index, c.residual));
    }
    run.write("critical.csv", &csv)?;
    run.write_json("critical.json", &found)?;
    let d = u.poly().and_then(MultiIndexPoly::degree).unwrap_or(0);
    let bound = (d.saturating_sub(1) as usize).pow(2);
    println!("{} critical points (degree {d}, bound (d−1)² = {bound})", found.len());
    Ok(json!({ "count": found.len(), "bound": bound, "within_bound": found.len() <= bound }))
}

params!(Solve {
    #[arg(long)] op: String = Some("laplace".into()),
    /// Boundary data as a field spec; with `manufacture` also the exact solution.
    #[arg(long)] boundary: String = None,
    #[arg(long)] dim: usize = Some(2),
    #[arg(long)] h: f64 = Some(1.0 / 64.0),
    #[arg(long)] half_width: f64 = Some(0.5),
    /// Add the drift making `boundary` an exact solution.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")] manufacture: bool = Some(false),
    /// Spacings for a convergence study, comma separated.
    #[arg(long, value_delimiter = ',')] study: Vec<f64> = Some(vec![]),
});

pub fn solve(p: &Solve, run: &mut Run) -> CliResult<serde_json::Value> {
    let n = req(&p.dim, "dim")?;
    let g = load_field(&req(&p.boundary, "boundary")?, n, run.seed)?;
    let half = req(&p.half_width, "half_width")?;
    let mut op = load_op(&req(&p.op, "op")?, n)?;
    let manufactured = req(&p.manufacture, "manufacture")?;
    if manufactured {
        op = solver::manufacture_operator(&g, &op, &Ball::new(vec![0.0; n], half)).ctx("solver")?;
    }
    let gb = g.clone();
    let problem = DirichletProblem::new(op.clone(), Arc::new(move |x: &[f64]| gb.value(x)), req(&p.h, "h")?)
        .with_domain(Square {
            center: vec![0.0; n],
            half_width: half,
        });
    let (data, stats): (GridData, _) = solver::solve_grid(&problem).ctx("solver")?;
    data.save(run.path("field.grid")).ctx("field")?;
    run.record_file("field.grid");
    run.write_json("solve.json", &json!({ "operator": op.id, "lambda": op.lambda, "stats": stats }))?;
    let mut summary = json!({ "unknowns": stats.unknowns, "residual": stats.residual });
    let hs = req(&p.study, "study")?;
    if !hs.is_empty() {
        let exact = g.clone();
        let exact_fn = move |x: &[f64]| exact.value(x);
        let reference: Option<&(dyn Fn(&[f64]) -> f64 + Sync)> = manufactured.then_some(&exact_fn);
        let s = solver::convergence_study(&problem, &hs, reference).ctx("solver")?;
        let mut csv = String::from("h,error\n");
        let used = if s.richardson { &s.hs[..s.hs.len() - 1] } else { &s.hs[..] };
        for (h, e) in used.iter().zip(&s.errors) {
            csv.push_str(&format!("{h},{e}\n"));
        }
        let path = run.write("convergence.csv", &csv)?;
        run.write_json("convergence.json", &s)?;
        run.plot(PlotKind::Convergence, &path)?;
        println!(
            "convergence: {}",
            if s.exact { "exact".to_string() } else { format!("order {:.3}", s.order.unwrap_or(f64::NAN)) }
        );
        summary["order"] = json!(s.order);
        summary["exact"] = json!(s.exact);
    }
    println!("solved {} unknowns, residual {:.2e}", stats.unknowns, stats.residual);
    Ok(summary)
}

params!(Calibrate {
    /// Field specs (typically `grid:` files from `solve`), comma separated.
    #[arg(long, value_delimiter = ',')] fields: Vec<String> = None,
    #[arg(long)] dim: usize = Some(2),
    /// Operator the fields solve (same for all).
    #[arg(long)] op: String = Some("laplace".into()),
    /// Fields were solved with the drift manufactured from this exact solution.
    #[arg(long)] manufactured_from: String = None,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)] point: Vec<f64> = Some(vec![]),
    #[arg(long)] r_min: f64 = Some(0.025),
    #[arg(long)] r_max: f64 = Some(0.28),
    #[arg(long)] count: usize = Some(10),
    #[arg(long)] order: usize = None,
    #[arg(long)] abs_tol: f64 = Some(1e-4),
});

pub fn calibrate(p: &Calibrate, run: &mut Run) -> CliResult<serde_json::Value> {
    let n = req(&p.dim, "dim")?;
    let mut op = load_op(&req(&p.op, "op")?, n)?;
    if let Some(spec) = &p.manufactured_from {
        let u = load_field(spec, n, run.seed)?;
        op = solver::manufacture_operator(&u, &op, &Ball::new(vec![0.0; n], 0.5)).ctx("solver")?;
    }
    let x = point(&req(&p.point, "point")?, n)?;
    let mut profiles = Vec::new();
    let mut csv = String::from("field,r,value,tolerance\n");
    for spec in req(&p.fields, "fields")? {
        let u = load_field(&spec, n, run.seed)?;
        let q = quadrature(&u, p.order, run)?;
        let prof = frequency::profile(
            &u,
            &x,
            FrequencyKind::FBar,
            req(&p.r_min, "r_min")?,
            req(&p.r_max, "r_max")?,
            req(&p.count, "count")?,
            Some(&op),
            &q,
        )
        .ctx("frequency")?;
        for ((r, v), t) in prof.radii.iter().zip(&prof.values).zip(&prof.tolerances) {
            csv.push_str(&format!("{spec},{r},{v},{t}\n"));
        }
        profiles.push(prof);
    }
    let cal = frequency::calibrate_c(&profiles, req(&p.abs_tol, "abs_tol")?);
    run.write("profiles.csv", &csv)?;
    run.write_json("calibration.json", &cal)?;
    match cal.c {
        Some(c) => println!("calibrated C = {c:.6} over {} profiles", cal.training_size),
        None => println!("no C ≤ {} removes all violations", frequency::CALIBRATION_MAX_C),
    }
    Ok(json!({ "c": cal.c, "training_size": cal.training_size }))
}
