use std::path::Path;
use std::process::{Command, Output};

fn freqstrat(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_freqstrat"));
    c.args(args).env_remove("FREQSTRAT_SEED");
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let o = freqstrat(args, &[]);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn column(csv: &Path, name: &str) -> Vec<f64> {
    let text = std::fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

#[test]
fn freq_scan_constant_column() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("f");
    ok(&["freq-scan", "--field", "x1x2", "--out", out.to_str().unwrap()]);
    let v = column(&out.join("profile.csv"), "value");
    assert_eq!(v.len(), 12);
    assert!(v.iter().all(|x| (x - 2.0).abs() <= 1e-8), "{v:?}");
    assert!(out.join("plot_profile.py").exists());
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["command"], "freq-scan");
    assert_eq!(m["config"]["r_min"], 0.05);
    assert!(m["wall_time_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn doubling_slack_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    ok(&["doubling", "--field", "x1x2", "--r1", "0.2", "--r2", "0.4", "--out", out.to_str().unwrap()]);
    let s = json(&out.join("doubling.json"))["slack"].as_f64().unwrap();
    assert!(s.abs() <= 1e-8, "{s}");
}

#[test]
fn stratify_cover_re_z2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    ok(&["stratify-cover", "--field", "re-z2", "--depth", "6", "--gamma", "0.5", "--out", out.to_str().unwrap()]);
    let c = json(&out.join("cover.json"));
    assert_eq!(c["count_bounds_hold"], true);
    assert_eq!(c["sound"], true);
    let d = c["d_measured"].as_f64().unwrap();
    assert!(d <= c["pinching"]["bound"].as_f64().unwrap());
    assert!(out.join("cover.csv").exists() && out.join("plot_cover.py").exists());
}

fn numeric_artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            let n = p.file_name().unwrap().to_string_lossy();
            n != "manifest.json" && n != "config.toml" && !n.ends_with(".py")
        })
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn rerun_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["symmetry-scan", "--field", "random-harmonic:2+3", "--seed", "9", "--count", "3", "--out", a.to_str().unwrap()]);
    let m = json(&a.join("manifest.json"));
    assert!(m["rerun"].as_str().unwrap().contains("config.toml"));
    let cfg = a.join("config.toml");
    ok(&["--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "symmetry-scan"]);
    let (xa, xb) = (numeric_artifacts(&a), numeric_artifacts(&b));
    assert!(!xa.is_empty());
    assert_eq!(xa, xb);
}

#[test]
fn seed_environment_override() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed_env: Option<&str>| {
        let out = dir.path().join(name);
        let args = ["freq-scan", "--field", "random-harmonic:1+2", "--seed", "1", "--count", "3", "--out", out.to_str().unwrap()];
        let env: Vec<(&str, &str)> = seed_env.map(|s| vec![("FREQSTRAT_SEED", s)]).unwrap_or_default();
        let o = freqstrat(&args, &env);
        assert!(o.status.success());
        (std::fs::read(out.join("profile.csv")).unwrap(), json(&out.join("manifest.json"))["seed"].clone())
    };
    let (p1, s1) = run("s1", None);
    let (p2, s2) = run("s2", Some("2"));
    let (p3, _) = run("s3", Some("1"));
    assert_eq!(s1, 1);
    assert_eq!(s2, 2);
    assert_ne!(p1, p2);
    assert_eq!(p1, p3);
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[doubling]\nfield = \"x1x2\"\nradius = 3\n").unwrap();
    let o = freqstrat(&["--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "doubling"], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("radius"));
    let o = freqstrat(&["doubling", "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`field`"));
    let o = freqstrat(&["freq-scan", "--field", "x1x2", "--kind", "Q", "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: frequency:"));
}

#[test]
fn solve_then_calibrate() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("solve");
    ok(&[
        "solve", "--boundary", "poly:1 * x1; 1 * x2", "--op", "lipschitz-bump:0.25,0.0,0.0", "--manufacture", "--h",
        "0.015625", "--study", "0.0625,0.03125,0.015625", "--out", s.to_str().unwrap(),
    ]);
    assert!(s.join("field.grid").exists());
    let conv = json(&s.join("convergence.json"));
    assert_eq!(conv["errors"].as_array().unwrap().len(), 3);
    assert!(s.join("plot_convergence.py").exists());
    let grid = format!("grid:{}", s.join("field.grid").display());
    let c = dir.path().join("cal");
    ok(&[
        "calibrate", "--fields", &grid, "--op", "lipschitz-bump:0.25,0.0,0.0", "--manufactured-from", "poly:1 * x1; 1 * x2",
        "--count", "6", "--out", c.to_str().unwrap(),
    ]);
    let cal = json(&c.join("calibration.json"));
    assert_eq!(cal["training_size"], 1);
    assert!(cal["c"].is_null() || cal["c"].as_f64().unwrap() <= 64.0);
}

#[test]
fn linearity_feeds_tube_volume() {
    let dir = tempfile::tempdir().unwrap();
    let l = dir.path().join("lin");
    ok(&["linearity", "--field", "re-z2", "--r", "0.125", "--per-axis", "17", "--c1-per-axis", "17", "--out", l.to_str().unwrap()]);
    let set = l.join("critical_set.csv");
    assert!(column(&set, "x1").len() > 0);
    let t = dir.path().join("tube");
    ok(&["tube-volume", "--set", set.to_str().unwrap(), "--radii", "0.2,0.1,0.05,0.025", "--out", t.to_str().unwrap()]);
    let v = column(&t.join("volumes.csv"), "volume");
    assert!(v.windows(2).all(|w| w[0] >= w[1]));
    assert!(std::fs::read_to_string(t.join("plot_tube.py")).unwrap().contains("slope 2"));
}

#[test]
fn critical_count_planar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cc");
    let stdout = ok(&["critical-count", "--field", "poly:1 * x1^2; -1 * x2^2; 1 * x1", "--out", out.to_str().unwrap()]);
    assert!(stdout.contains("1 critical points"));
    let x = column(&out.join("critical.csv"), "x1");
    assert!((x[0] + 0.5).abs() < 1e-9);
    let out2 = dir.path().join("cc2");
    ok(&["critical-count", "--field", "poly:1 * x1^2; -1 * x2^2; 1", "--singular-tol", "1e-9", "--out", out2.to_str().unwrap()]);
    assert_eq!(json(&out2.join("critical.json")).as_array().unwrap().len(), 0);
}
