//! Output directory, manifest and plot scripts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::config::{CliError, CliResult};

pub struct Run {
    pub dir: PathBuf,
    pub command: &'static str,
    pub seed: u64,
    started: Instant,
    artifacts: Vec<String>,
    quadrature_orders: Vec<usize>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    library_version: &'a str,
    seed: u64,
    config: serde_json::Value,
    quadrature_orders: &'a [usize],
    wall_time_s: f64,
    artifacts: &'a [String],
    rerun: String,
    summary: serde_json::Value,
}

impl Run {
    pub fn new(dir: PathBuf, command: &'static str, seed: u64) -> CliResult<Self> {
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            command,
            seed,
            started: Instant::now(),
            artifacts: Vec::new(),
            quadrature_orders: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> CliResult<PathBuf> {
        let p = self.path(name);
        std::fs::write(&p, contents)?;
        self.artifacts.push(name.to_string());
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, v: &T) -> CliResult<PathBuf> {
        let s = serde_json::to_string_pretty(v).map_err(|e| CliError::Config(e.to_string()))?;
        self.write(name, &(s + "\n"))
    }

    pub fn record_file(&mut self, name: &str) {
        self.artifacts.push(name.to_string());
    }

    pub fn quadrature(&mut self, order: usize) {
        if !self.quadrature_orders.contains(&order) {
            self.quadrature_orders.push(order);
        }
    }

    pub fn plot(&mut self, kind: PlotKind, csv: &Path) -> CliResult<PathBuf> {
        let script = emit_plot_script(kind, csv)?;
        let name = script
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        self.artifacts.push(name);
        Ok(script)
    }

    /// Writes `config.toml` (every default explicit) and `manifest.json`.
    pub fn finish<P: Serialize>(mut self, params: &P, summary: serde_json::Value) -> CliResult<()> {
        let mut file = toml::Table::new();
        file.insert("out".into(), toml::Value::String(self.dir.to_string_lossy().into_owned()));
        file.insert("seed".into(), toml::Value::Integer(self.seed as i64));
        let section = toml::Value::try_from(params).map_err(|e| CliError::Config(e.to_string()))?;
        file.insert(self.command.into(), section);
        let text = toml::to_string(&file).map_err(|e| CliError::Config(e.to_string()))?;
        let cfg = self.write("config.toml", &text)?;
        let config = serde_json::to_value(params).map_err(|e| CliError::Config(e.to_string()))?;
        let rerun = format!("freqstrat --config {} {}", cfg.display(), self.command);
        let manifest = Manifest {
            command: self.command,
            library_version: freqstrat::VERSION,
            seed: self.seed,
            config,
            quadrature_orders: &self.quadrature_orders,
            wall_time_s: self.started.elapsed().as_secs_f64(),
            artifacts: &self.artifacts,
            rerun,
            summary,
        };
        let s = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Config(e.to_string()))?;
        std::fs::write(self.path("manifest.json"), s + "\n")?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    /// `r` against a frequency value.
    Profile,
    /// Log–log tube volumes with a slope guide.
    Tube { target_milli: u32 },
    /// Ball count per cover level.
    Cover,
    /// Log–log error against `h`.
    Convergence,
}

impl PlotKind {
    fn columns(self) -> &'static [&'static str] {
        match self {
            PlotKind::Profile => &["r", "value"],
            PlotKind::Tube { .. } => &["r", "volume"],
            PlotKind::Cover => &["level", "balls"],
            PlotKind::Convergence => &["h", "error"],
        }
    }

    fn stem(self) -> &'static str {
        match self {
            PlotKind::Profile => "plot_profile",
            PlotKind::Tube { .. } => "plot_tube",
            PlotKind::Cover => "plot_cover",
            PlotKind::Convergence => "plot_convergence",
        }
    }
}

/// Writes a matplotlib script next to `csv` reproducing its figure. The script is
/// never run here.
pub fn emit_plot_script(kind: PlotKind, csv: &Path) -> CliResult<PathBuf> {
    let text = std::fs::read_to_string(csv)
        .map_err(|e| CliError::Config(format!("plot source {}: {e}", csv.display())))?;
    let header: Vec<&str> = text.lines().next().unwrap_or("").split(',').map(str::trim).collect();
    for col in kind.columns() {
        if !header.contains(col) {
            return Err(CliError::Config(format!(
                "{} lacks column `{col}` (header: {})",
                csv.display(),
                header.join(",")
            )));
        }
    }
    let [xc, yc] = [kind.columns()[0], kind.columns()[1]];
    let file = csv.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let body = match kind {
        PlotKind::Profile => format!(
            "ax.semilogx(d['{xc}'], d['{yc}'], 'o-')\nax.set_xlabel('r')\nax.set_ylabel('frequency')\n"
        ),
        PlotKind::Tube { target_milli } => {
            let t = target_milli as f64 / 1000.0;
            format!(
                "ax.loglog(d['{xc}'], d['{yc}'], 'o-', label='volume')\n\
                 r0, v0 = d['{xc}'][0], d['{yc}'][0]\n\
                 ax.loglog(d['{xc}'], [v0 * (r / r0) ** {t} for r in d['{xc}']], '--', label='slope {t}')\n\
                 ax.set_xlabel('r')\nax.set_ylabel('tube volume')\nax.legend()\n"
            )
        }
        PlotKind::Cover => format!(
            "ax.semilogy(d['{xc}'], d['{yc}'], 'o-')\nax.set_xlabel('level')\nax.set_ylabel('balls')\n"
        ),
        PlotKind::Convergence => format!(
            "ax.loglog(d['{xc}'], d['{yc}'], 'o-')\nax.set_xlabel('h')\nax.set_ylabel('max error')\n"
        ),
    };
    let script = format!(
        "import csv\nimport os\nimport matplotlib.pyplot as plt\n\n\
         here = os.path.dirname(os.path.abspath(__file__))\n\
         with open(os.path.join(here, '{file}')) as f:\n    rows = list(csv.DictReader(f))\n\
         d = {{k: [float(r[k]) for r in rows] for k in ('{xc}', '{yc}')}}\n\
         fig, ax = plt.subplots()\n{body}\
         fig.savefig(os.path.join(here, '{stem}.png'), dpi=150)\n",
        stem = kind.stem()
    );
    let out = csv.with_file_name(format!("{}.py", kind.stem()));
    std::fs::write(&out, script)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plot_scripts() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("volumes.csv");
        std::fs::write(&csv, "r,volume\n0.1,0.03\n0.05,0.008\n").unwrap();
        let s = emit_plot_script(PlotKind::Tube { target_milli: 2000 }, &csv).unwrap();
        let text = std::fs::read_to_string(s).unwrap();
        assert!(text.contains("volumes.csv") && text.contains("slope 2"));
        let e = emit_plot_script(PlotKind::Profile, &csv).unwrap_err();
        assert!(e.to_string().contains("`value`"));
        assert!(emit_plot_script(PlotKind::Cover, &dir.path().join("missing.csv")).is_err());
    }
}
