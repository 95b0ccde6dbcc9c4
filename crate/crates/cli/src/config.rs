//! Config files and flag merging.
//!
//! A config file is TOML with optional top-level `out` and `seed` and one table
//! per subcommand, e.g.
//!
//! ```toml
//! out = "runs/re-z2"
//! seed = 7
//!
//! [stratify-cover]
//! field = "re-z2"
//! depth = 6
//! ```
//!
//! Precedence is defaults < file < flags; `FREQSTRAT_SEED` overrides every seed.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

pub const SEED_ENV: &str = "FREQSTRAT_SEED";
pub const DEFAULT_SEED: u64 = 0x5eed;

#[derive(Debug)]
pub enum CliError {
    /// Bad config, flags or inputs (exit 1).
    Config(String),
    /// Library error raised in the named module; exit code depends on the kind.
    Lib(&'static str, freqstrat::Error),
    Io(std::io::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::Lib(module, e) => write!(f, "{module}: {e}"),
            CliError::Io(e) => write!(f, "I/O error: {e}"),
        }
    }
}

impl From<freqstrat::Error> for CliError {
    fn from(e: freqstrat::Error) -> Self {
        CliError::Lib("freqstrat", e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use freqstrat::Error as E;
        match self {
            CliError::Config(_) => 1,
            CliError::Lib(
                _,
                E::InvalidArgument(_)
                | E::Parse(_)
                | E::Validation { .. }
                | E::Precondition(_)
                | E::Domain(_)
                | E::Unsupported(_),
            ) => 1,
            CliError::Lib(..) | CliError::Io(_) => 2,
        }
    }
}

/// Tags library errors with the module they came from.
pub trait Context<T> {
    fn ctx(self, module: &'static str) -> CliResult<T>;
}

impl<T> Context<T> for freqstrat::Result<T> {
    fn ctx(self, module: &'static str) -> CliResult<T> {
        self.map_err(|e| CliError::Lib(module, e))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Parsed config file.
#[derive(Clone, Debug, Default)]
pub struct ConfigFile {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub tables: toml::Table,
}

impl ConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| CliError::Config(format!("{e}")))?;
        let out = match table.remove("out") {
            Some(toml::Value::String(s)) => Some(PathBuf::from(s)),
            Some(_) => return Err(CliError::Config("`out` must be a string".into())),
            None => None,
        };
        let seed = match table.remove("seed") {
            Some(toml::Value::Integer(i)) if i >= 0 => Some(i as u64),
            Some(_) => return Err(CliError::Config("`seed` must be a non-negative integer".into())),
            None => None,
        };
        for (k, v) in &table {
            if !v.is_table() {
                return Err(CliError::Config(format!("unknown top-level key `{k}`")));
            }
        }
        Ok(Self { out, seed, tables: table })
    }

    pub fn section(&self, command: &str) -> Option<&toml::Table> {
        self.tables.get(command).and_then(|v| v.as_table())
    }
}

fn to_table<T: Serialize>(v: &T) -> CliResult<toml::Table> {
    match toml::Value::try_from(v).map_err(|e| CliError::Config(e.to_string()))? {
        toml::Value::Table(t) => Ok(t),
        _ => Err(CliError::Config("parameters must form a table".into())),
    }
}

/// `defaults < file < flags`, validated by deserializing into `T`.
pub fn merge<T: Serialize + DeserializeOwned>(defaults: &T, file: Option<&toml::Table>, flags: &T) -> CliResult<T> {
    let mut base = to_table(defaults)?;
    if let Some(f) = file {
        for (k, v) in f {
            base.insert(k.clone(), v.clone());
        }
    }
    for (k, v) in to_table(flags)? {
        base.insert(k, v);
    }
    T::deserialize(toml::Value::Table(base)).map_err(|e| CliError::Config(e.to_string()))
}

/// Seed: `FREQSTRAT_SEED`, else flag, else file, else the default.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> CliResult<u64> {
    if let Ok(v) = std::env::var(SEED_ENV) {
        return v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{SEED_ENV} must be an unsigned integer, got {v:?}")));
    }
    Ok(flag.or(file).unwrap_or(DEFAULT_SEED))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, Serialize, Deserialize, PartialEq)]
    #[serde(deny_unknown_fields)]
    struct P {
        a: Option<f64>,
        b: Option<String>,
        c: Option<Vec<f64>>,
    }

    #[test]
    fn precedence() {
        let d = P {
            a: Some(1.0),
            b: Some("x".into()),
            c: Some(vec![0.0]),
        };
        let file = ConfigFile::parse("out = \"o\"\nseed = 3\n[cmd]\na = 2.0\nb = \"y\"\n").unwrap();
        assert_eq!(file.seed, Some(3));
        let flags = P {
            b: Some("z".into()),
            ..P::default()
        };
        let m = merge(&d, file.section("cmd"), &flags).unwrap();
        assert_eq!(
            m,
            P {
                a: Some(2.0),
                b: Some("z".into()),
                c: Some(vec![0.0])
            }
        );
    }

    #[test]
    fn unknown_field_named() {
        let file = ConfigFile::parse("[cmd]\nzeta = 1\n").unwrap();
        let e = merge(&P::default(), file.section("cmd"), &P::default()).unwrap_err();
        assert!(e.to_string().contains("zeta"), "{e}");
        assert_eq!(e.exit_code(), 1);
        let e = merge(
            &P::default(),
            ConfigFile::parse("[cmd]\na = \"no\"\n").unwrap().section("cmd"),
            &P::default(),
        )
        .unwrap_err();
        assert!(e.to_string().contains('a'));
        assert!(ConfigFile::parse("bogus = 1").is_err());
    }

    #[test]
    fn exit_codes() {
        let parse: freqstrat::Result<()> = Err(freqstrat::Error::Parse("y".into()));
        let e = parse.ctx("field").unwrap_err();
        assert_eq!(e.exit_code(), 1);
        assert!(e.to_string().starts_with("field: "));
        let deg: freqstrat::Result<()> = Err(freqstrat::Error::Degenerate("x".into()));
        assert_eq!(deg.ctx("frequency").unwrap_err().exit_code(), 2);
        assert_eq!(CliError::Lib("solver", freqstrat::Error::Convergence("x".into())).exit_code(), 2);
    }
}
