//! Flag values, their parsers, and the `key = value` config-file overlay.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use tomogcv::harness::GeometryPreset;
use tomogcv::kernels::{Bandwidth, EllipticalBandwidth, RadialBandwidth};
use tomogcv::recon::Method;

/// Failure classes with their process exit codes.
#[derive(Debug)]
pub enum CliError {
    Numeric(String),
    Usage(String),
    Io(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Numeric(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Io(m) => write!(f, "i/o: {m}"),
        }
    }
}

impl From<tomogcv::Error> for CliError {
    fn from(e: tomogcv::Error) -> Self {
        use tomogcv::Error as E;
        match e {
            E::Io { .. } | E::Format { .. } => CliError::Io(e.to_string()),
            E::InvalidInput(_) | E::GeometryMismatch(_) => CliError::Usage(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// `NX,NY` or a single side length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridArg {
    pub nx: usize,
    pub ny: usize,
}

impl FromStr for GridArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let num = |v: &str| v.parse::<usize>().map_err(|_| format!("bad grid size '{v}'"));
        match parts.as_slice() {
            [n] => Ok(Self { nx: num(n)?, ny: num(n)? }),
            [x, y] => Ok(Self { nx: num(x)?, ny: num(y)? }),
            _ => Err(format!("grid must be NX,NY, got '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeometryArg {
    Preset(GeometryPreset),
    Explicit { n_dist: usize, n_angle: usize },
}

impl FromStr for GeometryArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if let Some((r, t)) = s.split_once(',') {
            let num = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad geometry size '{v}'"));
            return Ok(GeometryArg::Explicit {
                n_dist: num(r)?,
                n_angle: num(t)?,
            });
        }
        s.parse::<GeometryPreset>().map(GeometryArg::Preset).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthArg {
    Gcv,
    Oracle,
    Fixed(Bandwidth),
}

impl FromStr for BandwidthArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "gcv" => return Ok(BandwidthArg::Gcv),
            "oracle" => return Ok(BandwidthArg::Oracle),
            _ => {}
        }
        let nums: Vec<f64> = s
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| format!("bad bandwidth '{s}'")))
            .collect::<Result<_, _>>()?;
        let bw = match nums.as_slice() {
            [h] => Bandwidth::Radial(RadialBandwidth::new(*h).map_err(|e| e.to_string())?),
            [h1, h2, rho] => {
                Bandwidth::Elliptical(EllipticalBandwidth::new(*h1, *h2, *rho).map_err(|e| e.to_string())?)
            }
            _ => return Err(format!("bandwidth must be gcv, oracle, H or H1,H2,RHO; got '{s}'")),
        };
        Ok(BandwidthArg::Fixed(bw))
    }
}

/// Comma-separated methods, or `all`.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodList(pub Vec<Method>);

impl FromStr for MethodList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.trim() == "all" {
            return Ok(MethodList(Method::ALL.to_vec()));
        }
        let mut out = vec![];
        for part in s.split(',') {
            let m: Method = part.trim().parse().map_err(|e: tomogcv::Error| e.to_string())?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        Ok(MethodList(out))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaList(pub Vec<f64>);

impl FromStr for LambdaList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|v| {
                let x: f64 = v.trim().parse().map_err(|_| format!("bad count total '{v}'"))?;
                if x > 0.0 && x.is_finite() {
                    Ok(x)
                } else {
                    Err(format!("count totals must be positive, got '{v}'"))
                }
            })
            .collect::<Result<_, _>>()
            .map(LambdaList)
    }
}

/// Parsed config file: key → (value, line number).
pub struct ConfigFile {
    path: PathBuf,
    entries: BTreeMap<String, (String, usize)>,
}

impl ConfigFile {
    pub fn empty() -> Self {
        Self {
            path: PathBuf::new(),
            entries: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> CliResult<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("{}:{}: expected key = value", path.display(), i + 1)))?;
            let key = k.trim().replace('_', "-");
            if entries.insert(key.clone(), (v.trim().to_string(), i + 1)).is_some() {
                return Err(usage(format!("{}:{}: duplicate key '{key}'", path.display(), i + 1)));
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries,
        })
    }

    /// Rejects keys outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> CliResult<()> {
        for (key, (_, line)) in &self.entries {
            if !allowed.contains(&key.as_str()) {
                return Err(usage(format!(
                    "{}:{line}: unknown key '{key}' (allowed: {})",
                    self.path.display(),
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    }

    /// Fills `slot` from the file unless the flag already set it.
    pub fn overlay<T: FromStr>(&self, key: &str, slot: &mut Option<T>) -> CliResult<()>
    where
        T::Err: fmt::Display,
    {
        if slot.is_some() {
            return Ok(());
        }
        if let Some((v, line)) = self.entries.get(key) {
            let parsed = v
                .parse::<T>()
                .map_err(|e| usage(format!("{}:{line}: {key}: {e}", self.path.display())))?;
            *slot = Some(parsed);
        }
        Ok(())
    }

    pub fn overlay_flag(&self, key: &str, flag: &mut bool) -> CliResult<()> {
        let mut v: Option<bool> = None;
        self.overlay(key, &mut v)?;
        *flag |= v.unwrap_or(false);
        Ok(())
    }
}
