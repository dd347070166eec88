//! Run configuration: one JSON file per run, unknown keys rejected.

use std::path::Path;

use diffkit::simulate::SimConfig;
use diffkit::{expand_family, Coef, DiffusionSpec, ModelFamily};
use serde::Deserialize;
use serde_json::Value;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub sim: Option<SimBlock>,
    pub exit: Option<ExitBlock>,
    pub pde: Option<PdeBlock>,
    pub optstop: Option<OptstopBlock>,
    pub stationary: Option<StationaryBlock>,
    pub out: Option<String>,
}

/// Either a named family (`family`, `params`) or expressions (`sigma`, `drift`);
/// `interval` overrides the family's interval. Bounds are numbers or "inf"/"-inf".
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Option<String>,
    #[serde(default)]
    pub params: Vec<f64>,
    pub sigma: Option<String>,
    pub drift: Option<String>,
    pub interval: Option<[Value; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimBlock {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_dt() -> f64 {
    1e-3
}
fn default_paths() -> usize {
    10_000
}
fn default_seed() -> u64 {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitBlock {
    pub x: f64,
    pub y: f64,
    pub t: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeBlock {
    pub payoff: String,
    pub spot: f64,
    pub horizon: f64,
    #[serde(default = "default_nodes")]
    pub nx: usize,
    #[serde(default = "default_nodes")]
    pub nt: usize,
    pub x_min: Option<f64>,
    pub x_max: Option<f64>,
    /// "payoff-linear" or {"dirichlet": v}
    pub farfield: Option<Value>,
    #[serde(default = "default_stride")]
    pub surface_stride: usize,
}

fn default_nodes() -> usize {
    800
}
fn default_stride() -> usize {
    10
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptstopBlock {
    pub lambda: f64,
    pub payoff: String,
    pub anchor: Option<f64>,
    #[serde(default = "default_os_nodes")]
    pub nodes: usize,
}

fn default_os_nodes() -> usize {
    diffkit::optstop::DEFAULT_NODES
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationaryBlock {
    /// "alpha-atom" or "alpha-measure"
    pub transform: String,
    pub alpha: f64,
    pub y: Option<f64>,
    /// [[point, weight], ...] for alpha-measure
    pub atoms: Option<Vec<[f64; 2]>>,
    pub x_min: Option<f64>,
    pub x_max: Option<f64>,
    #[serde(default = "default_points")]
    pub points: usize,
}

fn default_points() -> usize {
    401
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl<E: std::error::Error> From<E> for ConfigError {
    fn from(e: E) -> Self {
        ConfigError(e.to_string())
    }
}

pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

fn bound(v: &Value) -> Result<f64, ConfigError> {
    match v {
        Value::Number(n) => n.as_f64().ok_or_else(|| ConfigError(format!("bad bound {n}"))),
        Value::String(s) => match s.as_str() {
            "inf" | "+inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            other => other.parse().map_err(|_| ConfigError(format!("bad bound `{other}`"))),
        },
        other => Err(ConfigError(format!("bad bound {other}"))),
    }
}

impl ModelConfig {
    pub fn spec(&self) -> Result<DiffusionSpec, ConfigError> {
        let interval = match &self.interval {
            Some([a, b]) => Some((bound(a)?, bound(b)?)),
            None => None,
        };
        match (&self.family, &self.sigma) {
            (Some(name), None) => {
                if self.drift.is_some() {
                    return Err(ConfigError("model: `drift` cannot be combined with `family`".into()));
                }
                let fam = ModelFamily::from_name(name, &self.params)?;
                let base = expand_family(&fam)?;
                match interval {
                    None => Ok(base),
                    Some((l, r)) => Ok(DiffusionSpec::new(
                        base.name(),
                        base.sigma_coef().clone(),
                        base.drift_coef().clone(),
                        l,
                        r,
                    )?),
                }
            }
            (None, Some(sigma)) => {
                if !self.params.is_empty() {
                    return Err(ConfigError("model: `params` needs `family`".into()));
                }
                let (l, r) = interval.ok_or_else(|| ConfigError("model: expressions need `interval`".into()))?;
                let drift = self.drift.as_deref().unwrap_or("0");
                Ok(DiffusionSpec::new(
                    format!("sigma={sigma}, b={drift}"),
                    Coef::parse(sigma)?,
                    Coef::parse(drift)?,
                    l,
                    r,
                )?)
            }
            _ => Err(ConfigError("model: give exactly one of `family` or `sigma`".into())),
        }
    }
}

impl SimBlock {
    pub fn to_sim(&self, seed: Option<u64>, threads: Option<usize>) -> Result<SimConfig, ConfigError> {
        let mut cfg = SimConfig {
            dt: self.dt,
            n_paths: self.paths,
            seed: seed.unwrap_or(self.seed),
            ..SimConfig::default()
        };
        if threads.is_some() {
            cfg.threads = threads;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn farfield(v: Option<&Value>) -> Result<diffkit::pde::FarField, ConfigError> {
    use diffkit::pde::FarField;
    match v {
        None => Ok(FarField::PayoffLinear),
        Some(Value::String(s)) if s == "payoff-linear" => Ok(FarField::PayoffLinear),
        Some(Value::Object(m)) if m.len() == 1 && m.contains_key("dirichlet") => match m["dirichlet"].as_f64() {
            Some(v) => Ok(FarField::Dirichlet(v)),
            None => Err(ConfigError("farfield.dirichlet must be a number".into())),
        },
        Some(other) => Err(ConfigError(format!(
            "farfield must be \"payoff-linear\" or {{\"dirichlet\": v}}, got {other}"
        ))),
    }
}
