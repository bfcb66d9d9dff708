//! Experiment configuration: one TOML document, unknown keys rejected.

use std::path::PathBuf;

use pamlab::oracle::FieldKind;
use pamlab::specfun::QuadratureSpec;
use pamlab::stats::{Resolution, MIN_REPLICAS};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subcommand {
    Verify,
    Oracle,
    Simulate,
    Clt,
    Fdd,
    Ergodic,
    Local,
}

impl Subcommand {
    pub fn as_str(self) -> &'static str {
        match self {
            Subcommand::Verify => "verify",
            Subcommand::Oracle => "oracle",
            Subcommand::Simulate => "simulate",
            Subcommand::Clt => "clt",
            Subcommand::Fdd => "fdd",
            Subcommand::Ergodic => "ergodic",
            Subcommand::Local => "local",
        }
    }

    fn stochastic(self) -> bool {
        !matches!(self, Subcommand::Verify | Subcommand::Oracle)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Optional in the file; the command line names it otherwise.
    pub subcommand: Option<Subcommand>,
    pub seed: Option<u64>,
    pub replicas: Option<u64>,
    #[serde(rename = "N_list")]
    pub n_list: Option<Vec<f64>>,
    pub t_list: Option<Vec<f64>>,
    #[serde(default)]
    pub field_kind: FieldKind,
    #[serde(default)]
    pub resolution: Resolution,
    #[serde(default)]
    pub quad: QuadratureSpec,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from(".")
}

/// A configuration error with the path of the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn bad(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Validated values, with every per-subcommand requirement resolved.
#[derive(Debug, Clone)]
pub struct Plan {
    pub sub: Subcommand,
    pub cfg: ExperimentConfig,
    pub seed: u64,
    pub replicas: u64,
    pub ns: Vec<f64>,
    pub ts: Vec<f64>,
}

/// Name of the `[table]` enclosing byte offset `at`, if any.
fn table_at(text: &str, at: usize) -> Option<String> {
    text[..at.min(text.len())]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('[') && l.ends_with(']'))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim().to_string())
}

pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
    toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        // serde names the missing or unknown key in backticks
        let key = msg.split('`').nth(1);
        let table = e.span().and_then(|s| table_at(text, s.start));
        let field = match (table, key) {
            (Some(t), Some(k)) => format!("{t}.{k}"),
            (Some(t), None) => t,
            (None, Some(k)) => k.to_string(),
            (None, None) => "config".to_string(),
        };
        bad(&field, msg)
    })
}

fn ascending(field: &str, xs: &[f64], min: f64) -> Result<(), ConfigError> {
    if xs.is_empty() {
        return Err(bad(field, "must be nonempty"));
    }
    if let Some(x) = xs.iter().find(|x| !(x.is_finite() && **x >= min)) {
        return Err(bad(field, format!("value {x} is below the minimum {min}")));
    }
    if xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(bad(field, "must be strictly ascending"));
    }
    Ok(())
}

/// Checks `cfg` for subcommand `sub` and fills in the subcommand.
pub fn validate(mut cfg: ExperimentConfig, sub: Subcommand) -> Result<Plan, ConfigError> {
    match cfg.subcommand {
        Some(s) if s != sub => {
            return Err(bad(
                "subcommand",
                format!("config is for {} but {} was requested", s.as_str(), sub.as_str()),
            ))
        }
        _ => cfg.subcommand = Some(sub),
    }
    let needs_lists = sub != Subcommand::Verify;
    let ns = match (&cfg.n_list, needs_lists) {
        (Some(v), _) => v.clone(),
        (None, true) => return Err(bad("N_list", format!("required for {}", sub.as_str()))),
        (None, false) => Vec::new(),
    };
    let ts = match (&cfg.t_list, needs_lists) {
        (Some(v), _) => v.clone(),
        (None, true) => return Err(bad("t_list", format!("required for {}", sub.as_str()))),
        (None, false) => Vec::new(),
    };
    if needs_lists {
        ascending("N_list", &ns, std::f64::consts::E)?;
        ascending("t_list", &ts, f64::MIN_POSITIVE)?;
    }
    let seed = match (cfg.seed, sub.stochastic()) {
        (Some(s), _) => s,
        (None, true) => return Err(bad("seed", format!("required for {}", sub.as_str()))),
        (None, false) => 0,
    };
    let replicas = match (cfg.replicas, sub.stochastic()) {
        (Some(r), _) => r,
        (None, true) => return Err(bad("replicas", format!("required for {}", sub.as_str()))),
        (None, false) => 0,
    };
    if sub.stochastic() {
        let min = if sub == Subcommand::Simulate { 1 } else { MIN_REPLICAS };
        if replicas < min {
            return Err(bad("replicas", format!("must be at least {min}")));
        }
    }
    if sub == Subcommand::Local {
        let top = (-1.0f64).exp();
        if let Some(t) = ts.iter().find(|&&t| t >= top) {
            return Err(bad("t_list", format!("roughness needs t < 1/e, got {t}")));
        }
    }
    cfg.resolution
        .validate()
        .map_err(|e| bad("resolution", e.to_string()))?;
    cfg.quad.validate().map_err(|e| bad("quad", e.to_string()))?;
    Ok(Plan {
        sub,
        seed,
        replicas,
        ns,
        ts,
        cfg,
    })
}
