//! Line-oriented `key=value` run configuration.
//!
//! A config file holds one `key=value` per line; blank lines and lines
//! starting with `#` are ignored. Command-line flags are applied on top of
//! the file. Every key is validated and unknown keys are rejected.

use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

use crate::model::{check_moment_order, BuiltinModel};
use crate::schemes::SchemeKind;
use crate::truncation::TruncationPolicy;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("configuration error for '{key}': {reason}")]
pub struct ConfigError {
    pub key: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "model",
    "mu",
    "sigma",
    "scheme",
    "p",
    "delta",
    "steps",
    "paths",
    "seed",
    "refinement",
    "x0",
    "window",
    "out",
    "workers",
    "stride",
    "lambda",
    "epsilon",
    "trials",
    "deltas",
    "floor",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: BuiltinModel,
    pub scheme: SchemeKind,
    pub p: f64,
    pub delta: f64,
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
    pub refinement: usize,
    pub x0: Vec<f64>,
    /// Fit window as fractions of the horizon.
    pub window: (f64, f64),
    pub out: PathBuf,
    pub workers: usize,
    /// Keep every `stride`-th state in trajectory outputs.
    pub stride: usize,
    /// Asserted decay rate; estimated from the model when absent.
    pub lambda: Option<f64>,
    /// Slack in exponent bounds; `λ/2` when absent.
    pub epsilon: Option<f64>,
    /// Sampled pairs per radius in the global Lipschitz check.
    pub trials: usize,
    /// Step sizes checked by `verify`; derived from `delta` when absent.
    pub deltas: Option<Vec<f64>>,
    pub floor: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: BuiltinModel::Example41,
            scheme: SchemeKind::Mtem,
            p: 0.5,
            delta: 5e-4,
            steps: 10_000,
            paths: 1_000,
            seed: 0,
            refinement: 16,
            x0: vec![2.0],
            window: (0.4, 1.0),
            out: PathBuf::from("."),
            workers: 1,
            stride: 1,
            lambda: None,
            epsilon: None,
            trials: 100_000,
            deltas: None,
            floor: crate::lab::DEFAULT_FLOOR,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T, ConfigError> {
    value
        .trim()
        .parse()
        .map_err(|_| ConfigError::new(key, format!("expected {what}, got '{value}'")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    value
        .split(',')
        .map(|v| parse_value::<f64>(key, v, "a comma-separated list of numbers"))
        .collect()
}

/// Splits config text into `(key, value)` pairs, in file order.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            ConfigError::new(line, format!("line {} is not of the form key=value", lineno + 1))
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Builds a validated configuration from file text (optional) and flag
/// overrides; later pairs win.
pub fn parse_config(text: Option<&str>, overrides: &[(String, String)]) -> Result<RunConfig, ConfigError> {
    let mut pairs = match text {
        Some(t) => parse_pairs(t)?,
        None => Vec::new(),
    };
    pairs.extend(overrides.iter().cloned());
    RunConfig::from_pairs(&pairs)
}

impl RunConfig {
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut model_key = "example41".to_string();
        let (mut mu, mut sigma) = (-1.0, 0.5);
        for (key, value) in pairs {
            let k = key.as_str();
            match k {
                "model" => model_key = value.clone(),
                "mu" => mu = parse_value(k, value, "a number")?,
                "sigma" => sigma = parse_value(k, value, "a number")?,
                "scheme" => {
                    cfg.scheme = value
                        .parse()
                        .map_err(|_| ConfigError::new(k, format!("expected mtem or em, got '{value}'")))?
                }
                "p" => cfg.p = parse_value(k, value, "a number")?,
                "delta" => cfg.delta = parse_value(k, value, "a number")?,
                "steps" => cfg.steps = parse_value(k, value, "a nonnegative integer")?,
                "paths" => cfg.paths = parse_value(k, value, "a nonnegative integer")?,
                "seed" => cfg.seed = parse_value(k, value, "an unsigned 64-bit integer")?,
                "refinement" => cfg.refinement = parse_value(k, value, "a nonnegative integer")?,
                "x0" => cfg.x0 = parse_list(k, value)?,
                "window" => {
                    let w = parse_list(k, value)?;
                    if w.len() != 2 {
                        return Err(ConfigError::new(k, "expected two fractions 'lo,hi'"));
                    }
                    cfg.window = (w[0], w[1]);
                }
                "out" => cfg.out = PathBuf::from(value),
                "workers" => cfg.workers = parse_value(k, value, "a nonnegative integer")?,
                "stride" => cfg.stride = parse_value(k, value, "a nonnegative integer")?,
                "lambda" => cfg.lambda = Some(parse_value(k, value, "a number")?),
                "epsilon" => cfg.epsilon = Some(parse_value(k, value, "a number")?),
                "trials" => cfg.trials = parse_value(k, value, "a nonnegative integer")?,
                "deltas" => cfg.deltas = Some(parse_list(k, value)?),
                "floor" => cfg.floor = parse_value(k, value, "a number")?,
                _ => {
                    return Err(ConfigError::new(
                        k,
                        format!("unknown key (expected one of: {})", KEYS.join(", ")),
                    ))
                }
            }
        }
        cfg.model = BuiltinModel::from_key(&model_key, mu, sigma).ok_or_else(|| {
            ConfigError::new(
                "model",
                format!("unknown model '{model_key}' (expected one of: {})", BuiltinModel::KEYS.join(", ")),
            )
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive_count = |key: &str, v: usize| {
            if v == 0 {
                Err(ConfigError::new(key, "must be at least 1"))
            } else {
                Ok(())
            }
        };
        positive_count("paths", self.paths)?;
        positive_count("steps", self.steps)?;
        positive_count("refinement", self.refinement)?;
        positive_count("workers", self.workers)?;
        positive_count("stride", self.stride)?;
        positive_count("trials", self.trials)?;

        if let BuiltinModel::Linear { mu, sigma } = self.model {
            if !mu.is_finite() {
                return Err(ConfigError::new("mu", "must be finite"));
            }
            if !sigma.is_finite() {
                return Err(ConfigError::new("sigma", "must be finite"));
            }
            if mu == 0.0 && sigma == 0.0 {
                return Err(ConfigError::new(
                    "sigma",
                    "mu and sigma are both zero; the truncation radius cannot be derived",
                ));
            }
        }
        check_moment_order(self.p).map_err(|e| ConfigError::new("p", e.to_string()))?;
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(ConfigError::new("delta", "must be positive"));
        }
        let policy = self.policy();
        if self.scheme == SchemeKind::Mtem {
            if let Some(star) = policy.delta_star() {
                if self.delta > star {
                    return Err(ConfigError::new(
                        "delta",
                        format!("{} exceeds the bound Δ* = {star} of the {} policy", self.delta, self.model.key()),
                    ));
                }
            }
        }
        if let Some(deltas) = &self.deltas {
            if deltas.is_empty() {
                return Err(ConfigError::new("deltas", "must not be empty"));
            }
            for &d in deltas {
                if !(d > 0.0) || policy.delta_star().is_some_and(|s| d > s) {
                    return Err(ConfigError::new("deltas", format!("{d} lies outside (0, Δ*]")));
                }
            }
        }
        if self.x0.len() != self.model.model().dimension() {
            return Err(ConfigError::new(
                "x0",
                format!("expected {} coordinate(s), got {}", self.model.model().dimension(), self.x0.len()),
            ));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(ConfigError::new("x0", "must be finite"));
        }
        let (lo, hi) = self.window;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(ConfigError::new("window", "fractions must satisfy 0 <= lo < hi <= 1"));
        }
        if !(self.floor > 0.0) {
            return Err(ConfigError::new("floor", "must be positive"));
        }
        if let Some(lambda) = self.lambda {
            if !(lambda > 0.0) {
                return Err(ConfigError::new("lambda", "must be positive"));
            }
        }
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0) {
                return Err(ConfigError::new("epsilon", "must be positive"));
            }
            if let Some(lambda) = self.lambda {
                if eps >= lambda {
                    return Err(ConfigError::new("epsilon", format!("must be below lambda = {lambda}")));
                }
            }
        }
        Ok(())
    }

    pub fn policy(&self) -> TruncationPolicy {
        TruncationPolicy::for_builtin(&self.model)
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.delta
    }

    /// Step sizes for `verify`: the configured list, or `delta` and three
    /// successive tenths of it.
    pub fn verify_deltas(&self) -> Vec<f64> {
        self.deltas
            .clone()
            .unwrap_or_else(|| (0..4).map(|i| self.delta / 10f64.powi(i)).collect())
    }

    /// `key=value` lines that rebuild this configuration through [`parse_config`].
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        let mut pairs = vec![("model".to_string(), self.model.key().to_string())];
        if let BuiltinModel::Linear { mu, sigma } = self.model {
            pairs.push(("mu".into(), format!("{mu:?}")));
            pairs.push(("sigma".into(), format!("{sigma:?}")));
        }
        pairs.extend([
            ("scheme".into(), self.scheme.to_string()),
            ("p".into(), format!("{:?}", self.p)),
            ("delta".into(), format!("{:?}", self.delta)),
            ("steps".into(), self.steps.to_string()),
            ("paths".into(), self.paths.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("refinement".into(), self.refinement.to_string()),
            ("x0".into(), list(&self.x0)),
            ("window".into(), list(&[self.window.0, self.window.1])),
            ("out".into(), self.out.display().to_string()),
            ("workers".into(), self.workers.to_string()),
            ("stride".into(), self.stride.to_string()),
        ]);
        if let Some(l) = self.lambda {
            pairs.push(("lambda".into(), format!("{l:?}")));
        }
        if let Some(e) = self.epsilon {
            pairs.push(("epsilon".into(), format!("{e:?}")));
        }
        pairs.push(("trials".into(), self.trials.to_string()));
        if let Some(d) = &self.deltas {
            pairs.push(("deltas".into(), list(d)));
        }
        pairs.push(("floor".into(), format!("{:?}", self.floor)));
        pairs
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.to_pairs() {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}
