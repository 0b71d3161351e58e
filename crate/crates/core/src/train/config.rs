//! Training configuration: a flat key-value document with a fixed key
//! set. Unknown keys are rejected; values can be overridden through
//! `AUDIOHIDE_*` environment variables.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::pack::SecretFormat;

pub const ENV_PREFIX: &str = "AUDIOHIDE_";

const REQUIRED_KEYS: &[&str] = &[
    "epochs",
    "learning_rate",
    "batch_size",
    "seed",
    "image_size",
    "duration_range_s",
    "format",
];
const OPTIONAL_KEYS: &[&str] = &["quantize_container", "beta1", "beta2", "eps"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("missing config key '{0}'")]
    MissingKey(String),
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("bad value '{value}' for config key '{key}': {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("malformed config line {line}: '{text}' (expected 'key = value')")]
    MalformedLine { line: usize, text: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Clip durations are drawn uniformly from `[min_s, max_s]` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DurationRange {
    pub min_s: f64,
    pub max_s: f64,
}

impl DurationRange {
    pub fn new(min_s: f64, max_s: f64) -> Self {
        Self { min_s, max_s }
    }
}

impl std::fmt::Display for DurationRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.min_s, self.max_s)
    }
}

impl FromStr for DurationRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (lo, hi) = s
            .split_once('-')
            .ok_or_else(|| format!("'{s}' is not of the form 'min-max'"))?;
        let min_s: f64 = lo.trim().parse().map_err(|e| format!("bad min: {e}"))?;
        let max_s: f64 = hi.trim().parse().map_err(|e| format!("bad max: {e}"))?;
        Ok(Self { min_s, max_s })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: u32,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub image_size: usize,
    pub duration_range_s: DurationRange,
    pub format: SecretFormat,
    pub quantize_container: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 2e-4,
            batch_size: 8,
            seed: 0,
            image_size: 160,
            duration_range_s: DurationRange::new(0.0, 10.0),
            format: SecretFormat::Mel,
            quantize_container: false,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    /// Parses a `key = value` document. Every required key must appear;
    /// keys outside the schema are an error.
    pub fn parse_document(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen: Vec<String> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::MalformedLine {
                line: lineno + 1,
                text: raw.to_string(),
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.set(key, value)?;
            seen.push(key.to_string());
        }
        for required in REQUIRED_KEYS {
            if !seen.iter().any(|k| k == required) {
                return Err(ConfigError::MissingKey(required.to_string()));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `AUDIOHIDE_<KEY>` environment overrides, e.g.
    /// `AUDIOHIDE_EPOCHS=5`.
    pub fn apply_env_overrides(&mut self) -> Result<(), ConfigError> {
        for key in REQUIRED_KEYS.iter().chain(OPTIONAL_KEYS) {
            let var = format!("{ENV_PREFIX}{}", key.to_uppercase());
            if let Ok(value) = std::env::var(&var) {
                self.set(key, &value)?;
            }
        }
        self.validate()
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            value.parse().map_err(|e: T::Err| ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
                reason: e.to_string(),
            })
        }
        match key {
            "epochs" => self.epochs = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "image_size" => self.image_size = parse(key, value)?,
            "duration_range_s" => self.duration_range_s = parse(key, value)?,
            "format" => self.format = parse(key, value)?,
            "quantize_container" => self.quantize_container = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "eps" => self.eps = parse(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.epochs == 0 {
            return Err(ConfigError::Invalid("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::Invalid("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(ConfigError::Invalid("learning_rate must be positive".into()));
        }
        let r = self.duration_range_s;
        if !(r.max_s > 0.0) || r.min_s < 0.0 || r.min_s > r.max_s {
            return Err(ConfigError::Invalid(format!(
                "duration range {r} must satisfy 0 <= min <= max and max > 0"
            )));
        }
        if self.image_size != 160 && self.image_size != 64 {
            return Err(ConfigError::Invalid(format!(
                "image_size must be 160 or 64, got {}",
                self.image_size
            )));
        }
        Ok(())
    }

    /// Canonical serialization; checkpoints embed this snapshot.
    pub fn to_document(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "epochs = {}", self.epochs);
        let _ = writeln!(out, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(out, "batch_size = {}", self.batch_size);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "image_size = {}", self.image_size);
        let _ = writeln!(out, "duration_range_s = {}", self.duration_range_s);
        let _ = writeln!(out, "format = {}", self.format);
        let _ = writeln!(out, "quantize_container = {}", self.quantize_container);
        let _ = writeln!(out, "beta1 = {}", self.beta1);
        let _ = writeln!(out, "beta2 = {}", self.beta2);
        let _ = writeln!(out, "eps = {}", self.eps);
        out
    }
}
