//! TOML configuration. Relative paths resolve against the directory that
//! holds the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use ecoroute_core::adapt::AdaptConfig;
use ecoroute_core::backend::{reference_model_names, MockConfig, RetryPolicy};
use ecoroute_core::cache::CacheConfig;
use ecoroute_core::router::RouterConfig;
use ecoroute_core::telemetry::TelemetryConfig;
use ecoroute_core::ModelTier;
use serde::Deserialize;

pub const CONFIG_ENV: &str = "ECOROUTE_CONFIG";
pub const DEFAULT_CONFIG_PATH: &str = "config/ecoroute.toml";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config file {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config file {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config value `{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Ollama,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    pub base_url: String,
    pub models: BTreeMap<ModelTier, String>,
    pub mock: MockConfig,
    pub keep_resident_baseline: bool,
    pub retries: u32,
    pub backoff_ms: u64,
    pub request_timeout_s: u64,
}

impl Default for BackendSection {
    fn default() -> Self {
        Self {
            kind: BackendKind::Ollama,
            base_url: "http://127.0.0.1:11434".into(),
            models: reference_model_names(),
            mock: MockConfig::default(),
            keep_resident_baseline: true,
            retries: 2,
            backoff_ms: 250,
            request_timeout_s: 600,
        }
    }
}

impl BackendSection {
    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            retries: self.retries,
            backoff: Duration::from_millis(self.backoff_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    pub bind: String,
    pub port: u16,
}

impl Default for ServiceSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigRoot {
    pub backend: BackendSection,
    pub router: RouterConfig,
    pub adapt: AdaptConfig,
    /// Built-in reference table when absent.
    pub rules_path: Option<PathBuf>,
    /// Built-in reference seed phrases when absent.
    pub seeds_path: Option<PathBuf>,
    pub telemetry: TelemetryConfig,
    pub cache: CacheConfig,
    pub log_path: Option<PathBuf>,
    pub service: ServiceSection,
}

/// `--config` wins, then the environment variable, then the default path.
pub fn resolve_path(flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(CONFIG_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_CONFIG_PATH),
    }
}

impl ConfigRoot {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let src = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&src, base).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    /// Parses and validates `src`, resolving relative paths against `base`.
    pub fn parse(src: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg: ConfigRoot = toml::from_str(src).map_err(|e| ConfigError::Parse {
            path: PathBuf::new(),
            message: e.to_string(),
        })?;
        for p in [&mut cfg.rules_path, &mut cfg.seeds_path, &mut cfg.log_path]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (key, path) in [("rules_path", &self.rules_path), ("seeds_path", &self.seeds_path)] {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(invalid(key, format!("file {} does not exist", p.display())));
                }
            }
        }
        let b = &self.backend;
        if b.kind == BackendKind::Ollama && b.base_url.trim().is_empty() {
            return Err(invalid("backend.base_url", "must not be empty"));
        }
        for tier in ModelTier::ALL {
            match b.models.get(&tier) {
                Some(name) if !name.trim().is_empty() => {}
                _ => return Err(invalid(&format!("backend.models.{tier}"), "model name is required")),
            }
        }
        if !(b.mock.time_scale >= 0.0 && b.mock.time_scale.is_finite()) {
            return Err(invalid("backend.mock.time_scale", "must be a non-negative number"));
        }
        for tier in ModelTier::ALL {
            let key = format!("backend.mock.tiers.{tier}");
            let Some(p) = b.mock.tiers.get(&tier) else {
                return Err(invalid(&key, "parameters are required"));
            };
            if p.latency_seconds.is_nan() || p.latency_seconds <= 0.0 {
                return Err(invalid(&format!("{key}.latency_seconds"), "must be positive"));
            }
            if !p.power_watts.is_finite() || p.power_watts < 0.0 {
                return Err(invalid(&format!("{key}.power_watts"), "must be non-negative"));
            }
        }
        if b.request_timeout_s == 0 {
            return Err(invalid("backend.request_timeout_s", "must be positive"));
        }
        self.router.validate().map_err(|m| invalid("router", m))?;
        self.cache.validate().map_err(|m| invalid("cache", m))?;
        self.telemetry.validate().map_err(|m| invalid("telemetry", m))?;
        let a = &self.adapt;
        if a.window == 0 {
            return Err(invalid("adapt.window", "must be at least 1"));
        }
        if a.step <= 0 || a.max_drift < 0 {
            return Err(invalid("adapt.step", "step must be positive and max_drift non-negative"));
        }
        if !(0.0..=1.0).contains(&a.quality_floor) {
            return Err(invalid("adapt.quality_floor", "must be within [0, 1]"));
        }
        if !(0.0..=1.0).contains(&a.downward_ceiling) {
            return Err(invalid("adapt.downward_ceiling", "must be within [0, 1]"));
        }
        if self.service.bind.trim().is_empty() {
            return Err(invalid("service.bind", "must not be empty"));
        }
        Ok(())
    }
}
