//! Layered TOML configuration: built-in defaults overlaid by an optional user file.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clinical::ThresholdBand;
use crate::ingest::{PlausibilityRanges, Signal};
use crate::llm::BackendMode;

const DEFAULT_TOML: &str = include_str!("../config/default.toml");

/// Temperature used for every model without an explicit override.
pub const DEFAULT_TEMPERATURE: f64 = 0.2;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    Openai,
    Anthropic,
    Gemini,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub provider: Provider,
    pub api_model: String,
    pub endpoint: String,
    pub api_key_env: String,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default = "yes")]
    pub supports_images: bool,
    #[serde(default = "yes")]
    pub supports_structured: bool,
    #[serde(default)]
    pub thinking: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDefaults {
    pub max_rounds: u32,
    pub shortlist_k: usize,
    pub max_images: usize,
    pub coder_retries: u32,
    pub sandbox_timeout_s: u64,
    pub backend: BackendMode,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BandOverride {
    normal_low: Option<f64>,
    normal_high: Option<f64>,
    warn_low: Option<f64>,
    warn_high: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunOverride {
    max_rounds: Option<u32>,
    shortlist_k: Option<usize>,
    max_images: Option<usize>,
    coder_retries: Option<u32>,
    sandbox_timeout_s: Option<u64>,
    backend: Option<BackendMode>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Overlay {
    #[serde(default)]
    run: RunOverride,
    #[serde(default)]
    thresholds: BTreeMap<Signal, BandOverride>,
    #[serde(default)]
    plausibility: BTreeMap<Signal, [f64; 2]>,
    #[serde(default)]
    models: BTreeMap<String, ModelEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub run: RunDefaults,
    pub thresholds: Vec<ThresholdBand>,
    pub plausibility: PlausibilityRanges,
    pub models: BTreeMap<String, ModelEntry>,
}

impl Default for Config {
    fn default() -> Self {
        let mut base = Config {
            run: RunDefaults {
                max_rounds: 3,
                shortlist_k: 3,
                max_images: 3,
                coder_retries: 3,
                sandbox_timeout_s: 30,
                backend: BackendMode::Replay,
            },
            thresholds: crate::clinical::default_thresholds(),
            plausibility: PlausibilityRanges::default(),
            models: BTreeMap::new(),
        };
        base.apply_str(DEFAULT_TOML).expect("built-in config is valid");
        base
    }
}

impl Config {
    pub fn from_toml_str(s: &str) -> Result<Config, ConfigError> {
        let mut cfg = Config::default();
        cfg.apply_str(s)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Config::from_toml_str(&text)
    }

    fn apply_str(&mut self, s: &str) -> Result<(), ConfigError> {
        let overlay: Overlay = toml::from_str(s)?;

        let r = overlay.run;
        let run = &mut self.run;
        run.max_rounds = r.max_rounds.unwrap_or(run.max_rounds);
        run.shortlist_k = r.shortlist_k.unwrap_or(run.shortlist_k);
        run.max_images = r.max_images.unwrap_or(run.max_images);
        run.coder_retries = r.coder_retries.unwrap_or(run.coder_retries);
        run.sandbox_timeout_s = r.sandbox_timeout_s.unwrap_or(run.sandbox_timeout_s);
        run.backend = r.backend.unwrap_or(run.backend);
        if run.max_rounds < 1 || run.shortlist_k < 1 || run.coder_retries < 1 {
            return Err(ConfigError::Invalid(
                "max_rounds, shortlist_k and coder_retries must be >= 1".into(),
            ));
        }

        for (signal, o) in overlay.thresholds {
            let band = self
                .thresholds
                .iter_mut()
                .find(|b| b.signal == signal)
                .expect("every signal has a default band");
            band.normal_low = o.normal_low.unwrap_or(band.normal_low);
            band.normal_high = o.normal_high.unwrap_or(band.normal_high);
            band.warn_low = o.warn_low.unwrap_or(band.warn_low);
            band.warn_high = o.warn_high.unwrap_or(band.warn_high);
            band.validate().map_err(ConfigError::Invalid)?;
        }

        for (signal, [lo, hi]) in overlay.plausibility {
            if !(lo <= hi) {
                return Err(ConfigError::Invalid(format!("{signal} plausibility range is empty")));
            }
            self.plausibility.0.insert(signal, (lo, hi));
        }

        for (name, entry) in overlay.models {
            if let Some(t) = entry.temperature {
                if !(0.0..=2.0).contains(&t) {
                    return Err(ConfigError::Invalid(format!("{name}: temperature {t} outside [0, 2]")));
                }
            }
            self.models.insert(name, entry);
        }
        Ok(())
    }

    pub fn band(&self, signal: Signal) -> &ThresholdBand {
        self.thresholds
            .iter()
            .find(|b| b.signal == signal)
            .expect("every signal has a band")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_defaults() {
        let cfg = Config::default();
        assert_eq!(cfg.run.max_rounds, 3);
        assert_eq!(cfg.run.shortlist_k, 3);
        assert_eq!(cfg.run.max_images, 3);
        assert_eq!(cfg.run.sandbox_timeout_s, 30);
        assert_eq!(cfg.thresholds, crate::clinical::default_thresholds());
        assert_eq!(cfg.plausibility, PlausibilityRanges::default());
        assert_eq!(cfg.models.len(), 5);
    }

    #[test]
    fn partial_band_override() {
        let cfg = Config::from_toml_str("[thresholds.HR]\nnormal_high = 110.0\n").unwrap();
        let hr = cfg.band(Signal::Hr);
        assert_eq!(hr.normal_high, 110.0);
        assert_eq!(hr.normal_low, 60.0);
        assert_eq!(hr.warn_high, 120.0);
    }

    #[test]
    fn rejects_broken_nesting() {
        let err = Config::from_toml_str("[thresholds.HR]\nnormal_high = 130.0\n").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)));
        let err = Config::from_toml_str("[thresholds.SpO2]\nnormal_high = 98.0\n").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)));
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(Config::from_toml_str("[run]\nmax_round = 2\n").is_err());
    }

    #[test]
    fn plausibility_override() {
        let cfg = Config::from_toml_str("[plausibility]\nHR = [20.0, 250.0]\n").unwrap();
        assert!(cfg.plausibility.contains(Signal::Hr, 240.0));
        assert!(!cfg.plausibility.contains(Signal::Sbp, 260.0));
    }
}
