//! Pipeline configuration: TOML file plus `PVG_` environment overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use figment::providers::{Env, Format, Toml};
use figment::Figment;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::guardrail::tluq::{BandThresholds, PercentileMode};
use crate::icsr::DEFAULT_INSTRUCTION;
use crate::model::{GenerationConfig, HttpAdapterConfig, MockProfile};
use crate::pipeline::PipelineSettings;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", try_from = "RawAdapter")]
pub enum AdapterConfig {
    Mock {
        #[serde(default)]
        profile: MockProfile,
        /// JSONL of `{doc, target, ...}` pairs served verbatim.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pairs_path: Option<PathBuf>,
    },
    Http(HttpAdapterConfig),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMock {
    #[serde(default)]
    profile: MockProfile,
    #[serde(default)]
    pairs_path: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAdapter {
    mock: Option<RawMock>,
    http: Option<HttpAdapterConfig>,
}

impl TryFrom<RawAdapter> for AdapterConfig {
    type Error = String;

    fn try_from(raw: RawAdapter) -> Result<Self, Self::Error> {
        match (raw.mock, raw.http) {
            (Some(m), None) => Ok(Self::Mock {
                profile: m.profile,
                pairs_path: m.pairs_path,
            }),
            (None, Some(h)) => Ok(Self::Http(h)),
            _ => Err("exactly one of adapter.mock and adapter.http must be configured".into()),
        }
    }
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self::Mock {
            profile: MockProfile::Separable,
            pairs_path: None,
        }
    }
}

/// A fixed distance or a quantile of the cache's leave-one-out scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdSpec {
    Fixed(f64),
    Calibrated { fpr: f64 },
}

impl fmt::Display for ThresholdSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Fixed(x) => write!(f, "{x}"),
            Self::Calibrated { fpr } => write!(f, "calibrated:{fpr}"),
        }
    }
}

impl FromStr for ThresholdSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("dluq_threshold {s:?} is neither a number nor \"calibrated:<fpr>\"");
        match s.strip_prefix("calibrated:") {
            Some(fpr) => {
                let fpr: f64 = fpr.trim().parse().map_err(|_| bad())?;
                Ok(Self::Calibrated { fpr })
            }
            None => s.trim().parse().map(Self::Fixed).map_err(|_| bad()),
        }
    }
}

impl Serialize for ThresholdSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Self::Fixed(x) => s.serialize_f64(*x),
            Self::Calibrated { .. } => s.serialize_str(&self.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for ThresholdSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(Self::Fixed(x)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

fn default_k() -> usize {
    5
}

fn default_threshold() -> ThresholdSpec {
    ThresholdSpec::Calibrated { fpr: 0.05 }
}

fn default_instruction() -> String {
    DEFAULT_INSTRUCTION.to_string()
}

fn default_source_language() -> String {
    "ja".into()
}

fn default_target_language() -> String {
    "en".into()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Lexicon TSV; the built-in fixture when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon_path: Option<PathBuf>,
    /// Embedding cache of known case reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_path: Option<PathBuf>,
    #[serde(default)]
    pub adapter: AdapterConfig,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_threshold")]
    pub dluq_threshold: ThresholdSpec,
    #[serde(default)]
    pub tluq_mode: PercentileMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tluq_global_thresholds: Option<BandThresholds>,
    /// Case entropy above which a case goes to review. Unset means TL-UQ
    /// only annotates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tluq_review_threshold: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_instruction")]
    pub instruction: String,
    #[serde(default = "default_source_language")]
    pub source_language: String,
    #[serde(default = "default_target_language")]
    pub target_language: String,
    #[serde(default)]
    pub generation: GenerationConfig,
    #[serde(default)]
    pub record_timing: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            lexicon_path: None,
            cache_path: None,
            adapter: AdapterConfig::default(),
            k: default_k(),
            dluq_threshold: default_threshold(),
            tluq_mode: PercentileMode::PerDocument,
            tluq_global_thresholds: None,
            tluq_review_threshold: None,
            seed: 0,
            output_dir: default_output_dir(),
            instruction: default_instruction(),
            source_language: default_source_language(),
            target_language: default_target_language(),
            generation: GenerationConfig::new(),
            record_timing: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Parse(#[from] Box<figment::Error>),
    #[error("path does not exist: {} ({field})", path.display())]
    MissingPath { field: &'static str, path: PathBuf },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl PipelineConfig {
    /// Reads `path` (if given) and applies `PVG_` variables on top, with `__`
    /// separating nested keys (`PVG_ADAPTER__MOCK__PROFILE=noisy`).
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut fig = Figment::new();
        if let Some(p) = path {
            if !p.exists() {
                return Err(ConfigError::MissingPath {
                    field: "config",
                    path: p.to_path_buf(),
                });
            }
            fig = fig.merge(Toml::file(p));
        }
        Self::extract(fig.merge(Env::prefixed("PVG_").split("__")))
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Self::extract(Figment::new().merge(Toml::string(text)))
    }

    fn extract(fig: Figment) -> Result<Self, ConfigError> {
        fig.extract().map_err(|e| ConfigError::Parse(Box::new(e)))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let must_exist = |field: &'static str, p: &Option<PathBuf>| match p {
            Some(p) if !p.exists() => Err(ConfigError::MissingPath { field, path: p.clone() }),
            _ => Ok(()),
        };
        must_exist("lexicon_path", &self.lexicon_path)?;
        must_exist("cache_path", &self.cache_path)?;
        if let AdapterConfig::Mock { pairs_path, .. } = &self.adapter {
            must_exist("adapter.mock.pairs_path", pairs_path)?;
        }
        if self.k == 0 {
            return Err(ConfigError::Invalid("k must be positive".into()));
        }
        match self.dluq_threshold {
            ThresholdSpec::Fixed(x) if x.is_nan() || x < 0.0 => {
                return Err(ConfigError::Invalid(format!("dluq_threshold {x} must be a non-negative number")));
            }
            ThresholdSpec::Calibrated { fpr } if !(fpr > 0.0 && fpr < 1.0) => {
                return Err(ConfigError::Invalid(format!("calibration fpr {fpr} must lie in (0, 1)")));
            }
            _ => {}
        }
        if self.tluq_mode == PercentileMode::Global && self.tluq_global_thresholds.is_none() {
            return Err(ConfigError::Invalid("tluq_mode = \"global\" needs tluq_global_thresholds".into()));
        }
        if let AdapterConfig::Http(h) = &self.adapter {
            if h.endpoint.trim().is_empty() {
                return Err(ConfigError::Invalid("adapter.http.endpoint is empty".into()));
            }
        }
        Ok(())
    }

    /// Settings for [`crate::pipeline::process_case`] once the DL-UQ
    /// threshold has been resolved to a distance.
    pub fn settings(&self, dluq_threshold: f64) -> PipelineSettings {
        PipelineSettings {
            k: self.k,
            dluq_threshold,
            instruction: self.instruction.clone(),
            target_language: self.target_language.clone(),
            tluq_mode: self.tluq_mode,
            tluq_global_thresholds: self.tluq_global_thresholds,
            tluq_review_threshold: self.tluq_review_threshold,
            generation: self.generation.clone(),
            record_timing: self.record_timing,
        }
    }
}
