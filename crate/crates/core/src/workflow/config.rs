//! Sweep configuration (TOML on disk).

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluation::DEFAULT_PROBE_LAMBDA;
use crate::synthdata::SynthConfig;

/// Privacy level of one record: ε = ∞ or a finite target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrivacyTarget {
    NonPrivate,
    Epsilon(f64),
}

impl PrivacyTarget {
    pub fn epsilon(self) -> Option<f64> {
        match self {
            PrivacyTarget::NonPrivate => None,
            PrivacyTarget::Epsilon(e) => Some(e),
        }
    }

    pub fn is_private(self) -> bool {
        matches!(self, PrivacyTarget::Epsilon(_))
    }
}

impl fmt::Display for PrivacyTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrivacyTarget::NonPrivate => f.write_str("inf"),
            PrivacyTarget::Epsilon(e) => write!(f, "{e}"),
        }
    }
}

impl Serialize for PrivacyTarget {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PrivacyTarget::NonPrivate => s.serialize_str("inf"),
            PrivacyTarget::Epsilon(e) => s.serialize_f64(*e),
        }
    }
}

impl<'de> Deserialize<'de> for PrivacyTarget {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct TargetVisitor;

        impl Visitor<'_> for TargetVisitor {
            type Value = PrivacyTarget;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a positive number or \"inf\"")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Self::Value, E> {
                match v.to_ascii_lowercase().as_str() {
                    "inf" | "infinity" | "∞" => Ok(PrivacyTarget::NonPrivate),
                    other => other
                        .parse::<f64>()
                        .map_err(|_| E::custom(format!("invalid privacy target {v:?}")))
                        .and_then(|x| self.visit_f64(x)),
                }
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Self::Value, E> {
                if v.is_infinite() && v > 0.0 {
                    Ok(PrivacyTarget::NonPrivate)
                } else if v > 0.0 && v.is_finite() {
                    Ok(PrivacyTarget::Epsilon(v))
                } else {
                    Err(E::custom(format!("privacy target must be > 0, got {v}")))
                }
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Self::Value, E> {
                self.visit_f64(v as f64)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Self::Value, E> {
                self.visit_f64(v as f64)
            }
        }

        d.deserialize_any(TargetVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synth(SynthConfig),
    Files { train: PathBuf, test: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub hidden_dim: usize,
    pub embed_dim: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            embed_dim: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacySettings {
    pub targets: Vec<PrivacyTarget>,
    pub delta: f64,
    pub clip_norm: f64,
    /// Poisson sampling rate; exactly one of this and `batch_size`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    pub steps: u64,
}

impl PrivacySettings {
    pub fn sample_rate_for(&self, n_train: usize) -> Result<f64> {
        match (self.sample_rate, self.batch_size) {
            (Some(q), None) => Ok(q),
            (None, Some(b)) => Ok(b as f64 / n_train as f64),
            _ => Err(Error::Config("set exactly one of privacy.sample_rate and privacy.batch_size".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSettings {
    pub lambda: f64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_PROBE_LAMBDA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSettings {
    pub resamples: usize,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self { resamples: 1000 }
    }
}

/// Non-private training on a source task that produces the shared φ₀.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSettings {
    pub source: DataSource,
    pub steps: u64,
    pub batch_size: usize,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    /// Added to the record seed to seed pretraining.
    #[serde(default)]
    pub seed_offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitSource {
    Random,
    Checkpoint { path: PathBuf },
    Pretrain(PretrainSettings),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub name: String,
    pub init: InitSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub dataset_id: String,
    pub data: DataSource,
    #[serde(default)]
    pub model: ModelSettings,
    pub privacy: PrivacySettings,
    #[serde(default)]
    pub optimizer: OptimizerSettings,
    #[serde(default)]
    pub probe: ProbeSettings,
    #[serde(default)]
    pub bootstrap: BootstrapSettings,
    pub seeds: Vec<u64>,
    pub branches: Vec<Branch>,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.privacy.targets.is_empty() {
            return Err(Error::Config("at least one privacy target is required".into()));
        }
        for t in &self.privacy.targets {
            if let PrivacyTarget::Epsilon(e) = t {
                if *e >= 10.0 {
                    log::warn!("privacy target {e} is outside the private regime (epsilon < 10)");
                }
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.branches.is_empty() {
            return Err(Error::Config("at least one initialization branch is required".into()));
        }
        if self.bootstrap.resamples == 0 {
            return Err(Error::Config("bootstrap.resamples must be >= 1".into()));
        }
        if self.probe.lambda.is_nan() || self.probe.lambda < 0.0 {
            return Err(Error::Config("probe.lambda must be >= 0".into()));
        }
        if self.model.hidden_dim == 0 || self.model.embed_dim == 0 {
            return Err(Error::Config("model dimensions must be >= 1".into()));
        }
        Ok(())
    }

    /// Stable 64-bit hash (hex) of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SweepConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Makes relative file paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let fix_source = |s: &mut DataSource| {
            if let DataSource::Files { train, test } = s {
                fix(train);
                fix(test);
            }
        };
        fix_source(&mut self.data);
        for b in &mut self.branches {
            match &mut b.init {
                InitSource::Checkpoint { path } => fix(path),
                InitSource::Pretrain(p) => fix_source(&mut p.source),
                InitSource::Random => {}
            }
        }
    }

    /// The bundled synthetic benchmark.
    pub fn benchmark() -> Self {
        Self::from_toml_str(BENCHMARK_TOML).expect("bundled benchmark config is valid")
    }
}

pub const BENCHMARK_TOML: &str = include_str!("../../configs/benchmark.toml");
