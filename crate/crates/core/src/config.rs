//! Engine configuration: one JSON document covering extraction, embedding,
//! clustering, diffusion, scoring and generation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{ExtractorConfig, SentenceSegmenter, DEFAULT_ABBREVIATIONS};
use crate::embedding::EmbeddingProviderConfig;
use crate::error::{Error, Result};
use crate::retrieval::DiffusionConfig;
use crate::scoring::ScoringConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringConfig {
    /// Maximum leaf cluster radius.
    pub threshold: f64,
    /// Maximum entries per tree node.
    pub branching: usize,
    /// Kernel temperature for semantic hyperedge weights.
    pub tau: f64,
    /// Entities attached to each cluster hyperedge.
    pub top_d: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            branching: 50,
            tau: 1.0,
            top_d: 100,
        }
    }
}

impl ClusteringConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::Config(format!(
                "clustering threshold must be > 0, got {}",
                self.threshold
            )));
        }
        if self.branching < 2 {
            return Err(Error::Config("clustering branching must be >= 2".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!(
                "clustering tau must be > 0, got {}",
                self.tau
            )));
        }
        if self.top_d == 0 {
            return Err(Error::Config("clustering top_d must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// POST target receiving `{"prompt"}` and answering `{"answer"}`.
    pub endpoint: Option<String>,
    pub timeout_secs: Option<u64>,
}

impl GeneratorConfig {
    pub const DEFAULT_TIMEOUT_SECS: u64 = 60;

    pub fn timeout_secs(&self) -> u64 {
        self.timeout_secs.unwrap_or(Self::DEFAULT_TIMEOUT_SECS)
    }
}

/// Named hyperparameter bundles tuned for particular benchmark styles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Hotpotqa,
    #[serde(rename = "2wiki")]
    TwoWiki,
    Musique,
    Medical,
}

impl Preset {
    /// (max_iterations, epsilon, lambda1, gated_sentences)
    fn values(self) -> (usize, f64, f64, usize) {
        match self {
            Preset::Hotpotqa => (3, 0.5, 1.5, 1),
            Preset::TwoWiki => (3, 0.4, 0.05, 1),
            Preset::Musique => (5, 0.4, 2.0, 4),
            Preset::Medical => (3, 0.5, 1.5, 1),
        }
    }

    pub fn apply(self, cfg: &mut EngineConfig) {
        let (t, eps, lambda1, l) = self.values();
        cfg.diffusion.max_iterations = t;
        cfg.diffusion.epsilon = eps;
        cfg.scoring.lambda1 = lambda1;
        cfg.diffusion.gated_sentences = l;
        cfg.clustering.top_d = 100;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Base values applied before any explicit field in the file.
    pub preset: Option<Preset>,
    pub extractor: ExtractorConfig,
    pub embedding: EmbeddingProviderConfig,
    /// Replaces the built-in abbreviation list when set.
    pub abbreviations: Option<Vec<String>>,
    /// One abbreviation per line; takes precedence over `abbreviations`.
    pub abbreviations_file: Option<PathBuf>,
    pub clustering: ClusteringConfig,
    pub diffusion: DiffusionConfig,
    pub scoring: ScoringConfig,
    /// When false, queries ignore the cluster hyperedges entirely.
    pub semantic_hyperedges: bool,
    pub generator: GeneratorConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            preset: None,
            extractor: ExtractorConfig::default(),
            embedding: EmbeddingProviderConfig::default(),
            abbreviations: None,
            abbreviations_file: None,
            clustering: ClusteringConfig::default(),
            diffusion: DiffusionConfig::default(),
            scoring: ScoringConfig::default(),
            semantic_hyperedges: true,
            generator: GeneratorConfig::default(),
        }
    }
}

/// Where a hyperparameter's value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueSource {
    /// Set explicitly in the configuration file.
    Explicit,
    /// Taken from the selected preset.
    Preset,
    /// Default taken from the tuned reference settings.
    TunedDefault,
    /// Default chosen by this implementation.
    ImplementationDefault,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamProvenance {
    pub key: &'static str,
    pub value: Value,
    pub source: ValueSource,
}

/// (dotted key, has a tuned reference value, touched by presets)
const TRACKED: &[(&str, bool, bool)] = &[
    ("diffusion.max_iterations", true, true),
    ("diffusion.epsilon", true, true),
    ("diffusion.gated_sentences", true, true),
    ("diffusion.gamma", false, false),
    ("diffusion.anchors_per_entity", false, false),
    ("scoring.lambda1", true, true),
    ("scoring.lambda2", true, false),
    ("scoring.alpha", false, false),
    ("scoring.ppr_tolerance", false, false),
    ("scoring.ppr_max_iterations", false, false),
    ("scoring.top_k", true, false),
    ("clustering.top_d", true, true),
    ("clustering.threshold", false, false),
    ("clustering.branching", false, false),
    ("clustering.tau", false, false),
    ("embedding.dimension", false, false),
];

fn lookup<'a>(value: &'a Value, dotted: &str) -> Option<&'a Value> {
    dotted.split('.').try_fold(value, |v, part| v.get(part))
}

impl EngineConfig {
    /// Parses a configuration document. Missing fields take their defaults,
    /// or the preset's value when a preset is named.
    pub fn from_json_str(text: &str) -> Result<(Self, Vec<ParamProvenance>)> {
        let user: Value = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("invalid configuration JSON: {e}")))?;
        if !user.is_object() {
            return Err(Error::Config("configuration must be a JSON object".into()));
        }
        let preset: Option<Preset> = match user.get("preset") {
            None | Some(Value::Null) => None,
            Some(v) => Some(
                serde_json::from_value(v.clone())
                    .map_err(|e| Error::Config(format!("unknown preset: {e}")))?,
            ),
        };
        let mut base = Self::default();
        if let Some(p) = preset {
            p.apply(&mut base);
        }
        let mut merged = serde_json::to_value(&base).expect("config serializes");
        merge(&mut merged, &user);
        let cfg: Self = serde_json::from_value(merged)
            .map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        let provenance = cfg.provenance(Some(&user));
        Ok((cfg, provenance))
    }

    pub fn from_file(path: &Path) -> Result<(Self, Vec<ParamProvenance>)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    /// Source of every tracked hyperparameter. `explicit` is the raw
    /// document the configuration was read from, if any.
    pub fn provenance(&self, explicit: Option<&Value>) -> Vec<ParamProvenance> {
        let current = serde_json::to_value(self).expect("config serializes");
        TRACKED
            .iter()
            .map(|&(key, tuned, preset_managed)| {
                let source = if explicit.and_then(|v| lookup(v, key)).is_some() {
                    ValueSource::Explicit
                } else if self.preset.is_some() && preset_managed {
                    ValueSource::Preset
                } else if tuned {
                    ValueSource::TunedDefault
                } else {
                    ValueSource::ImplementationDefault
                };
                ParamProvenance {
                    key,
                    value: lookup(&current, key).cloned().unwrap_or(Value::Null),
                    source,
                }
            })
            .collect()
    }

    pub fn log_provenance(provenance: &[ParamProvenance]) {
        for p in provenance {
            log::info!("config {} = {} ({:?})", p.key, p.value, p.source);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.embedding.validate()?;
        self.clustering.validate()?;
        self.diffusion.validate()?;
        self.scoring.validate()
    }

    pub fn segmenter(&self) -> Result<SentenceSegmenter> {
        if let Some(path) = &self.abbreviations_file {
            return SentenceSegmenter::from_file(path);
        }
        Ok(match &self.abbreviations {
            Some(list) => SentenceSegmenter::new(list),
            None => SentenceSegmenter::new(DEFAULT_ABBREVIATIONS.iter().copied()),
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn merge(base: &mut Value, overlay: &Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}
