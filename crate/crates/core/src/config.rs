//! Pipeline configuration: a flat TOML document.
//!
//! ```toml
//! corpus = "data/corpus.jsonl"
//! min_words = 180
//! temperatures = [0.0, 0.2, 0.5]
//! ```
//!
//! Relative paths resolve against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::corpus::{RankingWeights, DEFAULT_MIN_DF, DEFAULT_MIN_WORDS, DEFAULT_TOP_K};
use crate::error::{Error, Result};
use crate::kg::cleanup::DEFAULT_VAGUE;
use crate::kg::intersect::DEFAULT_THRESHOLD;
use crate::rag;

pub const KEYS: [&str; 22] = [
    "corpus",
    "terms",
    "synonyms",
    "relations",
    "g1",
    "g2",
    "g3",
    "probes",
    "journal",
    "reports",
    "profiles",
    "weights",
    "min_words",
    "min_df",
    "top",
    "top_k",
    "threshold",
    "temperatures",
    "replicates",
    "seed",
    "vague",
    "n_probes",
];

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub corpus: Option<PathBuf>,
    pub terms: Option<PathBuf>,
    pub synonyms: Option<PathBuf>,
    pub relations: Option<PathBuf>,
    pub g1: Option<PathBuf>,
    pub g2: Option<PathBuf>,
    pub g3: Option<PathBuf>,
    pub probes: Option<PathBuf>,
    pub journal: Option<PathBuf>,
    pub reports: Option<PathBuf>,
    pub profiles: Option<PathBuf>,
    pub weights: RankingWeights,
    pub min_words: usize,
    pub min_df: usize,
    /// Ranked documents kept for graph construction.
    pub top: usize,
    /// Triples retrieved per question.
    pub top_k: usize,
    pub threshold: f64,
    pub temperatures: Vec<f64>,
    pub replicates: u32,
    pub seed: u64,
    pub vague: Vec<String>,
    pub n_probes: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus: None,
            terms: None,
            synonyms: None,
            relations: None,
            g1: None,
            g2: None,
            g3: None,
            probes: None,
            journal: None,
            reports: None,
            profiles: None,
            weights: RankingWeights::default(),
            min_words: DEFAULT_MIN_WORDS,
            min_df: DEFAULT_MIN_DF,
            top: DEFAULT_TOP_K,
            top_k: rag::DEFAULT_TOP_K,
            threshold: DEFAULT_THRESHOLD,
            temperatures: rag::DEFAULT_TEMPERATURES.to_vec(),
            replicates: 1,
            seed: 0,
            vague: DEFAULT_VAGUE.iter().map(|s| s.to_string()).collect(),
            n_probes: 100,
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum WeightsValue {
    List(Vec<f64>),
    Text(String),
}

#[derive(Deserialize, Default)]
struct RawConfig {
    corpus: Option<PathBuf>,
    terms: Option<PathBuf>,
    synonyms: Option<PathBuf>,
    relations: Option<PathBuf>,
    g1: Option<PathBuf>,
    g2: Option<PathBuf>,
    g3: Option<PathBuf>,
    probes: Option<PathBuf>,
    journal: Option<PathBuf>,
    reports: Option<PathBuf>,
    profiles: Option<PathBuf>,
    weights: Option<WeightsValue>,
    min_words: Option<usize>,
    min_df: Option<usize>,
    top: Option<usize>,
    top_k: Option<usize>,
    threshold: Option<f64>,
    temperatures: Option<Vec<f64>>,
    replicates: Option<u32>,
    seed: Option<u64>,
    vague: Option<Vec<String>>,
    n_probes: Option<usize>,
}

fn closest_key(unknown: &str) -> &'static str {
    KEYS.iter()
        .copied()
        .min_by_key(|k| strsim::levenshtein(unknown, k))
        .expect("non-empty key list")
}

impl PipelineConfig {
    pub fn from_toml(raw: &str, base_dir: &Path) -> Result<Self> {
        let table: toml::Table = raw.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for key in table.keys() {
            if !KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown key {key:?}; did you mean {:?}?", closest_key(key))));
            }
        }
        let raw: RawConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let d = PipelineConfig::default();
        let resolve = |p: Option<PathBuf>| p.map(|p| if p.is_absolute() { p } else { base_dir.join(p) });
        let weights = match raw.weights {
            None => d.weights,
            Some(WeightsValue::Text(s)) => RankingWeights::parse(&s)?,
            Some(WeightsValue::List(v)) => match v[..] {
                [a, b, c, e] => RankingWeights::new(a, b, c, e)?,
                _ => return Err(Error::Config(format!("weights needs 4 values, got {}", v.len()))),
            },
        };
        let cfg = PipelineConfig {
            corpus: resolve(raw.corpus),
            terms: resolve(raw.terms),
            synonyms: resolve(raw.synonyms),
            relations: resolve(raw.relations),
            g1: resolve(raw.g1),
            g2: resolve(raw.g2),
            g3: resolve(raw.g3),
            probes: resolve(raw.probes),
            journal: resolve(raw.journal),
            reports: resolve(raw.reports),
            profiles: resolve(raw.profiles),
            weights,
            min_words: raw.min_words.unwrap_or(d.min_words),
            min_df: raw.min_df.unwrap_or(d.min_df),
            top: raw.top.unwrap_or(d.top),
            top_k: raw.top_k.unwrap_or(d.top_k),
            threshold: raw.threshold.unwrap_or(d.threshold),
            temperatures: raw.temperatures.unwrap_or(d.temperatures),
            replicates: raw.replicates.unwrap_or(d.replicates),
            seed: raw.seed.unwrap_or(d.seed),
            vague: raw.vague.unwrap_or(d.vague),
            n_probes: raw.n_probes.unwrap_or(d.n_probes),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Config(format!("threshold must be in (0, 1], got {}", self.threshold)));
        }
        if self.temperatures.is_empty() || self.temperatures.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::Config(format!("temperatures must be non-negative, got {:?}", self.temperatures)));
        }
        if self.min_df == 0 {
            return Err(Error::Config("min_df must be at least 1".into()));
        }
        if self.top == 0 || self.top_k == 0 {
            return Err(Error::Config("top and top_k must be at least 1".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        self.weights.validate()?;
        // Inputs that no stage produces must already exist.
        for (key, path) in [
            ("corpus", &self.corpus),
            ("terms", &self.terms),
            ("synonyms", &self.synonyms),
            ("relations", &self.relations),
            ("profiles", &self.profiles),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(Error::Config(format!("{key}: {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PipelineConfig::from_toml(&raw, path.parent().unwrap_or(Path::new(".")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gets_defaults() {
        let cfg = PipelineConfig::from_toml("", Path::new(".")).unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!((cfg.min_words, cfg.min_df, cfg.top_k), (180, 2, 20));
        assert_eq!(cfg.threshold, 0.65);
        assert_eq!(cfg.temperatures, vec![0.0, 0.2, 0.5]);
    }

    #[test]
    fn rejects_out_of_range_threshold() {
        let err = PipelineConfig::from_toml("threshold = 1.5", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("(0, 1]"), "{err}");
    }

    #[test]
    fn suggests_closest_key() {
        let err = PipelineConfig::from_toml("tempratures = [0.0]", Path::new(".")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("tempratures") && msg.contains("\"temperatures\""), "{msg}");
    }

    #[test]
    fn resolves_relative_paths_and_checks_inputs() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("c.jsonl"), "").unwrap();
        let cfg = PipelineConfig::from_toml("corpus = \"c.jsonl\"\ng1 = \"out/g1.json\"\nweights = \"0.4,0.2,0.2,0.2\"", dir.path()).unwrap();
        assert_eq!(cfg.corpus.unwrap(), dir.path().join("c.jsonl"));
        assert_eq!(cfg.g1.unwrap(), dir.path().join("out/g1.json"));
        assert!(PipelineConfig::from_toml("corpus = \"missing.jsonl\"", dir.path()).is_err());
        assert!(PipelineConfig::from_toml("weights = [1.0, 2.0]", dir.path()).is_err());
    }
}
