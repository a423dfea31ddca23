//! Abstract ingestion, relevance features, and top-K ranking.

use std::collections::HashSet;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::text::{self, TfidfModel};

pub const DEFAULT_MIN_WORDS: usize = 180;
pub const DEFAULT_MIN_DF: usize = 2;
pub const DEFAULT_TOP_K: usize = 1000;

/// One abstract. `word_count` counts whitespace-delimited tokens of the
/// abstract body only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub word_count: usize,
}

impl Document {
    pub fn new(id: impl Into<String>, title: impl Into<String>, abstract_text: impl Into<String>) -> Self {
        let abstract_text = abstract_text.into();
        Document {
            id: id.into(),
            title: title.into(),
            word_count: word_count(&abstract_text),
            abstract_text,
        }
    }

    /// Title and abstract joined into the text that gets vectorized.
    pub fn joined_text(&self) -> String {
        format!("{} {}", self.title, self.abstract_text)
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Deserialize)]
struct DocumentRecord {
    id: String,
    title: String,
    #[serde(rename = "abstract")]
    abstract_text: String,
}

/// Reads JSONL documents, keeping those with at least `min_words` words.
/// Input order is preserved; a duplicate id anywhere in the file is rejected.
pub fn ingest_documents(path: &Path, min_words: usize) -> Result<Vec<Document>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_documents(std::io::BufReader::new(file), &path.display().to_string(), min_words)
}

pub fn read_documents<R: BufRead>(reader: R, source: &str, min_words: usize) -> Result<Vec<Document>> {
    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    for (line_no, line) in jsonl::lines(reader, source)? {
        let rec: DocumentRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(source, line_no, format!("malformed document record: {e}")))?;
        if !seen.insert(rec.id.clone()) {
            return Err(Error::Validation(format!(
                "duplicate document id {:?} at {source}:{line_no}",
                rec.id
            )));
        }
        let doc = Document::new(rec.id, rec.title, rec.abstract_text);
        if doc.word_count >= min_words {
            kept.push(doc);
        }
    }
    Ok(kept)
}

/// Curated phrase lists used for the query vectors and keyword bonuses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermLists {
    pub causality: Vec<String>,
    pub phenotype: Vec<String>,
    pub biomarker: Vec<String>,
}

impl TermLists {
    /// Lowercases, trims and de-duplicates each list (first occurrence wins).
    pub fn new(causality: Vec<String>, phenotype: Vec<String>, biomarker: Vec<String>) -> Result<Self> {
        fn clean(name: &str, list: Vec<String>) -> Result<Vec<String>> {
            let mut seen = HashSet::new();
            let out: Vec<String> = list
                .into_iter()
                .map(|p| p.trim().to_lowercase())
                .filter(|p| !p.is_empty())
                .filter(|p| seen.insert(p.clone()))
                .collect();
            if out.is_empty() {
                return Err(Error::Validation(format!("term list {name:?} is empty")));
            }
            Ok(out)
        }
        Ok(TermLists {
            causality: clean("causality", causality)?,
            phenotype: clean("phenotype", phenotype)?,
            biomarker: clean("biomarker", biomarker)?,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&raw)
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let parsed: TermLists = serde_json::from_str(raw)?;
        Self::new(parsed.causality, parsed.phenotype, parsed.biomarker)
    }

    /// The term lists bundled with the crate.
    pub fn bundled() -> Self {
        Self::from_json(include_str!("../data/terms.json")).expect("bundled term lists are valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub s_caus: f64,
    pub s_pheno: f64,
    pub s_biom: f64,
    pub k_caus: usize,
    pub k_pheno: usize,
    pub k_biom: usize,
    pub k_tot: usize,
}

/// Builds the corpus TF-IDF space (unigrams and bigrams, English stopwords
/// removed, `min_df` filter), projects each term list into it, and returns
/// per-document cosines plus keyword counts.
pub fn compute_features(docs: &[Document], terms: &TermLists, min_df: usize) -> Result<Vec<FeatureVector>> {
    if docs.is_empty() {
        return Err(Error::Validation("cannot compute features of an empty corpus".into()));
    }
    let analyzed: Vec<Vec<String>> = docs.iter().map(|d| text::ngram_features(&d.joined_text())).collect();
    let model = TfidfModel::fit(&analyzed, min_df)?;

    let query = |list: &[String]| {
        let feats: Vec<String> = list.iter().flat_map(|p| text::ngram_features(p)).collect();
        model.transform(&feats)
    };
    let q_caus = query(&terms.causality);
    let q_pheno = query(&terms.phenotype);
    let q_biom = query(&terms.biomarker);

    let phrase_tokens = |list: &[String]| -> Vec<Vec<String>> { list.iter().map(|p| text::tokenize(p)).collect() };
    let p_caus = phrase_tokens(&terms.causality);
    let p_pheno = phrase_tokens(&terms.phenotype);
    let p_biom = phrase_tokens(&terms.biomarker);

    Ok(docs
        .iter()
        .zip(&analyzed)
        .map(|(doc, feats)| {
            let x = model.transform(feats);
            let tokens = text::tokenize(&doc.joined_text());
            let count = |phrases: &[Vec<String>]| phrases.iter().map(|p| text::count_phrase(&tokens, p)).sum::<usize>();
            let (k_caus, k_pheno, k_biom) = (count(&p_caus), count(&p_pheno), count(&p_biom));
            FeatureVector {
                s_caus: x.cosine(&q_caus).max(0.0),
                s_pheno: x.cosine(&q_pheno).max(0.0),
                s_biom: x.cosine(&q_biom).max(0.0),
                k_caus,
                k_pheno,
                k_biom,
                k_tot: k_caus + k_pheno + k_biom,
            }
        })
        .collect())
}

/// Min-max scaling to [0,1]; a constant column maps to all zeros.
pub fn minmax_normalize(values: &[f64]) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    values
        .iter()
        .map(|v| if range > 0.0 { (v - min) / range } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingWeights {
    pub w_caus: f64,
    pub w_pheno: f64,
    pub w_biom: f64,
    pub w_kw: f64,
}

impl Default for RankingWeights {
    fn default() -> Self {
        RankingWeights {
            w_caus: 0.4,
            w_pheno: 0.2,
            w_biom: 0.2,
            w_kw: 0.2,
        }
    }
}

impl RankingWeights {
    pub fn new(w_caus: f64, w_pheno: f64, w_biom: f64, w_kw: f64) -> Result<Self> {
        let w = RankingWeights {
            w_caus,
            w_pheno,
            w_biom,
            w_kw,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.as_array();
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Validation(format!("ranking weights must be non-negative, got {all:?}")));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(Error::Validation("at least one ranking weight must be positive".into()));
        }
        Ok(())
    }

    /// Parses `w_caus,w_pheno,w_biom,w_kw`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Validation(format!("invalid weights {s:?}: {e}")))?;
        match parts[..] {
            [a, b, c, d] => Self::new(a, b, c, d),
            _ => Err(Error::Validation(format!("expected four comma-separated weights, got {s:?}"))),
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.w_caus, self.w_pheno, self.w_biom, self.w_kw]
    }

    pub fn score(&self, n: &NormalizedFeatures) -> f64 {
        self.w_caus * n.s_caus + self.w_pheno * n.s_pheno + self.w_biom * n.s_biom + self.w_kw * n.k_tot
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedFeatures {
    pub s_caus: f64,
    pub s_pheno: f64,
    pub s_biom: f64,
    pub k_tot: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDocument {
    #[serde(flatten)]
    pub doc: Document,
    pub features: FeatureVector,
    pub normalized: NormalizedFeatures,
    pub score: f64,
}

/// Normalizes each feature column, scores, and sorts by descending score
/// with ascending id as the tie-breaker.
pub fn rank_documents(docs: &[Document], features: &[FeatureVector], weights: &RankingWeights) -> Result<Vec<RankedDocument>> {
    if docs.len() != features.len() {
        return Err(Error::Validation(format!(
            "{} documents but {} feature vectors",
            docs.len(),
            features.len()
        )));
    }
    weights.validate()?;
    let col = |f: fn(&FeatureVector) -> f64| minmax_normalize(&features.iter().map(f).collect::<Vec<_>>());
    let s_caus = col(|f| f.s_caus);
    let s_pheno = col(|f| f.s_pheno);
    let s_biom = col(|f| f.s_biom);
    let k_tot = col(|f| f.k_tot as f64);

    let mut ranked: Vec<RankedDocument> = docs
        .iter()
        .zip(features)
        .enumerate()
        .map(|(i, (doc, feat))| {
            let normalized = NormalizedFeatures {
                s_caus: s_caus[i],
                s_pheno: s_pheno[i],
                s_biom: s_biom[i],
                k_tot: k_tot[i],
            };
            RankedDocument {
                doc: doc.clone(),
                features: *feat,
                score: weights.score(&normalized),
                normalized,
            }
        })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.doc.id.cmp(&b.doc.id)));
    Ok(ranked)
}

pub fn select_top_k(ranked: &[RankedDocument], k: usize) -> Vec<RankedDocument> {
    ranked.iter().take(k).cloned().collect()
}
