//! Tokenization, stopwords, and a small sparse TF-IDF implementation shared by
//! corpus ranking, triple embedding, and context retrieval.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::OnceLock;

use crate::error::{Error, Result};

const STOPWORDS_EN: &str = include_str!("../data/stopwords_en.txt");

pub fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS_EN
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect()
    })
}

pub fn is_stopword(token: &str) -> bool {
    stopwords().contains(token)
}

/// Lowercases and splits on non-alphanumerics. Hyphens between alphanumeric
/// runs are kept, so `p-tau-217` stays a single token.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if c == '-'
            && !current.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric())
        {
            current.push('-');
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
        i += 1;
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Unigram and bigram features after stopword removal. Bigrams are formed
/// over the stopword-filtered token stream.
pub fn ngram_features(text: &str) -> Vec<String> {
    let tokens: Vec<String> = tokenize(text)
        .into_iter()
        .filter(|t| !is_stopword(t))
        .collect();
    let mut out = Vec::with_capacity(tokens.len() * 2);
    out.extend(tokens.iter().cloned());
    for pair in tokens.windows(2) {
        out.push(format!("{} {}", pair[0], pair[1]));
    }
    out
}

/// Tokens with stopwords removed, joined by single spaces.
pub fn strip_stopwords(text: &str) -> String {
    tokenize(text)
        .into_iter()
        .filter(|t| !is_stopword(t))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Counts non-overlapping occurrences of `phrase` in `tokens`, scanning left
/// to right. Matching is token-exact, so word boundaries are respected.
pub fn count_phrase(tokens: &[String], phrase: &[String]) -> usize {
    if phrase.is_empty() || phrase.len() > tokens.len() {
        return 0;
    }
    let mut count = 0;
    let mut i = 0;
    while i + phrase.len() <= tokens.len() {
        if tokens[i..i + phrase.len()] == *phrase {
            count += 1;
            i += phrase.len();
        } else {
            i += 1;
        }
    }
    count
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVec {
    entries: Vec<(u32, f64)>,
}

impl SparseVec {
    pub fn from_map(map: BTreeMap<u32, f64>) -> Self {
        SparseVec {
            entries: map.into_iter().filter(|(_, v)| *v != 0.0).collect(),
        }
    }

    /// Dense vector to sparse form, dropping zeros.
    pub fn from_dense(values: &[f64]) -> Self {
        SparseVec {
            entries: values
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i as u32, *v))
                .collect(),
        }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &SparseVec) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        let (a, b) = (&self.entries, &other.entries);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            for e in &mut self.entries {
                e.1 /= n;
            }
        }
        self
    }

    /// Cosine similarity; zero when either side is the zero vector.
    pub fn cosine(&self, other: &SparseVec) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            return 0.0;
        }
        (self.dot(other) / denom).clamp(-1.0, 1.0)
    }
}

/// Raw-count TF with smoothed IDF `ln((1+N)/(1+df)) + 1`, rows L2-normalized.
#[derive(Debug, Clone)]
pub struct TfidfModel {
    vocab: HashMap<String, u32>,
    idf: Vec<f64>,
}

impl TfidfModel {
    /// Fits the vocabulary on pre-analyzed documents, keeping terms with
    /// document frequency of at least `min_df`.
    pub fn fit(docs: &[Vec<String>], min_df: usize) -> Result<Self> {
        if min_df == 0 {
            return Err(Error::Config("min_df must be at least 1".into()));
        }
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in docs {
            let unique: BTreeSet<&str> = doc.iter().map(String::as_str).collect();
            for term in unique {
                *df.entry(term).or_default() += 1;
            }
        }
        let n = docs.len() as f64;
        let mut vocab = HashMap::new();
        let mut idf = Vec::new();
        // BTreeMap iteration gives a sorted, reproducible column order.
        for (term, count) in df.into_iter().filter(|(_, c)| *c >= min_df) {
            vocab.insert(term.to_string(), idf.len() as u32);
            idf.push(((1.0 + n) / (1.0 + count as f64)).ln() + 1.0);
        }
        if vocab.is_empty() {
            return Err(Error::Config(format!(
                "empty vocabulary after filtering with min_df={min_df} over {} documents",
                docs.len()
            )));
        }
        Ok(TfidfModel { vocab, idf })
    }

    pub fn vocab_len(&self) -> usize {
        self.idf.len()
    }

    pub fn index_of(&self, term: &str) -> Option<u32> {
        self.vocab.get(term).copied()
    }

    /// Projects analyzed terms into the fitted space; out-of-vocabulary terms
    /// are ignored. The result is L2-normalized (or zero).
    pub fn transform(&self, terms: &[String]) -> SparseVec {
        let mut tf: BTreeMap<u32, f64> = BTreeMap::new();
        for t in terms {
            if let Some(&idx) = self.vocab.get(t) {
                *tf.entry(idx).or_default() += 1.0;
            }
        }
        for (idx, v) in tf.iter_mut() {
            *v *= self.idf[*idx as usize];
        }
        SparseVec::from_map(tf).normalized()
    }
}
