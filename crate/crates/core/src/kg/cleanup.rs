//! Causal relation filtering, vague-entity masking and synonym canonicalization.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::triple::{CanonicalTriple, RawTriple, TripleFields};
use crate::error::{Error, Result};

const DEFAULT_RELATIONS: &str = include_str!("../../data/causal_relations.txt");
const STARTER_SYNONYMS: &str = include_str!("../../data/synonyms_t2dm_ad.json");

/// Trims, collapses internal whitespace runs to one space.
pub fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn normalize_relation(s: &str) -> String {
    normalize_ws(s).to_lowercase()
}

/// Whitelist of relations whose edges count as causal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct RelationFilter {
    relations: BTreeSet<String>,
}

impl RelationFilter {
    pub fn new<I, S>(relations: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let relations: BTreeSet<String> = relations
            .into_iter()
            .map(|r| normalize_relation(r.as_ref()))
            .filter(|r| !r.is_empty())
            .collect();
        if relations.is_empty() {
            return Err(Error::Validation("causal relation set is empty".into()));
        }
        Ok(RelationFilter { relations })
    }

    /// Newline-delimited list; blank lines and `#` comments ignored.
    pub fn parse(text: &str) -> Result<Self> {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&raw)
    }

    pub fn contains(&self, relation: &str) -> bool {
        self.relations.contains(&normalize_relation(relation))
    }

    pub fn relations(&self) -> &BTreeSet<String> {
        &self.relations
    }

    pub fn union(&self, other: &RelationFilter) -> RelationFilter {
        RelationFilter {
            relations: self.relations.union(&other.relations).cloned().collect(),
        }
    }
}

impl Default for RelationFilter {
    fn default() -> Self {
        Self::parse(DEFAULT_RELATIONS).expect("bundled relation list is valid")
    }
}

impl TryFrom<Vec<String>> for RelationFilter {
    type Error = Error;
    fn try_from(v: Vec<String>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<RelationFilter> for Vec<String> {
    fn from(f: RelationFilter) -> Self {
        f.relations.into_iter().collect()
    }
}

/// Surface name to canonical label. Lookups are case-insensitive on
/// whitespace-normalized names; canonical labels map to themselves.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymMap {
    lookup: BTreeMap<String, String>,
    entries: usize,
}

impl SynonymMap {
    pub fn new<I, K, V>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut explicit: BTreeMap<String, String> = BTreeMap::new();
        let mut entries = 0;
        for (surface, canonical) in pairs {
            let key = normalize_ws(surface.as_ref()).to_lowercase();
            let canonical = normalize_ws(canonical.as_ref());
            if key.is_empty() || canonical.is_empty() {
                return Err(Error::Validation("synonym map contains an empty name".into()));
            }
            if let Some(prev) = explicit.get(&key) {
                if *prev != canonical {
                    return Err(Error::Validation(format!(
                        "synonym {key:?} maps to both {prev:?} and {canonical:?}"
                    )));
                }
            }
            explicit.insert(key, canonical);
            entries += 1;
        }
        let mut lookup = explicit.clone();
        for canonical in explicit.values() {
            let key = canonical.to_lowercase();
            match explicit.get(&key) {
                Some(target) if target != canonical => {
                    return Err(Error::Validation(format!(
                        "canonical label {canonical:?} is itself mapped to {target:?}"
                    )));
                }
                _ => {}
            }
            if let Some(existing) = lookup.get(&key) {
                if existing != canonical {
                    return Err(Error::Validation(format!(
                        "canonical labels {existing:?} and {canonical:?} differ only by case"
                    )));
                }
            }
            lookup.insert(key, canonical.clone());
        }
        Ok(SynonymMap { lookup, entries })
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let map: BTreeMap<String, String> = serde_json::from_str(raw)?;
        Self::new(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&raw)
    }

    /// Starter map for T2DM and AD surface forms.
    pub fn starter() -> Self {
        Self::from_json(STARTER_SYNONYMS).expect("bundled synonym map is valid")
    }

    /// Number of explicit surface entries.
    pub fn len(&self) -> usize {
        self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries == 0
    }

    /// `m(name)`: the canonical label, or the whitespace-normalized name when
    /// it is not mapped.
    pub fn canonical(&self, name: &str) -> String {
        let norm = normalize_ws(name);
        match self.lookup.get(&norm.to_lowercase()) {
            Some(c) => c.clone(),
            None => norm,
        }
    }

    /// Key used to compare option texts in canonical space.
    pub fn canonical_key(&self, name: &str) -> String {
        self.canonical(name).to_lowercase()
    }
}

pub const DEFAULT_VAGUE: [&str; 3] = ["it", "this", "this study"];

/// Entities too vague to keep as graph nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VagueMask {
    terms: BTreeSet<String>,
}

impl VagueMask {
    pub fn new<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        VagueMask {
            terms: terms.into_iter().map(|t| normalize_ws(t.as_ref()).to_lowercase()).collect(),
        }
    }

    pub fn is_vague(&self, entity: &str) -> bool {
        self.terms.contains(&normalize_ws(entity).to_lowercase())
    }
}

impl Default for VagueMask {
    fn default() -> Self {
        Self::new(DEFAULT_VAGUE)
    }
}

/// Keeps triples whose relation is in the causal set. Order preserved.
pub fn filter_causal<T: TripleFields + Clone>(triples: &[T], rf: &RelationFilter) -> Vec<T> {
    triples.iter().filter(|t| rf.contains(t.relation())).cloned().collect()
}

/// Drops triples whose head or tail is vague. Order preserved.
pub fn mask_vague<T: TripleFields + Clone>(triples: &[T], vague: &VagueMask) -> Vec<T> {
    triples
        .iter()
        .filter(|t| !vague.is_vague(t.head()) && !vague.is_vague(t.tail()))
        .cloned()
        .collect()
}

pub fn canonicalize(triple: &RawTriple, syn: &SynonymMap) -> CanonicalTriple {
    CanonicalTriple::new(
        syn.canonical(&triple.head),
        normalize_relation(&triple.relation),
        syn.canonical(&triple.tail),
    )
    .with_provenance(triple.provenance.clone())
}

/// Re-applies the synonym map to an already canonical triple.
pub fn recanonicalize(triple: &CanonicalTriple, syn: &SynonymMap) -> CanonicalTriple {
    CanonicalTriple {
        head: syn.canonical(&triple.head),
        relation: normalize_relation(&triple.relation),
        tail: syn.canonical(&triple.tail),
        provenance: triple.provenance.clone(),
    }
}
