use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Source tag of an extracted triple: paper, sentence index, clause index.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub paper_id: String,
    pub sentence_id: u32,
    pub clause_id: u32,
}

impl Provenance {
    pub fn new(paper_id: impl Into<String>, sentence_id: u32, clause_id: u32) -> Self {
        Provenance {
            paper_id: paper_id.into(),
            sentence_id,
            clause_id,
        }
    }
}

/// Head, relation and tail accessors shared by raw and canonical triples.
pub trait TripleFields {
    fn head(&self) -> &str;
    fn relation(&self) -> &str;
    fn tail(&self) -> &str;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTriple {
    #[serde(rename = "Entity 1")]
    pub head: String,
    #[serde(rename = "Relationship")]
    pub relation: String,
    #[serde(rename = "Entity 2")]
    pub tail: String,
    pub provenance: Provenance,
}

impl RawTriple {
    pub fn new(
        head: impl Into<String>,
        relation: impl Into<String>,
        tail: impl Into<String>,
        provenance: Provenance,
    ) -> Result<Self> {
        let t = RawTriple {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
            provenance,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("Entity 1", &self.head), ("Relationship", &self.relation), ("Entity 2", &self.tail)] {
            if v.trim().is_empty() {
                return Err(Error::Validation(format!("triple field {name:?} is empty")));
            }
        }
        Ok(())
    }
}

impl TripleFields for RawTriple {
    fn head(&self) -> &str {
        &self.head
    }
    fn relation(&self) -> &str {
        &self.relation
    }
    fn tail(&self) -> &str {
        &self.tail
    }
}

/// Identity of a canonical triple; provenance is not part of it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TripleKey {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl fmt::Display for TripleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.head, self.relation, self.tail)
    }
}

/// A triple in canonical name space with every provenance that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalTriple {
    #[serde(rename = "Entity 1")]
    pub head: String,
    #[serde(rename = "Relationship")]
    pub relation: String,
    #[serde(rename = "Entity 2")]
    pub tail: String,
    #[serde(default)]
    pub provenance: BTreeSet<Provenance>,
}

impl CanonicalTriple {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        CanonicalTriple {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
            provenance: BTreeSet::new(),
        }
    }

    pub fn with_provenance(mut self, p: Provenance) -> Self {
        self.provenance.insert(p);
        self
    }

    pub fn key(&self) -> TripleKey {
        TripleKey {
            head: self.head.clone(),
            relation: self.relation.clone(),
            tail: self.tail.clone(),
        }
    }

    /// `head relation tail`
    pub fn verbalize(&self) -> String {
        format!("{} {} {}", self.head, self.relation, self.tail)
    }

    /// `head relation tail.`, the form used for retrieved context.
    pub fn sentence(&self) -> String {
        format!("{} {} {}.", self.head, self.relation, self.tail)
    }
}

impl TripleFields for CanonicalTriple {
    fn head(&self) -> &str {
        &self.head
    }
    fn relation(&self) -> &str {
        &self.relation
    }
    fn tail(&self) -> &str {
        &self.tail
    }
}
