//! Embedding-screened intersection of two graphs' causal triples.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::KnowledgeGraph;
use super::triple::CanonicalTriple;
use crate::error::{Error, Result};
use crate::jsonl;
use crate::text::{self, SparseVec, TfidfModel};

pub const DEFAULT_THRESHOLD: f64 = 0.65;

/// Maps a triple to a vector; cosine similarity is taken between outputs.
pub trait TripleEncoder {
    fn embed(&self, triple: &CanonicalTriple) -> Result<SparseVec>;
}

/// TF-IDF over the verbalized triples (`head relation tail`) of a corpus.
#[derive(Debug, Clone)]
pub struct TfidfTripleEncoder {
    model: TfidfModel,
}

impl TfidfTripleEncoder {
    pub fn fit<'a, I>(triples: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a CanonicalTriple>,
    {
        let docs: Vec<Vec<String>> = triples.into_iter().map(|t| text::ngram_features(&t.verbalize())).collect();
        Ok(TfidfTripleEncoder {
            model: TfidfModel::fit(&docs, 1)?,
        })
    }
}

impl TripleEncoder for TfidfTripleEncoder {
    fn embed(&self, triple: &CanonicalTriple) -> Result<SparseVec> {
        let feats = text::ngram_features(&triple.verbalize());
        if feats.is_empty() {
            return Err(Error::Validation(format!(
                "triple {:?} has an empty verbalization after stopword removal",
                triple.verbalize()
            )));
        }
        Ok(self.model.transform(&feats))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionItem {
    pub triple_a: CanonicalTriple,
    pub triple_b: CanonicalTriple,
    pub similarity: f64,
}

/// Persisted intersection: the screening threshold plus retained items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionSet {
    pub threshold: f64,
    pub candidates: usize,
    pub items: Vec<IntersectionItem>,
}

impl IntersectionSet {
    pub fn load(path: &Path) -> Result<Self> {
        jsonl::read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        jsonl::write_json(path, self)
    }

    /// All triples on either side of the retained pairs.
    pub fn triples(&self) -> Vec<CanonicalTriple> {
        self.items
            .iter()
            .flat_map(|i| [i.triple_a.clone(), i.triple_b.clone()])
            .collect()
    }
}

/// Screens every causal cross pair at `threshold`, then de-duplicates so no
/// two kept items share the same stopword-stripped verbalization on the `ga`
/// side. With no encoder, a TF-IDF encoder is fit on both graphs' causal
/// triples.
pub fn intersect_graphs(
    ga: &KnowledgeGraph,
    gb: &KnowledgeGraph,
    encoder: Option<&dyn TripleEncoder>,
    threshold: f64,
) -> Result<IntersectionSet> {
    if !(threshold > 0.0) {
        return Err(Error::Validation(format!("threshold must be positive, got {threshold}")));
    }
    let side_a: Vec<&CanonicalTriple> = ga.causal_triples().collect();
    let side_b: Vec<&CanonicalTriple> = gb.causal_triples().collect();
    if side_a.is_empty() || side_b.is_empty() {
        return Ok(IntersectionSet {
            threshold,
            candidates: 0,
            items: Vec::new(),
        });
    }

    let fitted;
    let encoder: &dyn TripleEncoder = match encoder {
        Some(e) => e,
        None => {
            fitted = TfidfTripleEncoder::fit(side_a.iter().chain(&side_b).copied())?;
            &fitted
        }
    };
    let embed_all = |side: &[&CanonicalTriple]| -> Vec<(CanonicalTriple, SparseVec)> {
        side.iter()
            .filter_map(|t| match encoder.embed(t) {
                Ok(v) => Some(((*t).clone(), v.normalized())),
                Err(e) => {
                    log::warn!("skipping triple in intersection: {e}");
                    None
                }
            })
            .collect()
    };
    let emb_a = embed_all(&side_a);
    let emb_b = embed_all(&side_b);

    let mut items = Vec::new();
    for (ta, va) in &emb_a {
        for (tb, vb) in &emb_b {
            let sim = va.dot(vb).clamp(-1.0, 1.0);
            if sim >= threshold {
                items.push(IntersectionItem {
                    triple_a: ta.clone(),
                    triple_b: tb.clone(),
                    similarity: sim,
                });
            }
        }
    }
    let candidates = items.len();
    items.sort_by(|x, y| {
        y.similarity
            .total_cmp(&x.similarity)
            .then_with(|| x.triple_a.verbalize().cmp(&y.triple_a.verbalize()))
            .then_with(|| x.triple_b.verbalize().cmp(&y.triple_b.verbalize()))
    });
    let mut seen = HashSet::new();
    items.retain(|item| seen.insert(text::strip_stopwords(&item.triple_a.verbalize())));
    Ok(IntersectionSet {
        threshold,
        candidates,
        items,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::cleanup::RelationFilter;

    fn g(triples: &[(&str, &str, &str)]) -> KnowledgeGraph {
        KnowledgeGraph::assemble(
            triples.iter().map(|(h, r, t)| CanonicalTriple::new(*h, *r, *t)),
            &RelationFilter::default(),
        )
    }

    #[test]
    fn shared_triple_has_similarity_one() {
        let a = g(&[("insulin resistance", "causes", "neuroinflammation"), ("obesity", "promotes", "hyperglycemia")]);
        let b = g(&[("insulin resistance", "causes", "neuroinflammation"), ("amyloid", "induces", "synapse loss")]);
        let inter = intersect_graphs(&a, &b, None, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(inter.items[0].triple_a.verbalize(), "insulin resistance causes neuroinflammation");
        assert!((inter.items[0].similarity - 1.0).abs() < 1e-12);
        assert!(inter.items.iter().all(|i| i.similarity >= DEFAULT_THRESHOLD));
        assert!(intersect_graphs(&a, &b, None, 1.01).unwrap().items.is_empty());
    }

    #[test]
    fn empty_side_gives_empty_result() {
        let a = g(&[("x", "causes", "y")]);
        let b = g(&[("x", "is associated with", "y")]);
        assert!(intersect_graphs(&a, &b, None, 0.65).unwrap().items.is_empty());
    }

    #[test]
    fn orthogonal_triples_have_zero_cosine() {
        let t1 = CanonicalTriple::new("alpha", "causes", "beta");
        let t2 = CanonicalTriple::new("gamma", "induces", "delta");
        let enc = TfidfTripleEncoder::fit([&t1, &t2]).unwrap();
        assert_eq!(enc.embed(&t1).unwrap().cosine(&enc.embed(&t2).unwrap()), 0.0);
        assert!((enc.embed(&t1).unwrap().cosine(&enc.embed(&t1).unwrap()) - 1.0).abs() < 1e-12);
        assert!(enc.embed(&CanonicalTriple::new("it", "is", "this")).is_err());
    }

    #[test]
    fn ga_side_is_deduplicated() {
        // One ga triple matching two gb triples keeps only the best pair.
        let a = g(&[("insulin resistance", "causes", "neuroinflammation")]);
        let b = g(&[
            ("insulin resistance", "causes", "neuroinflammation"),
            ("insulin resistance", "promotes", "neuroinflammation"),
        ]);
        let inter = intersect_graphs(&a, &b, None, 0.3).unwrap();
        assert_eq!(inter.candidates, 2);
        assert_eq!(inter.items.len(), 1);
        assert_eq!(inter.items[0].triple_b.relation, "causes");
    }
}
