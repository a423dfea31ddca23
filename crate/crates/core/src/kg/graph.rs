//! Knowledge graph storage with a boolean causal adjacency matrix.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cleanup::RelationFilter;
use super::triple::{CanonicalTriple, TripleKey};
use crate::error::{Error, Result};
use crate::jsonl;

/// Dense n x n bit matrix, one `u64` word per 64 columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoolMatrix {
    n: usize,
    words: usize,
    bits: Vec<u64>,
}

impl BoolMatrix {
    pub fn new(n: usize) -> Self {
        let words = n.div_ceil(64);
        BoolMatrix {
            n,
            words,
            bits: vec![0; n * words],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.words + col / 64] >> (col % 64) & 1 == 1
    }

    pub fn set(&mut self, row: usize, col: usize) {
        self.bits[row * self.words + col / 64] |= 1 << (col % 64);
    }

    fn row(&self, row: usize) -> &[u64] {
        &self.bits[row * self.words..(row + 1) * self.words]
    }

    pub fn row_ones(&self, row: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(row).iter().enumerate().flat_map(|(w, &word)| {
            let mut word = word;
            std::iter::from_fn(move || {
                if word == 0 {
                    return None;
                }
                let bit = word.trailing_zeros() as usize;
                word &= word - 1;
                Some(w * 64 + bit)
            })
        })
    }

    /// Boolean square: `(A^2)[u][x] = OR_b A[u][b] AND A[b][x]`.
    pub fn square(&self) -> BoolMatrix {
        let mut out = BoolMatrix::new(self.n);
        for u in 0..self.n {
            let start = u * self.words;
            for b in self.row_ones(u) {
                let src = b * self.words;
                for w in 0..self.words {
                    out.bits[start + w] |= self.bits[src + w];
                }
            }
        }
        out
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }
}

/// On-disk form of a graph; adjacency is rebuilt on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub entities: Vec<String>,
    pub triples: Vec<CanonicalTriple>,
    pub causal_relations: RelationFilter,
}

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Vec<String>,
    index: HashMap<String, usize>,
    triples: Vec<CanonicalTriple>,
    triple_index: HashMap<TripleKey, usize>,
    causal_relations: RelationFilter,
    adjacency: BoolMatrix,
    in_neighbors: Vec<Vec<usize>>,
    out_neighbors: Vec<Vec<usize>>,
}

impl PartialEq for KnowledgeGraph {
    fn eq(&self, other: &Self) -> bool {
        self.entities == other.entities && self.triples == other.triples && self.causal_relations == other.causal_relations
    }
}

impl KnowledgeGraph {
    /// Collapses duplicate canonical triples (accumulating provenance), sorts
    /// entities and triples, and builds the adjacency over causal relations.
    pub fn assemble<I>(triples: I, rf: &RelationFilter) -> Self
    where
        I: IntoIterator<Item = CanonicalTriple>,
    {
        let mut merged: BTreeMap<TripleKey, CanonicalTriple> = BTreeMap::new();
        for t in triples {
            match merged.get_mut(&t.key()) {
                Some(existing) => existing.provenance.extend(t.provenance),
                None => {
                    merged.insert(t.key(), t);
                }
            }
        }
        let triples: Vec<CanonicalTriple> = merged.into_values().collect();
        let entities: Vec<String> = triples
            .iter()
            .flat_map(|t| [t.head.clone(), t.tail.clone()])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index: HashMap<String, usize> = entities.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();
        let triple_index = triples.iter().enumerate().map(|(i, t)| (t.key(), i)).collect();

        let n = entities.len();
        let mut adjacency = BoolMatrix::new(n);
        for t in triples.iter().filter(|t| rf.contains(&t.relation)) {
            adjacency.set(index[&t.head], index[&t.tail]);
        }
        let mut in_neighbors = vec![Vec::new(); n];
        let mut out_neighbors = vec![Vec::new(); n];
        for (u, outs) in out_neighbors.iter_mut().enumerate() {
            for v in adjacency.row_ones(u) {
                outs.push(v);
                in_neighbors[v].push(u);
            }
        }
        KnowledgeGraph {
            entities,
            index,
            triples,
            triple_index,
            causal_relations: rf.clone(),
            adjacency,
            in_neighbors,
            out_neighbors,
        }
    }

    pub fn empty(rf: &RelationFilter) -> Self {
        Self::assemble(Vec::new(), rf)
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn triples(&self) -> &[CanonicalTriple] {
        &self.triples
    }

    pub fn causal_relations(&self) -> &RelationFilter {
        &self.causal_relations
    }

    pub fn adjacency(&self) -> &BoolMatrix {
        &self.adjacency
    }

    pub fn entity_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn entity(&self, idx: usize) -> &str {
        &self.entities[idx]
    }

    pub fn is_causal(&self, t: &CanonicalTriple) -> bool {
        self.causal_relations.contains(&t.relation)
    }

    pub fn causal_triples(&self) -> impl Iterator<Item = &CanonicalTriple> {
        self.triples.iter().filter(|t| self.is_causal(t))
    }

    pub fn contains_triple(&self, head: &str, relation: &str, tail: &str) -> bool {
        self.triple_index.contains_key(&TripleKey {
            head: head.to_string(),
            relation: relation.to_string(),
            tail: tail.to_string(),
        })
    }

    pub fn get_triple(&self, key: &TripleKey) -> Option<&CanonicalTriple> {
        self.triple_index.get(key).map(|&i| &self.triples[i])
    }

    pub fn has_edge(&self, from: &str, to: &str) -> bool {
        match (self.entity_index(from), self.entity_index(to)) {
            (Some(u), Some(v)) => self.adjacency.get(u, v),
            _ => false,
        }
    }

    pub fn in_neighbors(&self, idx: usize) -> &[usize] {
        &self.in_neighbors[idx]
    }

    pub fn out_neighbors(&self, idx: usize) -> &[usize] {
        &self.out_neighbors[idx]
    }

    pub fn in_degree(&self, idx: usize) -> usize {
        self.in_neighbors[idx].len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.count_ones()
    }

    /// Direct causes `P1(x) = {u : A[u][x]}` and two-hop causes
    /// `P2(x) = {u : A^2[u][x]}` by index, self excluded from both.
    pub fn causes_of_index(&self, x: usize) -> (Vec<usize>, Vec<usize>) {
        let p1: Vec<usize> = self.in_neighbors[x].iter().copied().filter(|&u| u != x).collect();
        let mut p2 = BTreeSet::new();
        for &b in &self.in_neighbors[x] {
            for &u in &self.in_neighbors[b] {
                if u != x {
                    p2.insert(u);
                }
            }
        }
        (p1, p2.into_iter().collect())
    }

    /// Named form of [`Self::causes_of_index`].
    pub fn direct_and_two_hop_causes(&self, x: &str) -> Result<(BTreeSet<String>, BTreeSet<String>)> {
        let idx = self
            .entity_index(x)
            .ok_or_else(|| Error::Lookup(format!("unknown entity {x:?}")))?;
        let (p1, p2) = self.causes_of_index(idx);
        let names = |v: Vec<usize>| v.into_iter().map(|i| self.entities[i].clone()).collect();
        Ok((names(p1), names(p2)))
    }

    /// Set union in canonical space; adjacency rebuilt over the union of the
    /// relation filters.
    pub fn merge(graphs: &[&KnowledgeGraph]) -> KnowledgeGraph {
        let Some(first) = graphs.first() else {
            return KnowledgeGraph::empty(&RelationFilter::default());
        };
        let rf = graphs.iter().skip(1).fold(first.causal_relations.clone(), |acc, g| {
            if g.causal_relations != acc {
                log::warn!("merging graphs with different causal relation sets; using their union");
            }
            acc.union(&g.causal_relations)
        });
        KnowledgeGraph::assemble(graphs.iter().flat_map(|g| g.triples.iter().cloned()), &rf)
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            entities: self.entities.clone(),
            triples: self.triples.clone(),
            causal_relations: self.causal_relations.clone(),
        }
    }

    pub fn from_document(doc: GraphDocument) -> Result<Self> {
        let g = KnowledgeGraph::assemble(doc.triples, &doc.causal_relations);
        let listed: BTreeSet<&String> = doc.entities.iter().collect();
        let derived: BTreeSet<&String> = g.entities.iter().collect();
        if listed != derived {
            return Err(Error::Validation(
                "graph entity list does not equal the set of triple heads and tails".into(),
            ));
        }
        Ok(g)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_document(jsonl::read_json(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        jsonl::write_json(path, &self.to_document())
    }

    /// SHA-256 over the canonical JSON serialization.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(&self.to_document()).expect("graph serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::triple::Provenance;

    fn t(h: &str, r: &str, tl: &str) -> CanonicalTriple {
        CanonicalTriple::new(h, r, tl)
    }

    #[test]
    fn duplicates_collapse_with_provenance() {
        let rf = RelationFilter::default();
        let g = KnowledgeGraph::assemble(
            vec![
                t("a", "causes", "b").with_provenance(Provenance::new("p1", 0, 0)),
                t("a", "causes", "b").with_provenance(Provenance::new("p2", 3, 1)),
            ],
            &rf,
        );
        assert_eq!(g.triples().len(), 1);
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.triples()[0].provenance.len(), 2);
    }

    #[test]
    fn associative_triples_stored_but_not_adjacent() {
        let rf = RelationFilter::default();
        let g = KnowledgeGraph::assemble(vec![t("a", "is associated with", "b")], &rf);
        assert_eq!(g.triples().len(), 1);
        assert_eq!(g.entities(), ["a", "b"]);
        assert!(!g.has_edge("a", "b"));
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn empty_graph() {
        let g = KnowledgeGraph::assemble(vec![], &RelationFilter::default());
        assert!(g.entities().is_empty() && g.triples().is_empty());
    }

    #[test]
    fn chain_causes() {
        let g = KnowledgeGraph::assemble(vec![t("u", "causes", "b"), t("b", "causes", "x"), t("z", "causes", "z")], &RelationFilter::default());
        let (p1, p2) = g.direct_and_two_hop_causes("x").unwrap();
        assert_eq!(p1, BTreeSet::from(["b".to_string()]));
        assert_eq!(p2, BTreeSet::from(["u".to_string()]));
        let (p1, p2) = g.direct_and_two_hop_causes("z").unwrap();
        assert!(p1.is_empty() && p2.is_empty());
        assert!(matches!(g.direct_and_two_hop_causes("nope"), Err(Error::Lookup(_))));
    }

    #[test]
    fn merge_examples() {
        let rf = RelationFilter::default();
        let g = KnowledgeGraph::assemble(vec![t("a", "causes", "b"), t("b", "reduces", "c")], &rf);
        assert_eq!(KnowledgeGraph::merge(&[&g, &g]), g);
        let g3 = KnowledgeGraph::assemble((0..3).map(|i| t(&format!("a{i}"), "causes", "x")), &rf);
        let g4 = KnowledgeGraph::assemble((0..4).map(|i| t(&format!("b{i}"), "causes", "y")), &rf);
        assert_eq!(KnowledgeGraph::merge(&[&g3, &g4]).triples().len(), 7);
    }

    #[test]
    fn document_round_trip() {
        let g = KnowledgeGraph::assemble(vec![t("a", "causes", "b").with_provenance(Provenance::new("p", 1, 2))], &RelationFilter::default());
        let json = serde_json::to_string(&g.to_document()).unwrap();
        let back = KnowledgeGraph::from_document(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.fingerprint(), g.fingerprint());
        let mut doc = g.to_document();
        doc.entities.push("ghost".into());
        assert!(KnowledgeGraph::from_document(doc).is_err());
    }

    #[test]
    fn matrix_square_small() {
        let mut m = BoolMatrix::new(70);
        m.set(0, 65);
        m.set(65, 3);
        let sq = m.square();
        assert!(sq.get(0, 3));
        assert_eq!(sq.count_ones(), 1);
        assert_eq!(m.row_ones(0).collect::<Vec<_>>(), vec![65]);
    }
}
