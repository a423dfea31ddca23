//! Knowledge-graph construction: extraction, cleanup, assembly, union and
//! intersection.

pub mod cleanup;
pub mod extract;
pub mod graph;
pub mod intersect;
pub mod triple;

pub use cleanup::{canonicalize, filter_causal, mask_vague, RelationFilter, SynonymMap, VagueMask};
pub use extract::{run_extraction_pipeline, ExtractionOutcome, ExtractionPipelineConfig};
pub use graph::{BoolMatrix, GraphDocument, KnowledgeGraph};
pub use intersect::{intersect_graphs, IntersectionItem, IntersectionSet, TfidfTripleEncoder, TripleEncoder};
pub use triple::{CanonicalTriple, Provenance, RawTriple, TripleFields, TripleKey};

/// Masks vague entities, canonicalizes names, and assembles the graph. The
/// full triple set is kept; only causal relations enter the adjacency.
pub fn build_graph(raw: &[RawTriple], rf: &RelationFilter, syn: &SynonymMap, vague: &VagueMask) -> KnowledgeGraph {
    let canonical: Vec<CanonicalTriple> = mask_vague(raw, vague).iter().map(|t| canonicalize(t, syn)).collect();
    KnowledgeGraph::assemble(mask_vague(&canonical, vague), rf)
}
