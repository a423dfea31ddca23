//! Graph-grounded multiple-choice probes.

mod generate;
mod types;
mod validate;

pub use generate::{
    gen_directional, gen_fitb, gen_multihop_pair, gen_probe1, gen_probe2, gen_single_hop, intersection_fingerprint,
    intersection_graph, Composition, GenOutput,
};
pub use types::*;
pub use validate::{validate_probe_set, Finding, ValidationReport};
