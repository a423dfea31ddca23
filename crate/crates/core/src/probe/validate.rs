//! Structural and semantic checks on a generated probe set.

use std::collections::{BTreeSet, HashSet};

use serde::Serialize;

use super::types::*;
use crate::kg::{KnowledgeGraph, SynonymMap};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub item_id: Option<String>,
    pub check: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub items_checked: usize,
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.findings.is_empty()
    }

    fn push(&mut self, item: Option<&ProbeItem>, check: &'static str, message: impl Into<String>) {
        self.findings.push(Finding {
            item_id: item.map(|i| i.item_id.clone()),
            check,
            message: message.into(),
        });
    }
}

/// Checks `set` against the graph it was generated from. For probe 2 that is
/// the intersection subgraph.
pub fn validate_probe_set(set: &ProbeSet, graph: &KnowledgeGraph, expected_fingerprint: &str, syn: &SynonymMap) -> ValidationReport {
    let mut report = ValidationReport {
        items_checked: set.items.len(),
        ..Default::default()
    };
    if set.graph_fingerprint != expected_fingerprint {
        report.push(
            None,
            "fingerprint",
            format!("probe set was generated from {} but validated against {}", set.graph_fingerprint, expected_fingerprint),
        );
    }
    let mut ids = HashSet::new();
    for item in &set.items {
        if !ids.insert(item.item_id.as_str()) {
            report.push(Some(item), "duplicate_id", format!("item id {:?} repeats", item.item_id));
        }
        check_item(set.origin, item, graph, syn, &mut report);
    }
    report
}

fn expected_option_count(origin: Origin, item: &ProbeItem) -> usize {
    match (origin, item.kind) {
        (Origin::Probe2, ProbeKind::MultiHopPair) => 5,
        _ => 4,
    }
}

fn check_item(origin: Origin, item: &ProbeItem, g: &KnowledgeGraph, syn: &SynonymMap, report: &mut ValidationReport) {
    let n = expected_option_count(origin, item);
    if item.options.len() != n {
        report.push(Some(item), "option_count", format!("expected {n} options, found {}", item.options.len()));
    }
    let letters: Vec<String> = item.options.iter().map(|o| o.letter.clone()).collect();
    let expected: Vec<String> = LETTERS.iter().take(item.options.len()).map(|s| s.to_string()).collect();
    if letters != expected || item.allowed_letters != letters {
        report.push(
            Some(item),
            "letters",
            format!("options {letters:?} and allowed letters {:?} disagree", item.allowed_letters),
        );
    }
    if !item.allowed_letters.contains(&item.key) || item.key_option().is_none() {
        report.push(Some(item), "key_not_allowed", format!("key {:?} is not an offered letter", item.key));
    }
    let mut seen = HashSet::new();
    let mut seen_canonical = HashSet::new();
    for o in &item.options {
        if !seen.insert(o.text.as_str()) {
            report.push(Some(item), "duplicate_option", format!("option text {:?} repeats", o.text));
        } else if o.pair.is_none() && !seen_canonical.insert(syn.canonical_key(&o.text)) {
            report.push(Some(item), "canonical_collision", format!("option {:?} is a synonym of another option", o.text));
        }
    }
    if let Some(atoms) = &item.atomic_options {
        let mut keys = HashSet::new();
        for a in atoms {
            let key = match &a.fact {
                AtomicFact::Entity { label } => syn.canonical_key(label),
                AtomicFact::Edge { from, to } => format!("{}\u{2192}{}", syn.canonical_key(from), syn.canonical_key(to)),
            };
            if !keys.insert(key) {
                report.push(Some(item), "canonical_collision", format!("atomic option {:?} collides with another", a.text));
            }
        }
    }
    if item.source_triples.is_empty() {
        report.push(Some(item), "missing_source", "item has no source triples");
    }
    for t in &item.source_triples {
        match g.get_triple(&t.key()) {
            Some(found) if g.is_causal(found) => {}
            Some(_) => report.push(Some(item), "unknown_source", format!("source {:?} is not causal", t.verbalize())),
            None => report.push(Some(item), "unknown_source", format!("source {:?} is not in the graph", t.verbalize())),
        }
    }
    if report.findings.iter().any(|f| f.item_id.as_deref() == Some(&item.item_id) && f.check == "unknown_source") {
        return;
    }
    match item.kind {
        ProbeKind::SingleHop | ProbeKind::Fitb => check_entity_item(item, g, syn, report),
        ProbeKind::MultiHopPair => check_pair_item(item, g, syn, report),
    }
}

fn canonical_keys<'a>(g: &KnowledgeGraph, syn: &SynonymMap, idx: impl Iterator<Item = &'a usize>) -> BTreeSet<String> {
    idx.map(|&i| syn.canonical_key(g.entity(i))).collect()
}

fn check_entity_item(item: &ProbeItem, g: &KnowledgeGraph, syn: &SynonymMap, report: &mut ValidationReport) {
    let Some(t) = item.source_triples.first() else { return };
    let (Some(u), Some(v)) = (g.entity_index(&t.head), g.entity_index(&t.tail)) else {
        return;
    };
    let (answer, correct) = match (item.kind, item.masked) {
        (ProbeKind::Fitb, Some(MaskedSlot::Head)) => {
            let subs = g.in_neighbors(v).iter().filter(|&&c| g.contains_triple(g.entity(c), &t.relation, &t.tail));
            (&t.head, canonical_keys(g, syn, subs))
        }
        (ProbeKind::Fitb, None) => {
            report.push(Some(item), "key_mismatch", "fill-in-the-blank item does not say which slot is masked");
            return;
        }
        _ => {
            let objs = g.out_neighbors(u).iter().filter(|&&c| g.contains_triple(&t.head, &t.relation, g.entity(c)));
            (&t.tail, canonical_keys(g, syn, objs))
        }
    };
    if let Some(k) = item.key_option() {
        if &k.text != answer {
            report.push(Some(item), "key_mismatch", format!("key is {:?} but the source triple gives {:?}", k.text, answer));
        }
    }
    let n_correct = item.options.iter().filter(|o| correct.contains(&syn.canonical_key(&o.text))).count();
    if n_correct > 1 {
        report.push(Some(item), "multiple_correct", format!("{n_correct} options are true completions"));
    }
}

fn check_pair_item(item: &ProbeItem, g: &KnowledgeGraph, syn: &SynonymMap, report: &mut ValidationReport) {
    let Some(target) = item.target.as_deref() else {
        report.push(Some(item), "pair_soundness", "pair-selection item has no target");
        return;
    };
    let Some(x) = g.entity_index(target) else {
        report.push(Some(item), "pair_soundness", format!("target {target:?} is not in the graph"));
        return;
    };
    if item.atomic_options.is_none() {
        report.push(Some(item), "pair_soundness", "pair-selection item has no atomic options");
        return;
    }
    let (p1, _) = g.causes_of_index(x);
    let p1_keys = canonical_keys(g, syn, p1.iter());
    let target_key = syn.canonical_key(target);
    let atom_true = |a: &AtomicOption| match &a.fact {
        AtomicFact::Entity { label } => p1_keys.contains(&syn.canonical_key(label)),
        AtomicFact::Edge { from, to } => syn.canonical_key(to) == target_key && g.has_edge(from, to),
    };
    let mut correct = Vec::new();
    for o in &item.options {
        let Some([i, j]) = o.pair else {
            report.push(Some(item), "pair_soundness", format!("option {} names no pair", o.letter));
            continue;
        };
        let (Some(a), Some(b)) = (item.atomic(i), item.atomic(j)) else {
            report.push(Some(item), "pair_soundness", format!("option {} references a missing atomic option", o.letter));
            continue;
        };
        if i == j {
            report.push(Some(item), "pair_soundness", format!("option {} pairs an atomic option with itself", o.letter));
        }
        if atom_true(a) && atom_true(b) && i != j {
            correct.push(o.letter.clone());
        }
    }
    if correct.len() > 1 {
        report.push(Some(item), "multiple_correct", format!("options {correct:?} are all correct pairs"));
    }
    if !correct.contains(&item.key) {
        report.push(Some(item), "key_mismatch", format!("key {:?} is not a pair of direct causes of {target:?}", item.key));
    }
    if let Some([i, j]) = item.key_option().and_then(|k| k.pair) {
        for n in [i, j] {
            if let Some(AtomicFact::Edge { from, to }) = item.atomic(n).map(|a| &a.fact) {
                if syn.canonical_key(from) == target_key && syn.canonical_key(to) != target_key {
                    report.push(Some(item), "reversed_edge_keyed", format!("keyed pair contains reversed edge {from} → {to}"));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{CanonicalTriple, RelationFilter};
    use crate::probe::{gen_probe1, Composition};

    fn graph() -> KnowledgeGraph {
        let edges = [("u", "x"), ("v", "x"), ("w", "u"), ("x", "f"), ("a", "u"), ("b", "u"), ("c", "u"), ("u", "g")];
        KnowledgeGraph::assemble(
            edges.iter().map(|(h, t)| CanonicalTriple::new(*h, "causes", *t)),
            &RelationFilter::default(),
        )
    }

    #[test]
    fn generated_set_is_clean() {
        let g = graph();
        let syn = SynonymMap::default();
        let (set, _) = gen_probe1(&g, &syn, 10, 5, Composition::default());
        assert!(!set.items.is_empty());
        let report = validate_probe_set(&set, &g, &g.fingerprint(), &syn);
        assert!(report.is_ok(), "{:?}", report.findings);
    }

    #[test]
    fn tampering_is_reported() {
        let g = graph();
        let syn = SynonymMap::default();
        let (mut set, _) = gen_probe1(&g, &syn, 10, 5, Composition::default());
        let wrong = set.items[0].options.iter().find(|o| o.letter != set.items[0].key).unwrap().letter.clone();
        set.items[0].key = wrong;
        set.items[1].item_id = set.items[0].item_id.clone();
        let report = validate_probe_set(&set, &g, "other", &syn);
        let checks: HashSet<&str> = report.findings.iter().map(|f| f.check).collect();
        assert!(checks.contains("key_mismatch"));
        assert!(checks.contains("duplicate_id"));
        assert!(checks.contains("fingerprint"));
    }
}
