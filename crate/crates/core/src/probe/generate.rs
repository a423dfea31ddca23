//! Seeded MCQ synthesis from graph structure.
//!
//! Every generator walks a seeded permutation of its candidates (triples or
//! target entities) and emits an item whenever enough distractors survive the
//! exclusion and synonym rules. Candidates that cannot be filled are skipped
//! with a warning, so a generator may return fewer than `n` items.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::types::*;
use crate::error::{Error, Result};
use crate::kg::{CanonicalTriple, IntersectionSet, KnowledgeGraph, RelationFilter, SynonymMap};

/// Share of each kind in a composed probe set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Composition {
    pub single_hop: f64,
    pub multi_hop: f64,
    pub fitb: f64,
}

impl Default for Composition {
    fn default() -> Self {
        Composition {
            single_hop: 0.4,
            multi_hop: 0.4,
            fitb: 0.2,
        }
    }
}

impl Composition {
    /// Item counts per kind summing to `n`; FITB absorbs rounding.
    pub fn quotas(&self, n: usize) -> [usize; 3] {
        let total = self.single_hop + self.multi_hop + self.fitb;
        let single = ((n as f64) * self.single_hop / total).round() as usize;
        let multi = (((n as f64) * self.multi_hop / total).round() as usize).min(n - single.min(n));
        let single = single.min(n);
        [single, multi, n - single - multi]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenOutput {
    pub items: Vec<ProbeItem>,
    pub warnings: Vec<String>,
}

const STREAM_SINGLE: u64 = 1;
const STREAM_MULTI: u64 = 2;
const STREAM_FITB: u64 = 3;
const STREAM_DIRECTIONAL: u64 = 4;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// log2 in-degree bucket: 0 -> 0, 1..2 -> 1, 3..6 -> 2, ...
fn degree_bucket(deg: usize) -> u32 {
    (deg as u64 + 1).ilog2()
}

/// Shuffles, then stably moves candidates whose in-degree bucket is within
/// one of the reference bucket to the front, ordering the rest by distance.
fn order_by_frequency(g: &KnowledgeGraph, pool: &mut [usize], reference: usize, rng: &mut ChaCha8Rng) {
    pool.shuffle(rng);
    let target = degree_bucket(g.in_degree(reference)) as i64;
    pool.sort_by_key(|&c| {
        let d = (degree_bucket(g.in_degree(c)) as i64 - target).unsigned_abs();
        if d <= 1 {
            0
        } else {
            d
        }
    });
}

fn lettered(texts: Vec<String>) -> Vec<LetteredOption> {
    texts
        .into_iter()
        .zip(LETTERS)
        .map(|(text, letter)| LetteredOption {
            letter: letter.to_string(),
            text,
            pair: None,
        })
        .collect()
}

fn letters_of(options: &[LetteredOption]) -> Vec<String> {
    options.iter().map(|o| o.letter.clone()).collect()
}

/// Graph lookups shared by the generators.
struct Ctx<'a> {
    g: &'a KnowledgeGraph,
    syn: &'a SynonymMap,
    /// First causal triple (in graph order) for each adjacency edge.
    edge_triple: HashMap<(usize, usize), usize>,
    seed: u64,
}

impl<'a> Ctx<'a> {
    fn new(g: &'a KnowledgeGraph, syn: &'a SynonymMap, seed: u64) -> Self {
        let mut edge_triple = HashMap::new();
        for (i, t) in g.triples().iter().enumerate() {
            if g.is_causal(t) {
                let key = (g.entity_index(&t.head).unwrap(), g.entity_index(&t.tail).unwrap());
                edge_triple.entry(key).or_insert(i);
            }
        }
        Ctx { g, syn, edge_triple, seed }
    }

    fn ck(&self, idx: usize) -> String {
        self.syn.canonical_key(self.g.entity(idx))
    }

    fn idx(&self, name: &str) -> usize {
        self.g.entity_index(name).expect("triple endpoints are graph entities")
    }

    fn edge_source(&self, from: usize, to: usize) -> CanonicalTriple {
        self.g.triples()[self.edge_triple[&(from, to)]].clone()
    }

    /// Canonical keys of every `c` with `(head, relation, c)` in the graph.
    fn objects_of(&self, head: usize, relation: &str) -> HashSet<String> {
        self.g
            .out_neighbors(head)
            .iter()
            .filter(|&&c| self.g.contains_triple(self.g.entity(head), relation, self.g.entity(c)))
            .map(|&c| self.ck(c))
            .collect()
    }

    /// Canonical keys of every `c` with `(c, relation, tail)` in the graph.
    fn subjects_of(&self, tail: usize, relation: &str) -> HashSet<String> {
        self.g
            .in_neighbors(tail)
            .iter()
            .filter(|&&c| self.g.contains_triple(self.g.entity(c), relation, self.g.entity(tail)))
            .map(|&c| self.ck(c))
            .collect()
    }

    /// Takes up to `k` candidates whose canonical key is neither blocked nor
    /// already taken.
    fn pick(&self, pool: &[usize], k: usize, taken: &mut HashSet<String>, blocked: &HashSet<String>) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        for &c in pool {
            if out.len() == k {
                break;
            }
            let key = self.ck(c);
            if blocked.contains(&key) || taken.contains(&key) {
                continue;
            }
            taken.insert(key);
            out.push(c);
        }
        out
    }

    fn single_hop(&self, t: &CanonicalTriple, rng: &mut ChaCha8Rng) -> std::result::Result<ProbeItem, String> {
        let (u, v) = (self.idx(&t.head), self.idx(&t.tail));
        let mut blocked = self.objects_of(u, &t.relation);
        blocked.insert(self.ck(u));
        let mut pool: Vec<usize> = self.g.in_neighbors(u).iter().copied().filter(|&c| c != u && c != v).collect();
        order_by_frequency(self.g, &mut pool, v, rng);
        let mut taken = HashSet::from([self.ck(v)]);
        let distractors = self.pick(&pool, 3, &mut taken, &blocked);
        if distractors.len() < 3 {
            return Err(format!("single-hop: {:?} has only {} usable in-neighbor distractors", t.verbalize(), distractors.len()));
        }
        let mut texts: Vec<String> = std::iter::once(v).chain(distractors).map(|i| self.g.entity(i).to_string()).collect();
        texts.shuffle(rng);
        let options = lettered(texts);
        let key = options.iter().find(|o| o.text == t.tail).unwrap().letter.clone();
        Ok(ProbeItem {
            item_id: String::new(),
            kind: ProbeKind::SingleHop,
            stem: format!("{} {}:", t.head, t.relation),
            atomic_options: None,
            allowed_letters: letters_of(&options),
            options,
            key,
            source_triples: vec![t.clone()],
            seed: self.seed,
            target: None,
            masked: None,
        })
    }

    fn fitb(&self, t: &CanonicalTriple, rng: &mut ChaCha8Rng) -> std::result::Result<ProbeItem, String> {
        let (u, v) = (self.idx(&t.head), self.idx(&t.tail));
        let slot = if rng.gen_bool(0.5) { MaskedSlot::Head } else { MaskedSlot::Tail };
        let (answer, other, mut blocked, stem) = match slot {
            MaskedSlot::Tail => (v, u, self.objects_of(u, &t.relation), format!("{} {} ___.", t.head, t.relation)),
            MaskedSlot::Head => (u, v, self.subjects_of(v, &t.relation), format!("___ {} {}.", t.relation, t.tail)),
        };
        blocked.insert(self.ck(other));
        let mut pool: Vec<usize> = (0..self.g.entities().len()).filter(|&c| c != answer && c != other).collect();
        order_by_frequency(self.g, &mut pool, answer, rng);
        let mut taken = HashSet::from([self.ck(answer)]);
        let distractors = self.pick(&pool, 3, &mut taken, &blocked);
        if distractors.len() < 3 {
            return Err(format!("fitb: not enough distractor labels for {:?}", t.verbalize()));
        }
        let answer_text = self.g.entity(answer).to_string();
        let mut texts: Vec<String> = std::iter::once(answer).chain(distractors).map(|i| self.g.entity(i).to_string()).collect();
        texts.shuffle(rng);
        let options = lettered(texts);
        let key = options.iter().find(|o| o.text == answer_text).unwrap().letter.clone();
        Ok(ProbeItem {
            item_id: String::new(),
            kind: ProbeKind::Fitb,
            stem,
            atomic_options: None,
            allowed_letters: letters_of(&options),
            options,
            key,
            source_triples: vec![t.clone()],
            seed: self.seed,
            target: None,
            masked: Some(slot),
        })
    }

    /// Picks two direct causes of `x` with distinct canonical labels.
    fn correct_pair(&self, candidates: &[usize], x: usize, rng: &mut ChaCha8Rng) -> Option<(usize, usize)> {
        let mut shuffled = candidates.to_vec();
        shuffled.shuffle(rng);
        let blocked = HashSet::from([self.ck(x)]);
        let mut taken = HashSet::new();
        match self.pick(&shuffled, 2, &mut taken, &blocked)[..] {
            [a, b] => Some((a, b)),
            _ => None,
        }
    }

    fn multi_hop(&self, x: usize, rng: &mut ChaCha8Rng) -> std::result::Result<ProbeItem, String> {
        let target = self.g.entity(x).to_string();
        let (p1, p2) = self.g.causes_of_index(x);
        if p1.len() < 2 {
            return Err(format!("multi-hop: {target:?} has fewer than two direct causes"));
        }
        let p1_set: HashSet<usize> = p1.iter().copied().collect();
        let (a, b) = self
            .correct_pair(&p1, x, rng)
            .ok_or_else(|| format!("multi-hop: direct causes of {target:?} collapse under the synonym map"))?;

        let mut primary: Vec<usize> = p2.iter().copied().filter(|u| !p1_set.contains(u)).collect();
        primary.shuffle(rng);
        let mut near: Vec<usize> = std::iter::once(x)
            .chain(p1.iter().copied())
            .flat_map(|s| self.g.out_neighbors(s).iter().copied())
            .filter(|c| *c != x && !p1_set.contains(c) && !primary.contains(c))
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        near.shuffle(rng);
        let pool: Vec<usize> = primary.into_iter().chain(near).collect();

        // No distractor may be a spelling of any direct cause, or of x itself.
        let mut blocked: HashSet<String> = p1.iter().map(|&u| self.ck(u)).collect();
        blocked.insert(self.ck(x));
        let mut taken = HashSet::new();
        let distractors = self.pick(&pool, 2, &mut taken, &blocked);
        if distractors.len() < 2 {
            return Err(format!("multi-hop: {target:?} has fewer than two non-parent distractors"));
        }

        let mut atoms: Vec<usize> = vec![a, b, distractors[0], distractors[1]];
        atoms.shuffle(rng);
        let atomic_options: Vec<AtomicOption> = atoms
            .iter()
            .enumerate()
            .map(|(i, &e)| AtomicOption {
                number: i as u8 + 1,
                text: self.g.entity(e).to_string(),
                fact: AtomicFact::Entity {
                    label: self.g.entity(e).to_string(),
                },
            })
            .collect();
        let num = |e: usize| atoms.iter().position(|&z| z == e).unwrap() as u8 + 1;
        let correct = sorted_pair(num(a), num(b));
        let (options, key) = pair_options(correct, 3, rng);
        Ok(ProbeItem {
            item_id: String::new(),
            kind: ProbeKind::MultiHopPair,
            stem: format!("Which two are direct causes of {target}?"),
            atomic_options: Some(atomic_options),
            allowed_letters: letters_of(&options),
            options,
            key,
            source_triples: vec![self.edge_source(a, x), self.edge_source(b, x)],
            seed: self.seed,
            target: Some(target),
            masked: None,
        })
    }

    /// Pair-selection over directed edges: the two true edges into `x`, the
    /// reversal of one of them, and either the other reversal or a two-hop
    /// cause posing as a parent.
    fn directional(&self, x: usize, rng: &mut ChaCha8Rng) -> std::result::Result<ProbeItem, String> {
        let target = self.g.entity(x).to_string();
        let (p1, p2) = self.g.causes_of_index(x);
        let no_reverse: Vec<usize> = p1.iter().copied().filter(|&u| !self.g.adjacency().get(x, u)).collect();
        if no_reverse.len() < 2 {
            return Err(format!("directional: {target:?} lacks two parents without a reverse edge"));
        }
        let (a, b) = self
            .correct_pair(&no_reverse, x, rng)
            .ok_or_else(|| format!("directional: parents of {target:?} collapse under the synonym map"))?;
        let p1_set: HashSet<usize> = p1.iter().copied().collect();
        let used = HashSet::from([self.ck(a), self.ck(b), self.ck(x)]);
        let mut grand: Vec<usize> = p2
            .iter()
            .copied()
            .filter(|u| !p1_set.contains(u) && !used.contains(&self.ck(*u)))
            .collect();
        grand.shuffle(rng);
        let edge = |from: usize, to: usize| (from, to);
        let fourth = match grand.first() {
            Some(&w) if rng.gen_bool(0.5) => edge(w, x),
            _ => edge(x, b),
        };
        let mut atoms = [edge(a, x), edge(b, x), edge(x, a), fourth];
        atoms.shuffle(rng);
        let atomic_options: Vec<AtomicOption> = atoms
            .iter()
            .enumerate()
            .map(|(i, &(f, t))| AtomicOption {
                number: i as u8 + 1,
                text: format!("{} → {}", self.g.entity(f), self.g.entity(t)),
                fact: AtomicFact::Edge {
                    from: self.g.entity(f).to_string(),
                    to: self.g.entity(t).to_string(),
                },
            })
            .collect();
        let num = |e: (usize, usize)| atoms.iter().position(|&z| z == e).unwrap() as u8 + 1;
        let correct = sorted_pair(num(edge(a, x)), num(edge(b, x)));
        let (options, key) = pair_options(correct, 4, rng);
        Ok(ProbeItem {
            item_id: String::new(),
            kind: ProbeKind::MultiHopPair,
            stem: format!("Which two edges point directly into {target}?"),
            atomic_options: Some(atomic_options),
            allowed_letters: letters_of(&options),
            options,
            key,
            source_triples: vec![self.edge_source(a, x), self.edge_source(b, x)],
            seed: self.seed,
            target: Some(target),
            masked: None,
        })
    }
}

fn sorted_pair(i: u8, j: u8) -> [u8; 2] {
    if i < j {
        [i, j]
    } else {
        [j, i]
    }
}

/// The keyed pair plus `wrong` of the other five 2-combinations of 1..4,
/// shuffled and lettered.
fn pair_options(correct: [u8; 2], wrong: usize, rng: &mut ChaCha8Rng) -> (Vec<LetteredOption>, String) {
    let mut others: Vec<[u8; 2]> = (1..=4u8)
        .flat_map(|i| ((i + 1)..=4).map(move |j| [i, j]))
        .filter(|p| *p != correct)
        .collect();
    others.shuffle(rng);
    let mut pairs: Vec<[u8; 2]> = std::iter::once(correct).chain(others.into_iter().take(wrong)).collect();
    pairs.shuffle(rng);
    let options: Vec<LetteredOption> = pairs
        .iter()
        .zip(LETTERS)
        .map(|(p, letter)| LetteredOption {
            letter: letter.to_string(),
            text: format!("{} and {}", p[0], p[1]),
            pair: Some(*p),
        })
        .collect();
    let key = options.iter().find(|o| o.pair == Some(correct)).unwrap().letter.clone();
    (options, key)
}

fn shuffled_causal_triples<'g>(g: &'g KnowledgeGraph, rng: &mut ChaCha8Rng) -> Vec<&'g CanonicalTriple> {
    let mut cands: Vec<&CanonicalTriple> = g.causal_triples().filter(|t| t.head != t.tail).collect();
    cands.shuffle(rng);
    cands
}

fn collect<T, F>(candidates: Vec<T>, n: usize, kind: &str, mut make: F) -> GenOutput
where
    F: FnMut(T) -> std::result::Result<ProbeItem, String>,
{
    let mut out = GenOutput::default();
    for c in candidates {
        if out.items.len() >= n {
            break;
        }
        match make(c) {
            Ok(item) => out.items.push(item),
            Err(reason) => {
                log::debug!("{reason}");
                out.warnings.push(reason);
            }
        }
    }
    if out.items.len() < n {
        let msg = format!("requested {n} {kind} items, generated {}", out.items.len());
        log::debug!("{msg}");
        out.warnings.push(msg);
    }
    out
}

/// Single-hop items: stem `(u, r, ·)`, key `v`, three distractors from the
/// in-neighbors of `u`.
pub fn gen_single_hop(g: &KnowledgeGraph, syn: &SynonymMap, n: usize, seed: u64) -> GenOutput {
    let ctx = Ctx::new(g, syn, seed);
    let mut rng = rng_for(seed, STREAM_SINGLE);
    let cands = shuffled_causal_triples(g, &mut rng);
    collect(cands, n, "single-hop", |t| ctx.single_hop(t, &mut rng))
}

/// Pair-selection items keyed on two direct causes of a target.
pub fn gen_multihop_pair(g: &KnowledgeGraph, syn: &SynonymMap, n: usize, seed: u64) -> GenOutput {
    let ctx = Ctx::new(g, syn, seed);
    let mut rng = rng_for(seed, STREAM_MULTI);
    let mut targets: Vec<usize> = (0..g.entities().len()).filter(|&x| g.in_degree(x) >= 2).collect();
    targets.shuffle(&mut rng);
    collect(targets, n, "multi-hop", |x| ctx.multi_hop(x, &mut rng))
}

/// Fill-in-the-blank items masking the head or tail of a causal triple.
pub fn gen_fitb(g: &KnowledgeGraph, syn: &SynonymMap, n: usize, seed: u64) -> GenOutput {
    let ctx = Ctx::new(g, syn, seed);
    let mut rng = rng_for(seed, STREAM_FITB);
    let cands = shuffled_causal_triples(g, &mut rng);
    collect(cands, n, "fitb", |t| ctx.fitb(t, &mut rng))
}

/// Directional pair-selection items over edges into a target.
pub fn gen_directional(g: &KnowledgeGraph, syn: &SynonymMap, n: usize, seed: u64) -> GenOutput {
    let ctx = Ctx::new(g, syn, seed);
    let mut rng = rng_for(seed, STREAM_DIRECTIONAL);
    let mut targets: Vec<usize> = (0..g.entities().len()).filter(|&x| g.in_degree(x) >= 2).collect();
    targets.shuffle(&mut rng);
    collect(targets, n, "directional multi-hop", |x| ctx.directional(x, &mut rng))
}

/// Takes each kind's quota, tops up shortfalls from the other kinds'
/// leftovers, and assigns sequential ids.
fn compose(origin: Origin, pools: [GenOutput; 3], quotas: [usize; 3], n: usize) -> (Vec<ProbeItem>, Vec<String>) {
    let mut warnings: Vec<String> = Vec::new();
    let mut taken: [Vec<ProbeItem>; 3] = Default::default();
    let mut leftovers: [std::vec::IntoIter<ProbeItem>; 3] = Default::default();
    for (k, pool) in pools.into_iter().enumerate() {
        warnings.extend(pool.warnings);
        let mut it = pool.items.into_iter();
        taken[k] = it.by_ref().take(quotas[k]).collect();
        if taken[k].len() < quotas[k] {
            let kind = ["single-hop", if origin == Origin::Probe1 { "multi-hop" } else { "directional multi-hop" }, "fitb"][k];
            log::warn!("{}: {} of {} {kind} items; topping up from other kinds", origin.as_str(), taken[k].len(), quotas[k]);
        }
        leftovers[k] = it;
    }
    let mut total: usize = taken.iter().map(Vec::len).sum();
    for k in 0..3 {
        while total < n {
            match leftovers[k].next() {
                Some(item) => {
                    taken[k].push(item);
                    total += 1;
                }
                None => break,
            }
        }
    }
    if total < n {
        warnings.push(format!("{}: requested {n} items, generated {total}", origin.as_str()));
    }
    let prefix = match origin {
        Origin::Probe1 => "p1",
        Origin::Probe2 => "p2",
    };
    let items = taken
        .into_iter()
        .flatten()
        .enumerate()
        .map(|(i, mut item)| {
            item.item_id = format!("{prefix}-{:04}", i + 1);
            item
        })
        .collect();
    (items, warnings)
}

/// Probe 1: single-hop, multi-hop pair and FITB items from one graph.
pub fn gen_probe1(g: &KnowledgeGraph, syn: &SynonymMap, n: usize, seed: u64, composition: Composition) -> (ProbeSet, Vec<String>) {
    let quotas = composition.quotas(n);
    let pools = [
        gen_single_hop(g, syn, n, seed),
        gen_multihop_pair(g, syn, n, seed),
        gen_fitb(g, syn, n, seed),
    ];
    let (items, warnings) = compose(Origin::Probe1, pools, quotas, n);
    (
        ProbeSet {
            origin: Origin::Probe1,
            generation_seed: seed,
            graph_fingerprint: g.fingerprint(),
            items,
        },
        warnings,
    )
}

/// The subgraph spanned by both sides of every retained intersection pair.
pub fn intersection_graph(inter: &IntersectionSet) -> Result<KnowledgeGraph> {
    let triples = inter.triples();
    let rf = RelationFilter::new(triples.iter().map(|t| t.relation.as_str()))
        .map_err(|_| Error::Validation("intersection set is empty".into()))?;
    Ok(KnowledgeGraph::assemble(triples, &rf))
}

pub fn intersection_fingerprint(inter: &IntersectionSet) -> String {
    let json = serde_json::to_string(inter).expect("intersection serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// Probe 2: single-hop and FITB restricted to the intersection subgraph, plus
/// directional pair-selection items.
pub fn gen_probe2(inter: &IntersectionSet, syn: &SynonymMap, n: usize, seed: u64, composition: Composition) -> Result<(ProbeSet, Vec<String>)> {
    if inter.items.is_empty() {
        return Err(Error::Validation("cannot build probe 2 from an empty intersection".into()));
    }
    let g = intersection_graph(inter)?;
    let quotas = composition.quotas(n);
    let pools = [
        gen_single_hop(&g, syn, n, seed),
        gen_directional(&g, syn, n, seed),
        gen_fitb(&g, syn, n, seed),
    ];
    let (items, warnings) = compose(Origin::Probe2, pools, quotas, n);
    Ok((
        ProbeSet {
            origin: Origin::Probe2,
            generation_seed: seed,
            graph_fingerprint: intersection_fingerprint(inter),
            items,
        },
        warnings,
    ))
}
