//! Retrieval-augmented MCQ evaluation: context retrieval, prompt rendering,
//! answer parsing, and the journaled model × probe × system × temperature grid.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::kg::KnowledgeGraph;
use crate::llm::{ChatClient, ProviderProfile};
use crate::probe::{Origin, ProbeItem, ProbeSet};
use crate::text::{self, SparseVec, TfidfModel};

pub const DEFAULT_TOP_K: usize = 20;
pub const DEFAULT_TEMPERATURES: [f64; 3] = [0.0, 0.2, 0.5];
/// Recorded in place of a letter when no allowed letter can be parsed.
pub const INVALID: &str = "invalid";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GraphSymbol {
    G1,
    G2,
    G3,
}

impl GraphSymbol {
    pub const ALL: [GraphSymbol; 3] = [GraphSymbol::G1, GraphSymbol::G2, GraphSymbol::G3];
}

impl fmt::Display for GraphSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GraphSymbol::G1 => "g1",
            GraphSymbol::G2 => "g2",
            GraphSymbol::G3 => "g3",
        })
    }
}

/// Retrieval source for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum System {
    #[serde(rename = "no_rag")]
    NoRag,
    #[serde(rename = "g1")]
    G1,
    #[serde(rename = "g2")]
    G2,
    #[serde(rename = "g1+g2")]
    G1G2,
    #[serde(rename = "g3")]
    G3,
    #[serde(rename = "g1+g2+g3")]
    G1G2G3,
}

impl System {
    pub const ALL: [System; 6] = [System::NoRag, System::G1, System::G2, System::G1G2, System::G3, System::G1G2G3];

    pub fn as_str(&self) -> &'static str {
        match self {
            System::NoRag => "no_rag",
            System::G1 => "g1",
            System::G2 => "g2",
            System::G1G2 => "g1+g2",
            System::G3 => "g3",
            System::G1G2G3 => "g1+g2+g3",
        }
    }

    pub fn graphs(&self) -> &'static [GraphSymbol] {
        use GraphSymbol::*;
        match self {
            System::NoRag => &[],
            System::G1 => &[G1],
            System::G2 => &[G2],
            System::G1G2 => &[G1, G2],
            System::G3 => &[G3],
            System::G1G2G3 => &[G1, G2, G3],
        }
    }

    /// Comma-separated list, e.g. `no_rag,g1,g1+g2`.
    pub fn parse_list(s: &str) -> Result<Vec<System>> {
        let systems = s
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<System>>>()?;
        if systems.is_empty() {
            return Err(Error::Validation("no systems given".into()));
        }
        let unique: HashSet<_> = systems.iter().collect();
        if unique.len() != systems.len() {
            return Err(Error::Validation(format!("duplicate system in {s:?}")));
        }
        Ok(systems)
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for System {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        System::ALL
            .into_iter()
            .find(|sys| sys.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown system {s:?}; expected one of no_rag, g1, g2, g1+g2, g3, g1+g2+g3")))
    }
}

/// Graph files by symbol; a system may only use symbols that have a path.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GraphPaths {
    pub g1: Option<PathBuf>,
    pub g2: Option<PathBuf>,
    pub g3: Option<PathBuf>,
}

impl GraphPaths {
    pub fn get(&self, sym: GraphSymbol) -> Option<&Path> {
        match sym {
            GraphSymbol::G1 => self.g1.as_deref(),
            GraphSymbol::G2 => self.g2.as_deref(),
            GraphSymbol::G3 => self.g3.as_deref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalConfig {
    pub system: System,
    pub top_k: usize,
    pub paths: GraphPaths,
}

/// Loaded graphs keyed by symbol.
#[derive(Debug, Clone, Default)]
pub struct GraphStore {
    graphs: BTreeMap<GraphSymbol, KnowledgeGraph>,
}

impl GraphStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, sym: GraphSymbol, g: KnowledgeGraph) -> Self {
        self.graphs.insert(sym, g);
        self
    }

    /// Loads every graph the given systems need.
    pub fn load(paths: &GraphPaths, systems: &[System]) -> Result<Self> {
        let mut store = GraphStore::new();
        for sym in systems.iter().flat_map(|s| s.graphs()) {
            if store.graphs.contains_key(sym) {
                continue;
            }
            let path = paths
                .get(*sym)
                .ok_or_else(|| Error::Config(format!("no graph file given for {sym}")))?;
            if !path.exists() {
                return Err(Error::Config(format!("graph file {} for {sym} does not exist", path.display())));
            }
            store.graphs.insert(*sym, KnowledgeGraph::load(path)?);
        }
        Ok(store)
    }

    pub fn get(&self, sym: GraphSymbol) -> Option<&KnowledgeGraph> {
        self.graphs.get(&sym)
    }

    fn for_system(&self, system: System) -> Result<Vec<&KnowledgeGraph>> {
        system
            .graphs()
            .iter()
            .map(|s| self.get(*s).ok_or_else(|| Error::Config(format!("graph {s} needed by {system} is not loaded"))))
            .collect()
    }
}

/// TF-IDF index over the pooled, de-duplicated triple sentences of a system.
#[derive(Debug, Clone)]
pub struct ContextIndex {
    sentences: Vec<String>,
    model: Option<TfidfModel>,
    vectors: Vec<SparseVec>,
}

impl ContextIndex {
    pub fn build<'a, I>(graphs: I) -> Self
    where
        I: IntoIterator<Item = &'a KnowledgeGraph>,
    {
        let pooled: std::collections::BTreeSet<String> =
            graphs.into_iter().flat_map(|g| g.triples().iter().map(|t| t.sentence())).collect();
        let sentences: Vec<String> = pooled.into_iter().collect();
        let docs: Vec<Vec<String>> = sentences.iter().map(|s| text::ngram_features(s)).collect();
        let model = TfidfModel::fit(&docs, 1).ok();
        let vectors = match &model {
            Some(m) => docs.iter().map(|d| m.transform(d)).collect(),
            None => vec![SparseVec::default(); sentences.len()],
        };
        ContextIndex { sentences, model, vectors }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Top `k` sentences by cosine to `query`, ties broken by sentence text.
    pub fn query(&self, query: &str, k: usize) -> Vec<String> {
        let q = match &self.model {
            Some(m) => m.transform(&text::ngram_features(query)),
            None => SparseVec::default(),
        };
        let mut scored: Vec<(f64, &String)> = self.vectors.iter().map(|v| q.dot(v)).zip(&self.sentences).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        scored.into_iter().take(k).map(|(_, s)| s.clone()).collect()
    }
}

/// Text an item is matched against: stem, atomic options and entity options.
pub fn item_query_text(item: &ProbeItem) -> String {
    let mut parts = vec![item.stem.clone()];
    if let Some(atoms) = &item.atomic_options {
        parts.extend(atoms.iter().map(|a| a.text.clone()));
    }
    parts.extend(item.options.iter().filter(|o| o.pair.is_none()).map(|o| o.text.clone()));
    parts.join("\n")
}

pub fn retrieve_context(item: &ProbeItem, rc: &RetrievalConfig, store: &GraphStore) -> Result<Vec<String>> {
    if rc.system == System::NoRag {
        return Ok(Vec::new());
    }
    let index = ContextIndex::build(store.for_system(rc.system)?);
    Ok(index.query(&item_query_text(item), rc.top_k))
}

const QUESTION_MARKER: &str = "Question:\n";

/// The question section of a prompt: stem, numbered atomic options, lettered
/// options.
pub fn question_block(item: &ProbeItem) -> String {
    let mut s = String::new();
    s.push_str(&item.stem);
    s.push('\n');
    if let Some(atoms) = &item.atomic_options {
        for a in atoms {
            s.push_str(&format!("{}. {}\n", a.number, a.text));
        }
    }
    for o in &item.options {
        s.push_str(&format!("{}. {}\n", o.letter, o.text));
    }
    s
}

/// Inverse of the last section of [`render_prompt`].
pub fn question_block_of(prompt: &str) -> &str {
    match prompt.rfind(QUESTION_MARKER) {
        Some(i) => &prompt[i + QUESTION_MARKER.len()..],
        None => prompt,
    }
}

pub fn render_prompt(item: &ProbeItem, context: &[String]) -> String {
    let mut s = format!(
        "You are answering a multiple-choice question.\nReturn ONLY one uppercase letter from this set: {}.\nDo not include explanations or extra text.\n\n",
        item.allowed_letters.join(", ")
    );
    if !context.is_empty() {
        s.push_str("Facts:\n");
        for fact in context {
            s.push_str("- ");
            s.push_str(fact);
            s.push('\n');
        }
        s.push('\n');
    }
    s.push_str(QUESTION_MARKER);
    s.push_str(&question_block(item));
    s
}

/// First standalone character of `response` that, uppercased, is allowed.
pub fn parse_answer(response: &str, allowed: &[String]) -> Option<String> {
    let chars: Vec<char> = response.chars().collect();
    for (i, c) in chars.iter().enumerate() {
        let before = i == 0 || !chars[i - 1].is_alphanumeric();
        let after = i + 1 == chars.len() || !chars[i + 1].is_alphanumeric();
        if !(before && after) {
            continue;
        }
        let up: String = c.to_uppercase().collect();
        if allowed.contains(&up) {
            return Some(up);
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub item_id: String,
    pub model: String,
    pub probe: Origin,
    pub system: System,
    pub temperature: f64,
    pub replicate: u32,
    pub retrieved_context: Vec<String>,
    pub raw_response: String,
    /// An allowed letter, or [`INVALID`].
    pub parsed_letter: String,
    pub key: String,
    pub correct: bool,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunRecord {
    pub fn is_invalid(&self) -> bool {
        self.parsed_letter == INVALID
    }

    fn grid_key(&self) -> GridKey {
        GridKey {
            model: self.model.clone(),
            probe: self.probe,
            system: self.system,
            temperature: self.temperature.to_bits(),
            replicate: self.replicate,
            item_id: self.item_id.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct GridKey {
    model: String,
    probe: Origin,
    system: System,
    temperature: u64,
    replicate: u32,
    item_id: String,
}

/// One provider call: render, send, parse. Transport failures become an
/// invalid record carrying the error.
pub fn evaluate_with_context(
    item: &ProbeItem,
    probe: Origin,
    system: System,
    context: Vec<String>,
    model: &str,
    temperature: f64,
    replicate: u32,
    client: &dyn ChatClient,
) -> RunRecord {
    let prompt = render_prompt(item, &context);
    let start = Instant::now();
    let (raw_response, latency_ms, error) = match client.send(&prompt, model, temperature) {
        Ok(c) => (c.text, c.latency_ms, None),
        Err(e) => (String::new(), start.elapsed().as_millis() as u64, Some(e.to_string())),
    };
    let parsed_letter = parse_answer(&raw_response, &item.allowed_letters).unwrap_or_else(|| INVALID.to_string());
    RunRecord {
        item_id: item.item_id.clone(),
        model: model.to_string(),
        probe,
        system,
        temperature,
        replicate,
        retrieved_context: context,
        raw_response,
        correct: parsed_letter == item.key,
        parsed_letter,
        key: item.key.clone(),
        latency_ms,
        error,
    }
}

pub fn evaluate_item(
    item: &ProbeItem,
    probe: Origin,
    rc: &RetrievalConfig,
    store: &GraphStore,
    profile: &ProviderProfile,
    temperature: f64,
    client: &dyn ChatClient,
) -> Result<RunRecord> {
    let context = retrieve_context(item, rc, store)?;
    Ok(evaluate_with_context(item, probe, rc.system, context, &profile.model, temperature, 0, client))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub systems: Vec<System>,
    pub temperatures: Vec<f64>,
    pub replicates: u32,
    pub top_k: usize,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.systems.is_empty() {
            return Err(Error::Validation("grid needs at least one system".into()));
        }
        if self.temperatures.is_empty() || self.temperatures.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::Validation(format!("temperatures must be non-negative, got {:?}", self.temperatures)));
        }
        if self.replicates == 0 {
            return Err(Error::Validation("replicates must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GridOutcome {
    pub records: Vec<RunRecord>,
    /// Records found in the journal and not re-run.
    pub resumed: usize,
    pub executed: usize,
    /// `model/probe/system/T=../rep=..` cells with at least one failed call.
    pub failed_cells: Vec<String>,
}

pub type ClientFactory<'a> = dyn Fn(&ProviderProfile) -> Result<Box<dyn ChatClient>> + Sync + 'a;

struct Task<'a> {
    rank: usize,
    item: &'a ProbeItem,
    probe: Origin,
    system: System,
    temperature: f64,
    replicate: u32,
    context: &'a [String],
}

/// Reads a journal, tolerating a truncated final line left by an interrupted
/// run.
pub fn read_journal(path: &Path) -> Result<Vec<RunRecord>> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let source = path.display().to_string();
    let lines = jsonl::lines(raw.as_bytes(), &source)?;
    let last = lines.len();
    let mut out = Vec::with_capacity(last);
    for (i, (n, line)) in lines.into_iter().enumerate() {
        match serde_json::from_str::<RunRecord>(&line) {
            Ok(r) => out.push(r),
            Err(e) if i + 1 == last && !raw.ends_with('\n') => {
                log::warn!("{source}:{n}: dropping truncated record ({e})");
            }
            Err(e) => return Err(Error::parse(&source, n, e.to_string())),
        }
    }
    Ok(out)
}

/// Runs the full model × probe × system × temperature × replicate × item
/// grid. With a journal, records already present are skipped, new records
/// are appended as they complete, and the file is finally rewritten in grid
/// order.
pub fn run_grid(
    probes: &[ProbeSet],
    spec: &GridSpec,
    profiles: &[ProviderProfile],
    store: &GraphStore,
    factory: &ClientFactory<'_>,
    journal: Option<&Path>,
) -> Result<GridOutcome> {
    spec.validate()?;
    let mut origins = HashSet::new();
    for p in probes {
        if !origins.insert(p.origin) {
            return Err(Error::Validation(format!("two probe sets for {}", p.origin.as_str())));
        }
    }

    // Contexts depend only on (probe, system, item).
    let mut contexts: HashMap<(Origin, System), Vec<Vec<String>>> = HashMap::new();
    for &system in &spec.systems {
        let index = match system {
            System::NoRag => None,
            _ => Some(ContextIndex::build(store.for_system(system)?)),
        };
        for p in probes {
            let ctx = p
                .items
                .iter()
                .map(|item| match &index {
                    Some(ix) => ix.query(&item_query_text(item), spec.top_k),
                    None => Vec::new(),
                })
                .collect();
            contexts.insert((p.origin, system), ctx);
        }
    }

    let mut existing: HashMap<GridKey, RunRecord> = HashMap::new();
    if let Some(path) = journal.filter(|p| p.exists()) {
        for r in read_journal(path)? {
            existing.insert(r.grid_key(), r);
        }
    }

    let mut slots: Vec<Option<RunRecord>> = Vec::new();
    let mut per_profile: Vec<Vec<Task>> = Vec::new();
    let mut resumed = 0;
    for profile in profiles {
        let mut tasks = Vec::new();
        for p in probes {
            for &system in &spec.systems {
                let ctx = &contexts[&(p.origin, system)];
                for &temperature in &spec.temperatures {
                    for replicate in 0..spec.replicates {
                        for (i, item) in p.items.iter().enumerate() {
                            let key = GridKey {
                                model: profile.model.clone(),
                                probe: p.origin,
                                system,
                                temperature: temperature.to_bits(),
                                replicate,
                                item_id: item.item_id.clone(),
                            };
                            let rank = slots.len();
                            match existing.remove(&key) {
                                Some(r) => {
                                    resumed += 1;
                                    slots.push(Some(r));
                                }
                                None => {
                                    slots.push(None);
                                    tasks.push(Task { rank, item, probe: p.origin, system, temperature, replicate, context: &ctx[i] });
                                }
                            }
                        }
                    }
                }
            }
        }
        per_profile.push(tasks);
    }
    if !existing.is_empty() {
        return Err(Error::Validation(format!(
            "journal holds {} records outside the requested grid; use a fresh journal",
            existing.len()
        )));
    }

    let mut writer = match journal {
        Some(path) => Some(
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?,
        ),
        None => None,
    };
    // A truncated tail would corrupt the next appended line.
    if let (Some(path), Some(w)) = (journal, writer.as_mut()) {
        let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if !raw.is_empty() && !raw.ends_with(b"\n") {
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
    }

    let mut executed = 0;
    for (profile, tasks) in profiles.iter().zip(&per_profile) {
        if tasks.is_empty() {
            continue;
        }
        let client = factory(profile)?;
        let client: &dyn ChatClient = &*client;
        let next = AtomicUsize::new(0);
        let workers = profile.max_in_flight.clamp(1, tasks.len());
        let (tx, rx) = mpsc::channel::<(usize, RunRecord)>();
        std::thread::scope(|scope| -> Result<()> {
            for _ in 0..workers {
                let tx = tx.clone();
                let next = &next;
                scope.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(t) = tasks.get(i) else { break };
                    let rec = evaluate_with_context(
                        t.item,
                        t.probe,
                        t.system,
                        t.context.to_vec(),
                        &profile.model,
                        t.temperature,
                        t.replicate,
                        client,
                    );
                    if tx.send((t.rank, rec)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            for (rank, rec) in rx {
                if let (Some(w), Some(path)) = (writer.as_mut(), journal) {
                    let line = serde_json::to_string(&rec)?;
                    writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
                }
                slots[rank] = Some(rec);
                executed += 1;
            }
            Ok(())
        })?;
    }
    drop(writer);

    let records: Vec<RunRecord> = slots.into_iter().map(|r| r.expect("every grid slot filled")).collect();
    if let Some(path) = journal {
        jsonl::write(path, &records)?;
    }
    let mut failed_cells: Vec<String> = Vec::new();
    for r in records.iter().filter(|r| r.error.is_some()) {
        let cell = format!("{}/{}/{}/T={}/rep={}", r.model, r.probe.as_str(), r.system, r.temperature, r.replicate);
        if failed_cells.last() != Some(&cell) {
            failed_cells.push(cell);
        }
    }
    failed_cells.dedup();
    Ok(GridOutcome { records, resumed, executed, failed_cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{CanonicalTriple, RelationFilter};
    use crate::llm::{OracleClient, RandomClient};
    use crate::probe::{LetteredOption, ProbeKind};

    fn letters(n: usize) -> Vec<String> {
        crate::probe::LETTERS[..n].iter().map(|s| s.to_string()).collect()
    }

    fn item(id: &str, stem: &str, n: usize, key: &str) -> ProbeItem {
        ProbeItem {
            item_id: id.into(),
            kind: ProbeKind::SingleHop,
            stem: stem.into(),
            atomic_options: None,
            options: letters(n)
                .into_iter()
                .enumerate()
                .map(|(i, letter)| LetteredOption { letter, text: format!("option {id} {i}"), pair: None })
                .collect(),
            allowed_letters: letters(n),
            key: key.into(),
            source_triples: vec![],
            seed: 0,
            target: None,
            masked: None,
        }
    }

    fn set(items: Vec<ProbeItem>) -> ProbeSet {
        ProbeSet { origin: Origin::Probe1, generation_seed: 0, graph_fingerprint: String::new(), items }
    }

    #[test]
    fn parse_answer_examples() {
        let allowed = letters(5);
        assert_eq!(parse_answer("B", &allowed).as_deref(), Some("B"));
        assert_eq!(parse_answer("  c\n", &allowed).as_deref(), Some("C"));
        assert_eq!(parse_answer("The answer is (D).", &allowed).as_deref(), Some("D"));
        assert_eq!(parse_answer("none of these", &allowed), None);
        assert_eq!(parse_answer("Z", &allowed), None);
        assert_eq!(parse_answer("", &allowed), None);
    }

    #[test]
    fn prompt_shape() {
        let it = item("q1", "insulin resistance causes:", 5, "A");
        let bare = render_prompt(&it, &[]);
        assert!(bare.contains("Return ONLY one uppercase letter from this set: A, B, C, D, E.\n"));
        assert!(!bare.contains("Facts:"));
        let with = render_prompt(&it, &["a causes b.".into()]);
        assert!(with.contains("Facts:\n- a causes b.\n"));
        assert_eq!(with, render_prompt(&it, &["a causes b.".into()]));
        assert_eq!(question_block_of(&with), question_block(&it));
        assert_eq!(question_block_of(&bare), question_block(&it));
    }

    #[test]
    fn retrieval_ranks_and_exhausts() {
        let g = KnowledgeGraph::assemble(
            (0..12).map(|i| CanonicalTriple::new(format!("entity{i}"), "causes", format!("outcome{i}"))),
            &RelationFilter::default(),
        );
        let store = GraphStore::new().with(GraphSymbol::G1, g);
        let rc = RetrievalConfig { system: System::G1, top_k: 20, paths: GraphPaths::default() };
        let ctx = retrieve_context(&item("q", "entity7 causes:", 4, "A"), &rc, &store).unwrap();
        assert_eq!(ctx.len(), 12);
        assert_eq!(ctx[0], "entity7 causes outcome7.");
        let none = RetrievalConfig { system: System::NoRag, ..rc.clone() };
        assert!(retrieve_context(&item("q", "x", 4, "A"), &none, &store).unwrap().is_empty());
        let missing = RetrievalConfig { system: System::G2, ..rc };
        assert!(matches!(retrieve_context(&item("q", "x", 4, "A"), &missing, &store), Err(Error::Config(_))));
    }

    #[test]
    fn adversarial_client_is_invalid() {
        let it = item("q", "stem", 4, "A");
        let z = |_: &str, _: &str, _: f64| -> Result<String> { Ok("Z".into()) };
        let r = evaluate_with_context(&it, Origin::Probe1, System::NoRag, vec![], "m", 0.0, 0, &z);
        assert_eq!(r.parsed_letter, INVALID);
        assert!(!r.correct);
    }

    #[test]
    fn grid_counts_and_oracle_ceiling() {
        let probes = vec![set((0..5).map(|i| item(&format!("q{i}"), "stem", 4, "C")).collect())];
        let spec = GridSpec { systems: vec![System::NoRag], temperatures: DEFAULT_TEMPERATURES.to_vec(), replicates: 1, top_k: 20 };
        let profiles = vec![ProviderProfile::mock("m1"), ProviderProfile::mock("m2")];
        let keys: Vec<(String, String)> = probes[0].items.iter().map(|i| (question_block(i), i.key.clone())).collect();
        let factory = |_: &ProviderProfile| -> Result<Box<dyn ChatClient>> { Ok(Box::new(OracleClient::new(keys.clone()))) };
        let out = run_grid(&probes, &spec, &profiles, &GraphStore::new(), &factory, None).unwrap();
        assert_eq!(out.records.len(), 2 * 3 * 5);
        assert!(out.records.iter().all(|r| r.correct));
        assert_eq!(out.records[0].model, "m1");
        assert_eq!(out.records[5].temperature, 0.2);
    }

    #[test]
    fn resume_skips_journaled_records() {
        let dir = tempfile::tempdir().unwrap();
        let journal = dir.path().join("runs.jsonl");
        let probes = vec![set((0..4).map(|i| item(&format!("q{i}"), "stem", 5, "A")).collect())];
        let spec = GridSpec { systems: vec![System::NoRag], temperatures: vec![0.0, 0.5], replicates: 1, top_k: 20 };
        let profiles = vec![ProviderProfile::mock("m")];
        let factory = |_: &ProviderProfile| -> Result<Box<dyn ChatClient>> { Ok(Box::new(RandomClient::new(3))) };
        let full = run_grid(&probes, &spec, &profiles, &GraphStore::new(), &factory, Some(&journal)).unwrap();
        let bytes = std::fs::read(&journal).unwrap();

        // Keep three complete lines and half of the fourth.
        let text = String::from_utf8(bytes.clone()).unwrap();
        let cut: usize = text.lines().take(3).map(|l| l.len() + 1).sum::<usize>() + 10;
        std::fs::write(&journal, &text[..cut]).unwrap();
        let resumed = run_grid(&probes, &spec, &profiles, &GraphStore::new(), &factory, Some(&journal)).unwrap();
        assert_eq!(resumed.resumed, 3);
        assert_eq!(resumed.executed, full.records.len() - 3);
        assert_eq!(std::fs::read(&journal).unwrap(), bytes);
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        let probes = vec![set(vec![item("q0", "stem", 4, "A")])];
        let spec = GridSpec { systems: vec![System::NoRag], temperatures: vec![0.0], replicates: 1, top_k: 20 };
        let down = |_: &ProviderProfile| -> Result<Box<dyn ChatClient>> {
            Ok(Box::new(|_: &str, _: &str, _: f64| -> Result<String> {
                Err(Error::Transport { message: "down".into(), retryable: false })
            }))
        };
        let out = run_grid(&probes, &spec, &[ProviderProfile::mock("m")], &GraphStore::new(), &down, None).unwrap();
        assert_eq!(out.records[0].parsed_letter, INVALID);
        assert!(out.records[0].error.is_some());
        assert_eq!(out.failed_cells, vec!["m/probe1/no_rag/T=0/rep=0"]);
    }
}
