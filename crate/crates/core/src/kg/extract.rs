//! Per-sentence extraction loop: coreference resolution, clause
//! decomposition, then relation extraction, each as one chat call.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::triple::{Provenance, RawTriple};
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::jsonl;
use crate::llm::ChatClient;

pub const DEFAULT_COREF_PROMPT: &str = "Resolve every coreference in the sentence below using the abstract as context. \
Replace pronouns, abbreviations and aliases with the full entity name they refer to. \
Return only the rewritten sentence.\n\nAbstract:\n{abstract}\n\nSentence:\n{sentence}";

pub const DEFAULT_DECOMPOSITION_PROMPT: &str = "Split the sentence below into simple clauses that each state one fact. \
Return a JSON array of strings and nothing else.\n\nSentence:\n{sentence}";

pub const DEFAULT_RELATION_PROMPT: &str = "Extract (subject, relation, object) triples from the clause below. \
Return a JSON array of objects with the keys \"Entity 1\", \"Relationship\" and \"Entity 2\". \
Return [] when the clause states no relation.\n\nClause:\n{clause}";

/// Prompt templates and model settings for the three extraction stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionPipelineConfig {
    pub coref_prompt: String,
    pub decomposition_prompt: String,
    pub relation_prompt: String,
    pub provider: String,
    pub model: String,
    pub temperature: f64,
}

impl Default for ExtractionPipelineConfig {
    fn default() -> Self {
        ExtractionPipelineConfig {
            coref_prompt: DEFAULT_COREF_PROMPT.into(),
            decomposition_prompt: DEFAULT_DECOMPOSITION_PROMPT.into(),
            relation_prompt: DEFAULT_RELATION_PROMPT.into(),
            provider: "openai-compatible".into(),
            model: "extractor".into(),
            temperature: 0.7,
        }
    }
}

impl ExtractionPipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) {
            return Err(Error::Validation(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = jsonl::read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Coref,
    Decomposition,
    RelationExtraction,
}

/// A sentence or clause that produced no triples because of an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionFailure {
    pub paper_id: String,
    pub sentence_id: u32,
    pub clause_id: Option<u32>,
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExtractionOutcome {
    pub triples: Vec<RawTriple>,
    pub failures: Vec<ExtractionFailure>,
}

const ABBREVIATIONS: [&str; 12] = ["e.g.", "i.e.", "et al.", "vs.", "fig.", "figs.", "approx.", "ca.", "cf.", "no.", "dr.", "resp."];

/// Splits on `.`, `!` or `?` followed by whitespace and an uppercase letter,
/// digit, quote or bracket, skipping common abbreviations.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if matches!(c, '.' | '!' | '?') {
            let mut j = i + 1;
            while j < chars.len() && matches!(chars[j], '"' | '\'' | ')' | ']') {
                j += 1;
            }
            let ws = j < chars.len() && chars[j].is_whitespace();
            let mut k = j;
            while k < chars.len() && chars[k].is_whitespace() {
                k += 1;
            }
            let next_ok = k >= chars.len()
                || chars[k].is_uppercase()
                || chars[k].is_ascii_digit()
                || matches!(chars[k], '"' | '\'' | '(' | '[');
            let candidate: String = chars[start..j].iter().collect();
            let lower = candidate.to_lowercase();
            let is_abbrev = c == '.' && ABBREVIATIONS.iter().any(|a| lower.ends_with(a));
            if (ws || j >= chars.len()) && next_ok && !is_abbrev {
                let s = candidate.trim().to_string();
                if !s.is_empty() {
                    out.push(s);
                }
                start = j;
                i = j;
                continue;
            }
        }
        i += 1;
    }
    let tail: String = chars[start..].iter().collect();
    let tail = tail.trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    slots
        .iter()
        .fold(template.to_string(), |acc, (k, v)| acc.replace(&format!("{{{k}}}"), v))
}

fn strip_fences(text: &str) -> &str {
    let t = text.trim();
    let t = t.strip_prefix("```json").or_else(|| t.strip_prefix("```")).unwrap_or(t);
    t.strip_suffix("```").unwrap_or(t).trim()
}

fn json_array_slice(text: &str) -> Option<&str> {
    let t = strip_fences(text);
    let start = t.find('[')?;
    let end = t.rfind(']')?;
    (end > start).then(|| &t[start..=end])
}

/// Clauses from a decomposition response: a JSON array of strings, or one
/// clause per non-empty line with list markers removed.
pub fn parse_clauses(response: &str, fallback: &str) -> Vec<String> {
    if let Some(arr) = json_array_slice(response) {
        if let Ok(v) = serde_json::from_str::<Vec<String>>(arr) {
            let clauses: Vec<String> = v.into_iter().map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect();
            if !clauses.is_empty() {
                return clauses;
            }
        }
    }
    let lines: Vec<String> = strip_fences(response)
        .lines()
        .map(|l| {
            l.trim()
                .trim_start_matches(|c: char| c.is_ascii_digit() || matches!(c, '-' | '*' | '.' | ')' | '•'))
                .trim()
                .to_string()
        })
        .filter(|l| !l.is_empty())
        .collect();
    if lines.is_empty() {
        vec![fallback.to_string()]
    } else {
        lines
    }
}

#[derive(Deserialize)]
struct TripleObject {
    #[serde(rename = "Entity 1")]
    head: serde_json::Value,
    #[serde(rename = "Relationship")]
    relation: serde_json::Value,
    #[serde(rename = "Entity 2")]
    tail: serde_json::Value,
}

/// Parses a relation-extraction response into `(head, relation, tail)`
/// tuples. Objects with missing or blank fields are dropped; a response with
/// no JSON array is an error.
pub fn parse_triples(response: &str) -> Result<Vec<(String, String, String)>> {
    let arr = json_array_slice(response)
        .ok_or_else(|| Error::Validation("relation extraction output has no JSON array".into()))?;
    let values: Vec<serde_json::Value> =
        serde_json::from_str(arr).map_err(|e| Error::Validation(format!("unparseable triple output: {e}")))?;
    Ok(values
        .into_iter()
        .filter_map(|v| serde_json::from_value::<TripleObject>(v).ok())
        .filter_map(|o| {
            let s = |v: serde_json::Value| v.as_str().map(|s| s.trim().to_string()).filter(|s| !s.is_empty());
            Some((s(o.head)?, s(o.relation)?, s(o.tail)?))
        })
        .collect())
}

/// Runs coref, decomposition and relation extraction for every sentence of
/// the abstract. Provider failures and unparseable outputs are recorded and
/// skipped; the rest of the document still runs.
pub fn run_extraction_pipeline(doc: &Document, cfg: &ExtractionPipelineConfig, client: &dyn ChatClient) -> ExtractionOutcome {
    let mut outcome = ExtractionOutcome::default();
    let failure = |sentence_id: u32, clause_id: Option<u32>, stage: Stage, message: String| {
        log::warn!("{} sentence {sentence_id} clause {clause_id:?} {stage:?}: {message}", doc.id);
        ExtractionFailure {
            paper_id: doc.id.clone(),
            sentence_id,
            clause_id,
            stage,
            message,
        }
    };
    for (s_idx, sentence) in split_sentences(&doc.abstract_text).iter().enumerate() {
        let s_idx = s_idx as u32;
        let coref_prompt = fill(&cfg.coref_prompt, &[("abstract", &doc.abstract_text), ("sentence", sentence)]);
        let resolved = match client.send(&coref_prompt, &cfg.model, cfg.temperature) {
            Ok(c) if !c.text.trim().is_empty() => c.text.trim().to_string(),
            Ok(_) => sentence.clone(),
            Err(e) => {
                outcome.failures.push(failure(s_idx, None, Stage::Coref, e.to_string()));
                continue;
            }
        };
        let decomp_prompt = fill(&cfg.decomposition_prompt, &[("sentence", &resolved)]);
        let clauses = match client.send(&decomp_prompt, &cfg.model, cfg.temperature) {
            Ok(c) => parse_clauses(&c.text, &resolved),
            Err(e) => {
                outcome.failures.push(failure(s_idx, None, Stage::Decomposition, e.to_string()));
                continue;
            }
        };
        for (c_idx, clause) in clauses.iter().enumerate() {
            let c_idx = c_idx as u32;
            let re_prompt = fill(&cfg.relation_prompt, &[("clause", clause)]);
            let parsed = client
                .send(&re_prompt, &cfg.model, cfg.temperature)
                .and_then(|c| parse_triples(&c.text));
            match parsed {
                Ok(triples) => {
                    for (h, r, t) in triples {
                        outcome.triples.push(RawTriple {
                            head: h,
                            relation: r,
                            tail: t,
                            provenance: Provenance::new(doc.id.clone(), s_idx, c_idx),
                        });
                    }
                }
                Err(e) => outcome
                    .failures
                    .push(failure(s_idx, Some(c_idx), Stage::RelationExtraction, e.to_string())),
            }
        }
    }
    outcome
}

/// Runs the pipeline over many documents with at most `max_in_flight`
/// documents in progress; results are concatenated in input order.
pub fn extract_corpus(docs: &[Document], cfg: &ExtractionPipelineConfig, client: &dyn ChatClient, max_in_flight: usize) -> ExtractionOutcome {
    let workers = max_in_flight.max(1).min(docs.len().max(1));
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<ExtractionOutcome>> = vec![None; docs.len()];
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= docs.len() {
                    break;
                }
                let out = run_extraction_pipeline(&docs[i], cfg, client);
                results.lock().expect("result lock")[i] = Some(out);
            });
        }
    });
    let mut all = ExtractionOutcome::default();
    for out in slots.into_iter().flatten() {
        all.triples.extend(out.triples);
        all.failures.extend(out.failures);
    }
    all
}
