use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::kg::CanonicalTriple;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    SingleHop,
    MultiHopPair,
    Fitb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Probe1,
    Probe2,
}

impl Origin {
    pub fn as_str(&self) -> &'static str {
        match self {
            Origin::Probe1 => "probe1",
            Origin::Probe2 => "probe2",
        }
    }
}

impl std::str::FromStr for Origin {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probe1" => Ok(Origin::Probe1),
            "probe2" => Ok(Origin::Probe2),
            _ => Err(Error::Validation(format!("unknown probe mode {s:?}; expected probe1 or probe2"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskedSlot {
    Head,
    Tail,
}

/// What a numbered atomic option asserts: an entity, or a directed edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AtomicFact {
    Entity { label: String },
    Edge { from: String, to: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicOption {
    pub number: u8,
    pub text: String,
    #[serde(flatten)]
    pub fact: AtomicFact,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LetteredOption {
    pub letter: String,
    pub text: String,
    /// Atomic option numbers, for pair-selection items.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<[u8; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeItem {
    pub item_id: String,
    pub kind: ProbeKind,
    pub stem: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atomic_options: Option<Vec<AtomicOption>>,
    pub options: Vec<LetteredOption>,
    pub allowed_letters: Vec<String>,
    pub key: String,
    pub source_triples: Vec<CanonicalTriple>,
    pub seed: u64,
    /// Target entity of a pair-selection item.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    /// Which slot of the source triple a fill-in-the-blank item hides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masked: Option<MaskedSlot>,
}

impl ProbeItem {
    pub fn option(&self, letter: &str) -> Option<&LetteredOption> {
        self.options.iter().find(|o| o.letter == letter)
    }

    pub fn key_option(&self) -> Option<&LetteredOption> {
        self.option(&self.key)
    }

    pub fn atomic(&self, number: u8) -> Option<&AtomicOption> {
        self.atomic_options.as_ref()?.iter().find(|a| a.number == number)
    }
}

pub const LETTERS: [&str; 5] = ["A", "B", "C", "D", "E"];

/// Header line of a persisted probe set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSetHeader {
    pub origin: Origin,
    pub generation_seed: u64,
    pub graph_fingerprint: String,
    pub n_items: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    pub origin: Origin,
    pub generation_seed: u64,
    pub graph_fingerprint: String,
    pub items: Vec<ProbeItem>,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: ProbeSetHeader,
}

impl ProbeSet {
    pub fn header(&self) -> ProbeSetHeader {
        ProbeSetHeader {
            origin: self.origin,
            generation_seed: self.generation_seed,
            graph_fingerprint: self.graph_fingerprint.clone(),
            n_items: self.items.len(),
        }
    }

    /// JSONL: a `{"header": ...}` line followed by one item per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut buf = Vec::new();
        writeln!(buf, "{}", serde_json::to_string(&HeaderLine { header: self.header() })?).expect("vec write");
        buf.extend_from_slice(jsonl::to_string(&self.items)?.as_bytes());
        Ok(String::from_utf8(buf).expect("utf8 json"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        jsonl::write_string(path, &self.to_jsonl()?)
    }

    pub fn from_jsonl(raw: &str, source: &str) -> Result<Self> {
        let lines = jsonl::lines(raw.as_bytes(), source)?;
        let Some(((first_no, first), rest)) = lines.split_first() else {
            return Err(Error::parse(source, 1, "empty probe file"));
        };
        let header: HeaderLine = serde_json::from_str(first)
            .map_err(|e| Error::parse(source, *first_no, format!("bad probe-set header: {e}")))?;
        let items = rest
            .iter()
            .map(|(n, l)| serde_json::from_str::<ProbeItem>(l).map_err(|e| Error::parse(source, *n, e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        if header.header.n_items != items.len() {
            return Err(Error::Validation(format!(
                "{source}: header announces {} items but file has {}",
                header.header.n_items,
                items.len()
            )));
        }
        Ok(ProbeSet {
            origin: header.header.origin,
            generation_seed: header.header.generation_seed,
            graph_fingerprint: header.header.graph_fingerprint,
            items,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&raw, &path.display().to_string())
    }
}
