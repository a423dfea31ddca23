use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Args;

use kgrag_core::config::{load_config, PipelineConfig};
use kgrag_core::corpus::{self, RankingWeights, TermLists};
use kgrag_core::jsonl;
use kgrag_core::kg::extract::extract_corpus;
use kgrag_core::kg::{build_graph, intersect_graphs, ExtractionPipelineConfig, IntersectionSet, KnowledgeGraph, RawTriple, RelationFilter, SynonymMap, VagueMask};
use kgrag_core::llm::{ChatClient, MockProvider, OracleClient, ProviderProfile, RandomClient, ScriptedClient};
use kgrag_core::probe::{self, Composition, Origin, ProbeSet};
use kgrag_core::rag::{self, GraphPaths, GraphStore, GridSpec, System};
use kgrag_core::stats;

use crate::{Cli, Command, GlobalOpts};

/// Exit status for a grid or report with missing or failed cells.
const PARTIAL: u8 = 2;

pub fn dispatch(cli: Cli) -> Result<ExitCode> {
    let cfg = match &cli.global.config {
        Some(p) => load_config(p).with_context(|| format!("loading config {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    let ctx = Ctx { cfg, global: cli.global };
    match cli.command {
        Command::Rank(a) => rank(&ctx, a),
        Command::Extract(a) => extract(&ctx, a),
        Command::BuildKg(a) => build_kg(&ctx, a),
        Command::MergeKg(a) => merge_kg(a),
        Command::Intersect(a) => intersect(&ctx, a),
        Command::GenProbes(a) => gen_probes(&ctx, a),
        Command::ValidateProbes(a) => validate_probes(&ctx, a),
        Command::RunEval(a) => run_eval(&ctx, a),
        Command::Analyze(a) => analyze(&ctx, a),
    }
}

struct Ctx {
    cfg: PipelineConfig,
    global: GlobalOpts,
}

impl Ctx {
    fn seed(&self) -> u64 {
        self.global.seed.unwrap_or(self.cfg.seed)
    }

    fn synonyms(&self, flag: Option<PathBuf>) -> Result<SynonymMap> {
        match flag.or_else(|| self.cfg.synonyms.clone()) {
            Some(p) => SynonymMap::load(&p).with_context(|| format!("loading synonyms {}", p.display())),
            None => Ok(SynonymMap::starter()),
        }
    }
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    match flag.or_else(|| fallback.clone()) {
        Some(p) => Ok(p),
        None => bail!("--{name} is required (or set `{name}` in the config)"),
    }
}

fn parse_temperatures(s: &str) -> Result<Vec<f64>> {
    let temps = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().with_context(|| format!("invalid temperature {t:?}")))
        .collect::<Result<Vec<_>>>()?;
    if temps.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        bail!("temperatures must be non-negative, got {s:?}");
    }
    Ok(temps)
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct RankArgs {
    /// Corpus JSONL with id, title and abstract per line.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Term lists JSON (causality, phenotype, biomarker); bundled lists by default.
    #[arg(long)]
    pub terms: Option<PathBuf>,
    /// Four comma-separated weights: causality, phenotype, biomarker, keywords.
    #[arg(long)]
    pub weights: Option<String>,
    #[arg(long)]
    pub min_words: Option<usize>,
    #[arg(long)]
    pub min_df: Option<usize>,
    /// Number of top-ranked documents to keep.
    #[arg(long)]
    pub top: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

fn rank(ctx: &Ctx, a: RankArgs) -> Result<ExitCode> {
    let cfg = &ctx.cfg;
    let corpus_path = required(a.corpus, &cfg.corpus, "corpus")?;
    let terms = match a.terms.or_else(|| cfg.terms.clone()) {
        Some(p) => TermLists::load(&p)?,
        None => TermLists::bundled(),
    };
    let weights = match a.weights {
        Some(w) => RankingWeights::parse(&w)?,
        None => cfg.weights,
    };
    let docs = corpus::ingest_documents(&corpus_path, a.min_words.unwrap_or(cfg.min_words))?;
    if docs.is_empty() {
        bail!("no documents in {} pass the word-count filter", corpus_path.display());
    }
    let features = corpus::compute_features(&docs, &terms, a.min_df.unwrap_or(cfg.min_df))?;
    let ranked = corpus::rank_documents(&docs, &features, &weights)?;
    let top = corpus::select_top_k(&ranked, a.top.unwrap_or(cfg.top));
    jsonl::write(&a.out, &top)?;
    log::info!("ranked {} documents, wrote top {} to {}", ranked.len(), top.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Documents JSONL (the output of `rank` works as-is).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Extraction prompts and model settings (JSON); defaults built in.
    #[arg(long)]
    pub pipeline: Option<PathBuf>,
    /// Provider profiles JSON; the profile named by --profile is used.
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    #[arg(long)]
    pub profile: Option<String>,
    /// Replay responses instead of calling a provider: mock:script:<file>.
    #[arg(long)]
    pub provider: Option<String>,
    /// Where to write per-stage failures (JSONL).
    #[arg(long)]
    pub failures: Option<PathBuf>,
    /// Raw triples JSONL.
    #[arg(long)]
    pub out: PathBuf,
}

fn extract(ctx: &Ctx, a: ExtractArgs) -> Result<ExitCode> {
    let mut pipeline = match &a.pipeline {
        Some(p) => ExtractionPipelineConfig::load(p)?,
        None => ExtractionPipelineConfig::default(),
    };
    let docs = corpus::ingest_documents(&a.corpus, 0)?;
    let (client, in_flight): (Box<dyn ChatClient>, usize) = match a.provider.as_deref() {
        Some(spec) => match spec.parse::<MockProvider>()? {
            MockProvider::Script(file) => (Box::new(ScriptedClient::load(&file)?), 1),
            other => bail!("{other:?} cannot drive extraction; use mock:script:<file> or a provider profile"),
        },
        None => {
            let path = required(a.profiles, &ctx.cfg.profiles, "profiles")?;
            let profiles = ProviderProfile::load_all(&path)?;
            let profile = match &a.profile {
                Some(name) => profiles
                    .iter()
                    .find(|p| &p.name == name)
                    .with_context(|| format!("no profile named {name:?} in {}", path.display()))?,
                None => &profiles[0],
            };
            pipeline.model = profile.model.clone();
            pipeline.provider = profile.provider.clone();
            (Box::new(profile.http_client(ctx.global.trace)?), profile.max_in_flight)
        }
    };
    let outcome = extract_corpus(&docs, &pipeline, &*client, in_flight);
    jsonl::write(&a.out, &outcome.triples)?;
    if let Some(f) = &a.failures {
        jsonl::write(f, &outcome.failures)?;
    }
    log::info!(
        "extracted {} triples from {} documents ({} stage failures)",
        outcome.triples.len(),
        docs.len(),
        outcome.failures.len()
    );
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct BuildKgArgs {
    /// Raw triples JSONL.
    #[arg(long)]
    pub triples: PathBuf,
    /// Causal relation list, one per line; bundled list by default.
    #[arg(long)]
    pub relations: Option<PathBuf>,
    /// Synonym map JSON (surface form -> canonical label); bundled starter map by default.
    #[arg(long)]
    pub synonyms: Option<PathBuf>,
    /// Extra vague entity to mask (repeatable); replaces the configured list.
    #[arg(long)]
    pub vague: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

fn build_kg(ctx: &Ctx, a: BuildKgArgs) -> Result<ExitCode> {
    let raw: Vec<RawTriple> = jsonl::read(&a.triples)?;
    for t in &raw {
        t.validate()?;
    }
    let rf = match a.relations.or_else(|| ctx.cfg.relations.clone()) {
        Some(p) => RelationFilter::load(&p)?,
        None => RelationFilter::default(),
    };
    let syn = ctx.synonyms(a.synonyms)?;
    let vague = if a.vague.is_empty() { VagueMask::new(&ctx.cfg.vague) } else { VagueMask::new(&a.vague) };
    let g = build_graph(&raw, &rf, &syn, &vague);
    g.save(&a.out)?;
    log::info!(
        "{} raw triples -> {} entities, {} triples, {} causal edges",
        raw.len(),
        g.entities().len(),
        g.triples().len(),
        g.edge_count()
    );
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct MergeKgArgs {
    /// Graph JSON (repeat for each input).
    #[arg(long = "kg", required = true, num_args = 1..)]
    pub kgs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn merge_kg(a: MergeKgArgs) -> Result<ExitCode> {
    let graphs = a.kgs.iter().map(|p| KnowledgeGraph::load(p)).collect::<kgrag_core::Result<Vec<_>>>()?;
    let refs: Vec<&KnowledgeGraph> = graphs.iter().collect();
    let merged = KnowledgeGraph::merge(&refs);
    merged.save(&a.out)?;
    log::info!("merged {} graphs: {} triples", graphs.len(), merged.triples().len());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct IntersectArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Cosine threshold in (0, 1].
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn intersect(ctx: &Ctx, a: IntersectArgs) -> Result<ExitCode> {
    let threshold = a.threshold.unwrap_or(ctx.cfg.threshold);
    if !(threshold > 0.0 && threshold <= 1.0) {
        bail!("threshold must be in (0, 1], got {threshold}");
    }
    let ga = KnowledgeGraph::load(&a.a)?;
    let gb = KnowledgeGraph::load(&a.b)?;
    let inter = intersect_graphs(&ga, &gb, None, threshold)?;
    inter.save(&a.out)?;
    log::info!("{} candidate pairs, {} kept after de-duplication", inter.candidates, inter.items.len());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct GenProbesArgs {
    /// probe1 (from --kg) or probe2 (from --intersection).
    #[arg(long)]
    pub mode: Origin,
    #[arg(long)]
    pub kg: Option<PathBuf>,
    #[arg(long)]
    pub intersection: Option<PathBuf>,
    /// Number of items.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub synonyms: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn gen_probes(ctx: &Ctx, a: GenProbesArgs) -> Result<ExitCode> {
    let syn = ctx.synonyms(a.synonyms)?;
    let n = a.n.unwrap_or(ctx.cfg.n_probes);
    let seed = ctx.seed();
    let (set, warnings) = match a.mode {
        Origin::Probe1 => {
            let path = a.kg.context("--kg is required for probe1")?;
            probe::gen_probe1(&KnowledgeGraph::load(&path)?, &syn, n, seed, Composition::default())
        }
        Origin::Probe2 => {
            let path = a.intersection.context("--intersection is required for probe2")?;
            probe::gen_probe2(&IntersectionSet::load(&path)?, &syn, n, seed, Composition::default())?
        }
    };
    for w in &warnings {
        log::debug!("{w}");
    }
    if set.items.len() < n {
        log::warn!("generated {} of {n} requested items", set.items.len());
    }
    set.save(&a.out)?;
    log::info!("wrote {} {} items to {}", set.items.len(), a.mode.as_str(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct ValidateProbesArgs {
    #[arg(long)]
    pub probes: PathBuf,
    /// Source graph of a probe1 set.
    #[arg(long)]
    pub kg: Option<PathBuf>,
    /// Source intersection of a probe2 set.
    #[arg(long)]
    pub intersection: Option<PathBuf>,
    #[arg(long)]
    pub synonyms: Option<PathBuf>,
    /// Write the findings as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn validate_probes(ctx: &Ctx, a: ValidateProbesArgs) -> Result<ExitCode> {
    let set = ProbeSet::load(&a.probes)?;
    let syn = ctx.synonyms(a.synonyms)?;
    let (graph, fingerprint) = match set.origin {
        Origin::Probe1 => {
            let g = KnowledgeGraph::load(&a.kg.context("--kg is required for a probe1 set")?)?;
            let fp = g.fingerprint();
            (g, fp)
        }
        Origin::Probe2 => {
            let inter = IntersectionSet::load(&a.intersection.context("--intersection is required for a probe2 set")?)?;
            (probe::intersection_graph(&inter)?, probe::intersection_fingerprint(&inter))
        }
    };
    let report = probe::validate_probe_set(&set, &graph, &fingerprint, &syn);
    if let Some(out) = &a.out {
        jsonl::write_json(out, &report)?;
    }
    for f in &report.findings {
        log::error!("{}: {}: {}", f.item_id.as_deref().unwrap_or("<set>"), f.check, f.message);
    }
    if report.is_ok() {
        log::info!("{} items passed validation", report.items_checked);
        Ok(ExitCode::SUCCESS)
    } else {
        log::error!("{} findings in {} items", report.findings.len(), report.items_checked);
        Ok(ExitCode::from(1))
    }
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct RunEvalArgs {
    /// Probe set JSONL (repeat for probe1 and probe2).
    #[arg(long = "probes", num_args = 1..)]
    pub probes: Vec<PathBuf>,
    /// Comma-separated systems: no_rag,g1,g2,g1+g2,g3,g1+g2+g3.
    #[arg(long, default_value = "no_rag,g1,g2,g1+g2,g3,g1+g2+g3")]
    pub systems: String,
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    /// Comma-separated temperatures.
    #[arg(long)]
    pub temps: Option<String>,
    /// Runs per (model, probe, system, temperature).
    #[arg(long)]
    pub replicates: Option<u32>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub g1: Option<PathBuf>,
    #[arg(long)]
    pub g2: Option<PathBuf>,
    #[arg(long)]
    pub g3: Option<PathBuf>,
    /// Use a mock for every profile: mock:oracle, mock:random:<seed>, mock:script:<file>.
    #[arg(long)]
    pub provider: Option<String>,
    /// Run journal (JSONL); existing records are kept and skipped.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn mock_client(mock: &MockProvider, probes: &[ProbeSet]) -> Result<Box<dyn ChatClient>> {
    Ok(match mock {
        MockProvider::Oracle => Box::new(OracleClient::new(
            probes.iter().flat_map(|p| &p.items).map(|i| (rag::question_block(i), i.key.clone())),
        )),
        MockProvider::Random(seed) => Box::new(RandomClient::new(*seed)),
        MockProvider::Script(file) => Box::new(ScriptedClient::load(file)?),
    })
}

fn run_eval(ctx: &Ctx, a: RunEvalArgs) -> Result<ExitCode> {
    let cfg = &ctx.cfg;
    let probe_paths = if a.probes.is_empty() { cfg.probes.iter().cloned().collect() } else { a.probes };
    if probe_paths.is_empty() {
        bail!("--probes is required (or set `probes` in the config)");
    }
    let journal = required(a.out, &cfg.journal, "out")?;
    let systems = System::parse_list(&a.systems)?;
    let spec = GridSpec {
        systems,
        temperatures: match &a.temps {
            Some(t) => parse_temperatures(t)?,
            None => cfg.temperatures.clone(),
        },
        replicates: a.replicates.unwrap_or(cfg.replicates),
        top_k: a.top_k.unwrap_or(cfg.top_k),
    };
    spec.validate()?;
    let probes = probe_paths.iter().map(|p| ProbeSet::load(p)).collect::<kgrag_core::Result<Vec<_>>>()?;

    let paths = GraphPaths {
        g1: a.g1.or_else(|| cfg.g1.clone()),
        g2: a.g2.or_else(|| cfg.g2.clone()),
        g3: a.g3.or_else(|| cfg.g3.clone()),
    };
    let store = GraphStore::load(&paths, &spec.systems)?;

    let mock = a.provider.as_deref().map(str::parse::<MockProvider>).transpose()?;
    let profiles = match (a.profiles.or_else(|| cfg.profiles.clone()), &mock) {
        (Some(p), _) => ProviderProfile::load_all(&p)?,
        (None, Some(_)) => vec![ProviderProfile::mock("mock")],
        (None, None) => bail!("--profiles is required unless --provider selects a mock"),
    };
    // Resolve every client up front so configuration errors surface before
    // any record is written.
    let mut clients: Vec<(String, Box<dyn ChatClient>)> = Vec::new();
    for p in &profiles {
        let client: Box<dyn ChatClient> = match (&mock, p.provider.strip_prefix("mock:")) {
            (Some(m), _) => mock_client(m, &probes)?,
            (None, Some(_)) => mock_client(&p.provider.parse()?, &probes)?,
            (None, None) => Box::new(p.http_client(ctx.global.trace)?),
        };
        clients.push((p.name.clone(), client));
    }
    let clients = std::sync::Mutex::new(clients);
    let factory = |p: &ProviderProfile| -> kgrag_core::Result<Box<dyn ChatClient>> {
        let mut guard = clients.lock().expect("client table");
        let i = guard.iter().position(|(n, _)| *n == p.name).expect("client resolved for every profile");
        Ok(guard.swap_remove(i).1)
    };

    if let Some(dir) = journal.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let out = rag::run_grid(&probes, &spec, &profiles, &store, &factory, Some(&journal))?;
    let correct = out.records.iter().filter(|r| r.correct).count();
    log::info!(
        "{} records ({} resumed, {} executed); accuracy {:.3}",
        out.records.len(),
        out.resumed,
        out.executed,
        if out.records.is_empty() { 0.0 } else { correct as f64 / out.records.len() as f64 }
    );
    if out.failed_cells.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for c in &out.failed_cells {
            log::error!("failed calls in {c}");
        }
        Ok(ExitCode::from(PARTIAL))
    }
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Run journal JSONL.
    #[arg(long)]
    pub runs: Option<PathBuf>,
    #[arg(long, default_value = "no_rag")]
    pub baseline: System,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn analyze(ctx: &Ctx, a: AnalyzeArgs) -> Result<ExitCode> {
    let runs = required(a.runs, &ctx.cfg.journal, "runs")?;
    let out_dir = required(a.out_dir, &ctx.cfg.reports, "out-dir")?;
    let records = rag::read_journal(&runs)?;
    let report = stats::emit_report(&records, a.baseline, &out_dir)?;
    log::info!("wrote {}", Path::new(&out_dir).join("report.md").display());
    if report.is_complete() {
        Ok(ExitCode::SUCCESS)
    } else {
        for g in &report.gaps {
            log::error!("gap: {g}");
        }
        Ok(ExitCode::from(PARTIAL))
    }
}
