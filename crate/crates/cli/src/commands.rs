//! Subcommand implementations. Each stage reads its inputs from and writes
//! its outputs to the output directory:
//!
//! ```text
//! chunks.jsonl, ingest_report.json          ingest
//! structures/<id>.json, <id>.outline.txt    structure
//! structure_stats.json
//! scpt/manifest.json, scpt/scpt.epoch*.jsonl build-scpt
//! ssft/ssft.{plain,cot}.jsonl, ...          build-ssft
//! eval/eval_report.json                     evaluate
//! scaling/curve.json, scaling/*.dat         fit-scaling
//! audit/<stage>.jsonl                       every stage that calls a model
//! pipeline_config.toml                      resolved config of the last run
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use structkit::corpus::{self, Chunk, ChunkingConfig, DocumentDefaults, SourceKind};
use structkit::eval::{
    eval_scaling, evaluate, fit_scaling_curve, join_items, EvalItem, Metric, ReferenceItem, ResponseItem, ScalingCurve,
    ScalingPoint, STRUCTURE_AWARE, VANILLA,
};
use structkit::jsonl;
use structkit::llm::http::{ChatCompletionBackend, HttpEmbedder};
use structkit::llm::{Backend, Embedder, GenerationClient, MockBackend, OfflineResponder, RetryPolicy, TfIdfEmbedder};
use structkit::mindmap::TemplatePool;
use structkit::scpt::{build_scpt_dataset, ScptConfig};
use structkit::ssft::{
    augment_existing_qa, build_ssft_dataset, derive_cot_variant, leakage_filter, DroppedBundle, QASample, QaPair,
    RetrievalOptions, SampleBudget, SsftConfig, SsftError,
};
use structkit::taxonomy::{
    build_structure_by_clustering, extract_structure, ClusterConfig, ClusterLabeler, ExtractOptions, KnowledgeStructure,
    StructureStats,
};

use crate::config::{PipelineConfig, StructureMode};
use crate::{Command, GlobalArgs};

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_INGEST: u8 = 2;
pub const EXIT_STRUCTURE: u8 = 3;
pub const EXIT_SCPT: u8 = 4;
pub const EXIT_SSFT: u8 = 5;
pub const EXIT_EVALUATE: u8 = 6;
pub const EXIT_SCALING: u8 = 7;

pub const CHUNKS_FILE: &str = "chunks.jsonl";
pub const INGEST_REPORT: &str = "ingest_report.json";
pub const STRUCTURES_DIR: &str = "structures";
pub const STATS_FILE: &str = "structure_stats.json";
pub const SNAPSHOT_FILE: &str = "pipeline_config.toml";
const DEFAULT_OUTPUT_DIR: &str = "structkit-out";

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

trait ExitWith<T> {
    fn exit(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitWith<T> for std::result::Result<T, E> {
    fn exit(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

pub fn run(global: &GlobalArgs, command: Command) -> Result<(), Failure> {
    match command {
        Command::Ingest { corpus, budget, tokenizer, language } => {
            let mut cfg = load_config(global).exit(EXIT_CONFIG)?;
            if !corpus.is_empty() {
                cfg.corpus = corpus.iter().map(|p| absolute(p)).collect::<Result<_>>().exit(EXIT_CONFIG)?;
            }
            if let Some(b) = budget {
                cfg.budget = b;
            }
            if let Some(t) = tokenizer {
                cfg.tokenizer = t.parse().map_err(|e: String| anyhow!(e)).exit(EXIT_CONFIG)?;
            }
            if let Some(l) = language {
                cfg.language = l;
            }
            let ctx = Stage::new(global, cfg).exit(EXIT_CONFIG)?;
            ingest(&ctx).exit(EXIT_INGEST)
        }
        Command::Structure { mode } => {
            let mut cfg = load_config(global).exit(EXIT_CONFIG)?;
            if let Some(m) = mode {
                cfg.structure_mode = m;
            }
            let ctx = Stage::new(global, cfg).exit(EXIT_CONFIG)?;
            structure(&ctx).exit(EXIT_STRUCTURE)
        }
        Command::BuildScpt { epochs, scope, template_pool } => {
            let mut cfg = load_config(global).exit(EXIT_CONFIG)?;
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(s) = scope {
                cfg.scope = s.parse().map_err(|e: String| anyhow!(e)).exit(EXIT_CONFIG)?;
            }
            if let Some(p) = template_pool {
                cfg.template_pool = Some(absolute(&p).exit(EXIT_CONFIG)?);
            }
            let ctx = Stage::new(global, cfg).exit(EXIT_CONFIG)?;
            build_scpt(&ctx).exit(EXIT_SCPT)
        }
        Command::BuildSsft { count, coverage, cap, augment, test_set, multi_choice, max_branches } => {
            let mut cfg = load_config(global).exit(EXIT_CONFIG)?;
            if let Some(l) = max_branches {
                cfg.max_branches = l;
            }
            let source = match (count, coverage, augment) {
                (Some(n), false, None) => SsftSource::Synthesize(SampleBudget::Count(n)),
                (None, true, None) => SsftSource::Synthesize(SampleBudget::Coverage { cap }),
                (None, false, Some(path)) => SsftSource::Augment(path),
                _ => return Err(anyhow!("give exactly one of --count, --coverage or --augment")).exit(EXIT_CONFIG),
            };
            let ctx = Stage::new(global, cfg).exit(EXIT_CONFIG)?;
            build_ssft(&ctx, source, test_set.as_deref(), multi_choice).exit(EXIT_SSFT)
        }
        Command::Evaluate { items, responses, references, metrics, language, csv } => {
            let cfg = load_config(global).exit(EXIT_CONFIG)?;
            let mode = match language {
                Some(l) => l.parse().map_err(|e: String| anyhow!(e)).exit(EXIT_CONFIG)?,
                None => cfg.metric_language,
            };
            let metrics = if metrics.is_empty() {
                Metric::DEFAULT.to_vec()
            } else {
                metrics.iter().map(|m| m.parse()).collect::<Result<Vec<Metric>, _>>().exit(EXIT_CONFIG)?
            };
            let input = match (items, responses, references) {
                (Some(i), None, None) => EvalInput::Items(i),
                (None, Some(r), Some(f)) => EvalInput::Split { responses: r, references: f },
                _ => return Err(anyhow!("give --items or both --responses and --references")).exit(EXIT_CONFIG),
            };
            let out = output_dir(global, &cfg);
            run_evaluate(&out, &input, &metrics, mode, cfg.client.concurrency, csv.as_deref()).exit(EXIT_EVALUATE)
        }
        Command::FitScaling { points, reference, at } => {
            let cfg = load_config(global).exit(EXIT_CONFIG)?;
            let source = match (points, reference) {
                (Some(p), None) => CurveSource::Fit(p),
                (None, Some(r)) => match r.as_str() {
                    "vanilla" => CurveSource::Reference("vanilla", VANILLA),
                    "structure_aware" => CurveSource::Reference("structure_aware", STRUCTURE_AWARE),
                    other => {
                        return Err(anyhow!("unknown reference curve `{other}` (expected vanilla or structure_aware)"))
                            .exit(EXIT_CONFIG)
                    }
                },
                _ => return Err(anyhow!("give --points or --reference")).exit(EXIT_CONFIG),
            };
            fit_scaling(&output_dir(global, &cfg), &source, &at).exit(EXIT_SCALING)
        }
        Command::Stats { structures } => {
            let cfg = load_config(global).exit(EXIT_CONFIG)?;
            let loaded = if structures.is_empty() {
                read_structures(&output_dir(global, &cfg))
            } else {
                structures.iter().map(|p| read_structure(p)).collect()
            }
            .exit(EXIT_CONFIG)?;
            print!("{}", stats_table(&loaded));
            Ok(())
        }
    }
}

fn load_config(global: &GlobalArgs) -> Result<PipelineConfig> {
    let mut cfg = match &global.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = Some(seed);
    }
    if let Some(dir) = &global.mock_dir {
        cfg.client.mock_dir = Some(absolute(dir)?);
    }
    Ok(cfg)
}

fn absolute(p: &Path) -> Result<String> {
    Ok(std::path::absolute(p)?.to_string_lossy().into_owned())
}

fn output_dir(global: &GlobalArgs, cfg: &PipelineConfig) -> PathBuf {
    match (&global.output_dir, &cfg.output_dir) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => cfg.resolve(d),
        (None, None) => PathBuf::from(DEFAULT_OUTPUT_DIR),
    }
}

/// Resolved config plus the model services for one stage.
struct Stage {
    cfg: PipelineConfig,
    out: PathBuf,
    offline: bool,
    client: GenerationClient,
    mock: Option<Arc<MockBackend>>,
    record_prompts: Option<PathBuf>,
}

impl Stage {
    fn new(global: &GlobalArgs, cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let out = output_dir(global, &cfg);
        let (backend, mock): (Arc<dyn Backend>, _) = if global.offline {
            let mut mock = MockBackend::new();
            if let Some(dir) = &cfg.client.mock_dir {
                let dir = cfg.resolve(dir);
                let n = mock.load_dir(&dir).with_context(|| format!("reading transcripts from {}", dir.display()))?;
                info!("loaded {n} transcripts from {}", dir.display());
            }
            let mock = Arc::new(mock.with_fallback(Arc::new(|r| OfflineResponder.respond(r))));
            (mock.clone(), Some(mock))
        } else {
            (Arc::new(ChatCompletionBackend::from_config(&cfg.client)?), None)
        };
        let policy = if global.offline {
            RetryPolicy::immediate(cfg.client.retries)
        } else {
            RetryPolicy { max_retries: cfg.client.retries, ..RetryPolicy::default() }
        };
        let client = GenerationClient::new(backend)
            .with_policy(policy)
            .with_concurrency(cfg.client.concurrency);
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        fs::write(out.join(SNAPSHOT_FILE), cfg.snapshot()?)?;
        Ok(Self {
            cfg,
            out,
            offline: global.offline,
            client,
            mock,
            record_prompts: global.record_prompts.clone(),
        })
    }

    fn seed(&self) -> u64 {
        self.cfg.seed.expect("validated")
    }

    /// Writes the stage's request audit and any prompts without transcripts.
    fn finish_calls(&self, stage: &str) -> Result<()> {
        let path = self.out.join("audit").join(format!("{stage}.jsonl"));
        if path.exists() {
            fs::remove_file(&path)?;
        }
        self.client.write_audit(&path)?;
        if let (Some(dir), Some(mock)) = (&self.record_prompts, &self.mock) {
            let n = mock.dump_misses(dir)?;
            if n > 0 {
                eprintln!("recorded {n} prompts without transcripts in {}", dir.display());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DocumentSummary {
    pub id: String,
    pub title: String,
    pub language: String,
    pub source_kind: SourceKind,
    pub chunks: usize,
    pub tokens: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestReport {
    pub documents: Vec<DocumentSummary>,
    pub chunks: usize,
    pub tokens: usize,
    pub untitled: Vec<String>,
    pub chunking: ChunkingConfig,
}

fn ingest(ctx: &Stage) -> Result<()> {
    let cfg = &ctx.cfg;
    if cfg.corpus.is_empty() {
        bail!("no corpus paths (--corpus or `corpus` in the config)");
    }
    let paths: Vec<PathBuf> = cfg.corpus.iter().map(|p| cfg.resolve(p)).collect();
    let defaults = DocumentDefaults { language: cfg.language.clone(), ..DocumentDefaults::default() };
    let docs = corpus::load_corpus(&paths, &defaults)?;
    let chunking = ChunkingConfig { budget: cfg.budget, mode: cfg.tokenizer, oversize: cfg.oversize };
    let mut chunks = Vec::new();
    let mut summaries = Vec::new();
    for doc in &docs {
        let doc_chunks = corpus::chunk_document(doc, &chunking)?;
        summaries.push(DocumentSummary {
            id: doc.id.clone(),
            title: doc.title.clone(),
            language: doc.language.clone(),
            source_kind: doc.source_kind,
            chunks: doc_chunks.len(),
            tokens: doc_chunks.iter().map(|c| c.token_count).sum(),
        });
        chunks.extend(doc_chunks);
    }
    let outcome = corpus::request_titles(chunks, &ctx.client);
    ctx.finish_calls("ingest")?;
    let report = IngestReport {
        chunks: outcome.chunks.len(),
        tokens: summaries.iter().map(|d| d.tokens).sum(),
        documents: summaries,
        untitled: outcome.chunks.iter().filter(|c| c.title.is_none()).map(|c| c.id.clone()).collect(),
        chunking,
    };
    corpus::write_chunks(&ctx.out.join(CHUNKS_FILE), &outcome.chunks)?;
    jsonl::write_json(&ctx.out.join(INGEST_REPORT), &report)?;
    println!(
        "ingested {} documents into {} chunks ({} tokens)",
        report.documents.len(),
        report.chunks,
        report.tokens
    );
    if !outcome.failures.is_empty() {
        bail!("{} chunks left without a title: {}", outcome.failures.len(), report.untitled.join(", "));
    }
    Ok(())
}

fn read_ingest(out: &Path) -> Result<(Vec<Chunk>, IngestReport)> {
    let chunks_path = out.join(CHUNKS_FILE);
    let chunks = corpus::read_chunks(&chunks_path)
        .with_context(|| format!("reading {} (run `structkit ingest` first)", chunks_path.display()))?;
    let report: IngestReport = jsonl::read_json(&out.join(INGEST_REPORT))
        .with_context(|| format!("reading {}", out.join(INGEST_REPORT).display()))?;
    Ok((chunks, report))
}

fn titled(chunks: Vec<Chunk>) -> Vec<Chunk> {
    let (titled, untitled): (Vec<Chunk>, Vec<Chunk>) = chunks.into_iter().partition(|c| c.title.is_some());
    for c in &untitled {
        warn!("chunk {} has no title and is excluded", c.id);
    }
    titled
}

fn structure(ctx: &Stage) -> Result<()> {
    let cfg = &ctx.cfg;
    let (chunks, report) = read_ingest(&ctx.out)?;
    let chunks = titled(chunks);
    let structures = match cfg.structure_mode {
        StructureMode::Prompted => {
            let opts = ExtractOptions { window: cfg.window, retries: cfg.client.retries as usize, ..ExtractOptions::default() };
            let mut out = Vec::new();
            let mut failed = Vec::new();
            for doc in &report.documents {
                let doc_chunks: Vec<Chunk> = chunks.iter().filter(|c| c.doc_id == doc.id).cloned().collect();
                if doc_chunks.is_empty() {
                    warn!("document {} has no titled chunks; skipped", doc.id);
                    continue;
                }
                match extract_structure(&doc_chunks, &doc.title, &doc.id, &ctx.client, &opts) {
                    Ok(s) => out.push(s),
                    Err(e) => failed.push(format!("{}: {e}", doc.id)),
                }
            }
            ctx.finish_calls("structure")?;
            if !failed.is_empty() {
                bail!("structuring failed for {} documents\n  {}", failed.len(), failed.join("\n  "));
            }
            out
        }
        StructureMode::Clustering => {
            let mode = cfg.metric_language;
            let tfidf = TfIdfEmbedder::new(mode);
            let http;
            let embedder: &dyn Embedder = if !ctx.offline && cfg.client.embedding_model.is_some() {
                http = HttpEmbedder::from_config(&cfg.client)?;
                &http
            } else {
                &tfidf
            };
            let labeler = if ctx.offline {
                ClusterLabeler::TopTerms(mode)
            } else {
                ClusterLabeler::Client(&ctx.client, mode)
            };
            let cc = ClusterConfig {
                branching: cfg.cluster.branching,
                leaf_size: cfg.cluster.leaf_size,
                max_depth: cfg.cluster.max_depth,
                seed: ctx.seed(),
                max_iters: cfg.cluster.max_iters,
                restarts: cfg.cluster.restarts,
            };
            let s = build_structure_by_clustering(&chunks, &cfg.cluster.domain_label, "corpus", embedder, labeler, &cc);
            ctx.finish_calls("structure")?;
            vec![s?]
        }
    };
    let dir = ctx.out.join(STRUCTURES_DIR);
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    for s in &structures {
        jsonl::write_json(&dir.join(format!("{}.json", s.structure_id())), s)?;
        fs::write(dir.join(format!("{}.outline.txt", s.structure_id())), s.render_outline())?;
    }
    jsonl::write_json(&ctx.out.join(STATS_FILE), &StatsFile::new(&structures))?;
    print!("{}", stats_table(&structures));
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StatsFile {
    pub structures: BTreeMap<String, StructureStats>,
    pub total: StructureStats,
}

impl StatsFile {
    fn new(structures: &[KnowledgeStructure]) -> Self {
        Self {
            structures: structures.iter().map(|s| (s.structure_id().to_string(), s.stats())).collect(),
            total: structures.iter().map(|s| s.stats()).fold(StructureStats::default(), |a, b| a + b),
        }
    }
}

fn stats_table(structures: &[KnowledgeStructure]) -> String {
    let mut out = format!("{:<24} {:>6} {:>9} {:>9} {:>7}\n", "structure", "books", "chapters", "sections", "points");
    let mut total = StructureStats::default();
    for s in structures {
        let st = s.stats();
        total = total + st;
        let _ = writeln!(
            out,
            "{:<24} {:>6} {:>9} {:>9} {:>7}",
            s.structure_id(),
            st.books,
            st.chapters,
            st.sections,
            st.points
        );
    }
    let _ = writeln!(
        out,
        "{:<24} {:>6} {:>9} {:>9} {:>7}",
        "total", total.books, total.chapters, total.sections, total.points
    );
    out
}

fn read_structure(path: &Path) -> Result<KnowledgeStructure> {
    jsonl::read_json(path).with_context(|| format!("reading structure {}", path.display()))
}

/// All structures in the output directory, sorted by file name.
pub fn read_structures(out: &Path) -> Result<Vec<KnowledgeStructure>> {
    let dir = out.join(STRUCTURES_DIR);
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .with_context(|| format!("reading {} (run `structkit structure` first)", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
    paths.sort();
    if paths.is_empty() {
        bail!("no structures in {}", dir.display());
    }
    paths.iter().map(|p| read_structure(p)).collect()
}

fn build_scpt(ctx: &Stage) -> Result<()> {
    let cfg = &ctx.cfg;
    let (chunks, report) = read_ingest(&ctx.out)?;
    let chunks = titled(chunks);
    let structures = read_structures(&ctx.out)?;
    let languages: BTreeMap<String, String> =
        report.documents.iter().map(|d| (d.id.clone(), d.language.clone())).collect();
    let pool = match &cfg.template_pool {
        Some(p) => TemplatePool::load(&cfg.resolve(p))?,
        None => TemplatePool::builtin(),
    };
    let config = ScptConfig {
        dataset_id: cfg.dataset_id.clone(),
        epochs: cfg.epochs,
        seed: ctx.seed(),
        scope: cfg.scope,
        tokenizer: cfg.tokenizer,
        budget: cfg.budget,
        workers: cfg.client.concurrency,
    };
    let manifest = build_scpt_dataset(&chunks, &structures, &languages, &pool, &config, &ctx.out.join("scpt"))?;
    println!(
        "wrote {} records over {} epoch slots ({} supervised / {} unsupervised tokens)",
        manifest.counts.total,
        manifest.files.len(),
        manifest.tokens.supervised,
        manifest.tokens.unsupervised
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct Unexplained {
    #[serde(flatten)]
    pair: QaPair,
    best_score: f64,
}

enum SsftSource {
    Synthesize(SampleBudget),
    Augment(PathBuf),
}

#[derive(Debug, Serialize)]
struct SsftSummary<'a> {
    plain: usize,
    cot: usize,
    removed_for_leakage: usize,
    dropped: &'a [DroppedBundle],
}

fn build_ssft(ctx: &Stage, source: SsftSource, test_set: Option<&Path>, multi_choice: bool) -> Result<()> {
    let cfg = &ctx.cfg;
    let (chunks, _) = read_ingest(&ctx.out)?;
    let structures = read_structures(&ctx.out)?;
    let test: Vec<QaPair> = match test_set {
        Some(p) => jsonl::read_jsonl(p).with_context(|| format!("reading test set {}", p.display()))?,
        None => Vec::new(),
    };
    let mut config = SsftConfig::new(ctx.seed(), SampleBudget::Count(0));
    config.max_branches = cfg.max_branches;
    config.leakage_threshold = cfg.leakage_threshold;
    config.mode = cfg.metric_language;
    config.synthesis.multi_choice = multi_choice;
    config.synthesis.retries = cfg.client.retries as usize;

    let output = match source {
        SsftSource::Synthesize(budget) => {
            config.budget = budget;
            let stale = ctx.out.join("ssft").join("unexplained.jsonl");
            if stale.exists() {
                fs::remove_file(stale)?;
            }
            let r = build_ssft_dataset(&structures, &chunks, &ctx.client, &config, &test);
            ctx.finish_calls("ssft")?;
            r?
        }
        SsftSource::Augment(path) => {
            let pairs: Vec<QaPair> =
                jsonl::read_jsonl(&path).with_context(|| format!("reading QA pairs {}", path.display()))?;
            let by_id: BTreeMap<&str, &Chunk> = chunks.iter().map(|c| (c.id.as_str(), c)).collect();
            let opts = RetrievalOptions { mode: cfg.metric_language, ..RetrievalOptions::default() };
            let mut samples = Vec::new();
            let mut dropped = Vec::new();
            let mut unexplained = Vec::new();
            for qa in &pairs {
                match augment_existing_qa(qa, &structures, &by_id, &ctx.client, &opts) {
                    Ok(s) => samples.push(s),
                    Err(SsftError::NoRetrievalHit { best }) => {
                        warn!("{}: no knowledge point scores above the retrieval floor (best {best:.3})", qa.id);
                        unexplained.push(Unexplained { pair: qa.clone(), best_score: best });
                    }
                    Err(e @ SsftError::Llm(_)) => {
                        warn!("dropping {}: {e}", qa.id);
                        dropped.push(DroppedBundle { id: qa.id.clone(), structure_id: String::new(), reason: e.to_string() });
                    }
                    Err(e) => {
                        ctx.finish_calls("ssft")?;
                        return Err(e.into());
                    }
                }
            }
            ctx.finish_calls("ssft")?;
            let (plain, leakage) = leakage_filter(samples, &test, config.leakage_threshold, config.mode)?;
            let by_sid: BTreeMap<&str, &KnowledgeStructure> =
                structures.iter().map(|s| (s.structure_id(), s)).collect();
            let cot = plain
                .iter()
                .map(|p| derive_cot_variant(p, by_sid[p.structure_id.as_str()]))
                .collect::<Result<Vec<_>, _>>()?;
            // Pairs without a matching knowledge point pass through unexplained.
            jsonl::write_jsonl(&ctx.out.join("ssft").join("unexplained.jsonl"), &unexplained)?;
            structkit::ssft::SsftOutput { plain, cot, leakage, dropped }
        }
    };

    let dir = ctx.out.join("ssft");
    fs::create_dir_all(&dir)?;
    let sorted = |v: &[QASample]| {
        let mut v = v.to_vec();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    };
    jsonl::write_jsonl(&dir.join("ssft.plain.jsonl"), sorted(&output.plain))?;
    jsonl::write_jsonl(&dir.join("ssft.cot.jsonl"), sorted(&output.cot))?;
    jsonl::write_json(&dir.join("leakage_report.json"), &output.leakage)?;
    let summary = SsftSummary {
        plain: output.plain.len(),
        cot: output.cot.len(),
        removed_for_leakage: output.leakage.removed.len(),
        dropped: &output.dropped,
    };
    jsonl::write_json(&dir.join("summary.json"), &summary)?;
    println!(
        "wrote {} plain and {} chain-of-thought samples; {} removed for leakage, {} dropped",
        summary.plain,
        summary.cot,
        summary.removed_for_leakage,
        output.dropped.len()
    );
    if !output.dropped.is_empty() {
        bail!("{} requests produced no usable sample (see ssft/summary.json)", output.dropped.len());
    }
    Ok(())
}

enum EvalInput {
    Items(PathBuf),
    Split { responses: PathBuf, references: PathBuf },
}

fn run_evaluate(
    out: &Path,
    input: &EvalInput,
    metrics: &[Metric],
    mode: structkit::tokenize::LanguageMode,
    workers: usize,
    csv: Option<&Path>,
) -> Result<()> {
    let items: Vec<EvalItem> = match input {
        EvalInput::Items(p) => jsonl::read_jsonl(p).with_context(|| format!("reading {}", p.display()))?,
        EvalInput::Split { responses, references } => {
            let r: Vec<ResponseItem> =
                jsonl::read_jsonl(responses).with_context(|| format!("reading {}", responses.display()))?;
            let f: Vec<ReferenceItem> =
                jsonl::read_jsonl(references).with_context(|| format!("reading {}", references.display()))?;
            join_items(r, f)?
        }
    };
    let report = evaluate(&items, metrics, mode, workers)?;
    let dir = out.join("eval");
    fs::create_dir_all(&dir)?;
    jsonl::write_json(&dir.join("eval_report.json"), &report)?;
    if let Some(p) = csv {
        fs::write(p, report.to_csv()?).with_context(|| format!("writing {}", p.display()))?;
    }
    println!("{} items", report.ids.len());
    for m in &report.metrics {
        println!("{:<16} {:.4}", m.name, m.aggregate);
    }
    Ok(())
}

enum CurveSource {
    Fit(PathBuf),
    Reference(&'static str, ScalingCurve),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CurveFile {
    pub source: String,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub points: Vec<ScalingPoint>,
    pub evaluations: Vec<ScalingPoint>,
}

/// Reads `[{r, p}, ...]`, JSON Lines of `{r, p}`, or two whitespace-separated
/// columns with `#` comments.
pub fn read_points(path: &Path) -> Result<Vec<ScalingPoint>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        return Ok(serde_json::from_str(trimmed)?);
    }
    if trimmed.starts_with('{') {
        return Ok(jsonl::read_jsonl(path)?);
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let [r, p] = cols[..] else {
            bail!("{}:{}: expected two columns", path.display(), i + 1);
        };
        let parse = |v: &str| v.parse::<f64>().with_context(|| format!("{}:{}: bad number `{v}`", path.display(), i + 1));
        out.push(ScalingPoint { r: parse(r)?, p: parse(p)? });
    }
    Ok(out)
}

fn fit_scaling(out: &Path, source: &CurveSource, at: &[f64]) -> Result<()> {
    let (name, curve, points) = match source {
        CurveSource::Fit(p) => {
            let points = read_points(p)?;
            ("fit".to_string(), fit_scaling_curve(&points)?, points)
        }
        CurveSource::Reference(name, curve) => (name.to_string(), *curve, Vec::new()),
    };
    let evaluations =
        at.iter().map(|&r| Ok(ScalingPoint { r, p: eval_scaling(&curve, r)? })).collect::<Result<Vec<_>>>()?;
    let dir = out.join("scaling");
    fs::create_dir_all(&dir)?;
    let file = CurveFile { source: name, a: curve.a, b: curve.b, c: curve.c, points: points.clone(), evaluations };
    jsonl::write_json(&dir.join("curve.json"), &file)?;

    let r_min = points.iter().map(|p| p.r).fold(1e-3f64, f64::min);
    let mut dat = format!("# r p  (p = {} ln^2 r + {} ln r + {})\n", curve.a, curve.b, curve.c);
    const SAMPLES: usize = 64;
    for i in 0..=SAMPLES {
        let r = (r_min.ln() * (1.0 - i as f64 / SAMPLES as f64)).exp();
        let _ = writeln!(dat, "{r:.6e} {:.6}", eval_scaling(&curve, r)?);
    }
    fs::write(dir.join("curve.dat"), dat)?;
    if !points.is_empty() {
        let mut pts = String::from("# r p p_fit\n");
        for p in &points {
            let _ = writeln!(pts, "{:.6e} {:.6} {:.6}", p.r, p.p, eval_scaling(&curve, p.r)?);
        }
        fs::write(dir.join("points.dat"), pts)?;
    }
    println!("a = {:.6}  b = {:.6}  c = {:.6}", curve.a, curve.b, curve.c);
    for e in &file.evaluations {
        println!("p({}) = {:.4}", e.r, e.p);
    }
    Ok(())
}
