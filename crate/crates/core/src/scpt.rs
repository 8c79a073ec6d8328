//! Mindmap-conditioned pre-training records.
//!
//! Each knowledge point becomes a two-segment record: a framed mindmap
//! condition that carries no loss, followed by the chunk text that does.
//! After every chunk of a structure has been seen in an epoch slot, one
//! recall record asks for the whole structure as a supervised mindmap.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Chunk;
use crate::llm::map_bounded;
use crate::mindmap::{apply_template, render_mindmap, MindmapError, MindmapScope, TemplatePool};
use crate::seed::derive_rng;
use crate::taxonomy::{KnowledgeStructure, TaxonomyError};
use crate::tokenize::{count_tokens, TokenizerMode};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Instructions for structure-recall records; `{DOMAIN}` is the root label.
pub const RECALL_INSTRUCTIONS: &[&str] = &[
    "Recall the complete knowledge structure of {DOMAIN} as an indented mindmap.\n",
    "Write out the full hierarchy of chapters, sections and knowledge points in {DOMAIN}.\n",
    "What is the overall organization of {DOMAIN}? Give the whole outline as a mindmap.\n",
    "Reproduce the table of contents of {DOMAIN}, from the domain down to every knowledge point.\n",
    "List every topic covered in {DOMAIN}, nested by chapter and section.\n",
];

pub fn scpt_file_name(slot: usize) -> String {
    format!("scpt.epoch{slot}.jsonl")
}

#[derive(Debug, Error)]
pub enum ScptError {
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Mindmap(#[from] MindmapError),
    #[error("chunk `{0}` is not a leaf of any structure")]
    UnassignedChunk(String),
    #[error("chunk `{0}` is a leaf of more than one structure")]
    MultiplyAssigned(String),
    #[error("chunk `{0}` has empty text")]
    EmptyChunk(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    ChunkConditional,
    StructureRecall,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub text: String,
    pub supervised: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub structure_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<u32>,
    pub language: String,
    pub epoch_slot: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub id: String,
    pub kind: RecordKind,
    pub segments: Vec<Segment>,
    pub meta: RecordMeta,
}

impl TrainingRecord {
    pub fn supervised_text(&self) -> String {
        self.segments.iter().filter(|s| s.supervised).map(|s| s.text.as_str()).collect()
    }

    pub fn unsupervised_text(&self) -> String {
        self.segments.iter().filter(|s| !s.supervised).map(|s| s.text.as_str()).collect()
    }
}

/// Conditional record for one chunk: `[condition (no loss), chunk text (loss)]`.
pub fn emit_chunk_record(
    chunk: &Chunk,
    structure: &KnowledgeStructure,
    pool: &TemplatePool,
    scope: MindmapScope,
    language: &str,
    epoch_slot: usize,
    rng: &mut impl Rng,
) -> Result<TrainingRecord, ScptError> {
    if chunk.text.is_empty() {
        return Err(ScptError::EmptyChunk(chunk.id.clone()));
    }
    let leaf = structure.path_for_chunk(&chunk.id)?.leaf();
    let mindmap = render_mindmap(structure, scope, Some(leaf))?;
    let (condition, template_id) = apply_template(&mindmap, pool, rng);
    Ok(TrainingRecord {
        id: format!("e{epoch_slot}-{}", chunk.id),
        kind: RecordKind::ChunkConditional,
        segments: vec![
            Segment { text: condition, supervised: false },
            Segment { text: chunk.text.clone(), supervised: true },
        ],
        meta: RecordMeta {
            structure_id: structure.structure_id().to_string(),
            chunk_id: Some(chunk.id.clone()),
            template_id: Some(template_id),
            language: language.to_string(),
            epoch_slot,
        },
    })
}

/// Recall record: `[instruction naming the domain (no loss), full mindmap (loss)]`.
pub fn emit_structure_recall_record(structure: &KnowledgeStructure, language: &str, epoch_slot: usize, rng: &mut impl Rng) -> TrainingRecord {
    let instruction = RECALL_INSTRUCTIONS[rng.gen_range(0..RECALL_INSTRUCTIONS.len())].replace("{DOMAIN}", structure.domain_label());
    let mindmap = render_mindmap(structure, MindmapScope::Full, None).expect("full scope needs no target");
    TrainingRecord {
        id: format!("e{epoch_slot}-recall-{}", structure.structure_id()),
        kind: RecordKind::StructureRecall,
        segments: vec![
            Segment { text: instruction, supervised: false },
            Segment { text: mindmap.text, supervised: true },
        ],
        meta: RecordMeta {
            structure_id: structure.structure_id().to_string(),
            chunk_id: None,
            template_id: None,
            language: language.to_string(),
            epoch_slot,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScptConfig {
    pub dataset_id: String,
    pub epochs: usize,
    pub seed: u64,
    pub scope: MindmapScope,
    pub tokenizer: TokenizerMode,
    /// Chunk budget the corpus was packed with; recorded in the manifest.
    pub budget: usize,
    pub workers: usize,
}

impl ScptConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            dataset_id: "scpt".into(),
            epochs: 3,
            seed,
            scope: MindmapScope::PathLocal,
            tokenizer: TokenizerMode::UnicodeWords,
            budget: crate::corpus::BUDGET_2048,
            workers: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenTotals {
    pub supervised: usize,
    pub unsupervised: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RecordCounts {
    pub total: usize,
    pub by_kind: BTreeMap<RecordKind, usize>,
    pub by_language: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub budget: usize,
    pub tokenizer: TokenizerMode,
    pub seed: u64,
    pub epochs: usize,
    pub scope: MindmapScope,
    pub template_pool_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotFile {
    pub epoch_slot: usize,
    pub file: String,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub counts: RecordCounts,
    pub tokens: TokenTotals,
    pub config: ConfigSnapshot,
    pub schedule: String,
    pub files: Vec<SlotFile>,
}

impl DatasetManifest {
    /// Recomputes counts and token totals from records.
    pub fn tally<'a>(records: impl IntoIterator<Item = &'a TrainingRecord>, mode: TokenizerMode) -> (RecordCounts, TokenTotals) {
        let mut counts = RecordCounts::default();
        let mut tokens = TokenTotals::default();
        for r in records {
            counts.total += 1;
            *counts.by_kind.entry(r.kind).or_default() += 1;
            *counts.by_language.entry(r.meta.language.clone()).or_default() += 1;
            for s in &r.segments {
                let n = count_tokens(&s.text, mode);
                if s.supervised {
                    tokens.supervised += n;
                } else {
                    tokens.unsupervised += n;
                }
            }
        }
        (counts, tokens)
    }
}

/// Language of a structure's records: shared language of its chunks, or `mixed`.
fn structure_language(s: &KnowledgeStructure, chunk_language: &BTreeMap<&str, &str>) -> String {
    let langs: BTreeSet<&str> = s.chunk_ids().iter().filter_map(|c| chunk_language.get(c).copied()).collect();
    match langs.len() {
        1 => langs.into_iter().next().expect("one").to_string(),
        0 => "und".to_string(),
        _ => "mixed".to_string(),
    }
}

/// Writes `scpt.epoch<k>.jsonl` for k in `1..=epochs` plus the manifest.
/// Each slot holds every chunk record in seeded shuffled order, then one
/// recall record per structure (sorted by structure id). Each record draws
/// from its own keyed RNG stream, so output does not depend on threading.
/// A slot file is written to a temporary name and renamed into place; on
/// any error, files written by this call are removed.
pub fn build_scpt_dataset(
    chunks: &[Chunk],
    structures: &[KnowledgeStructure],
    languages: &BTreeMap<String, String>,
    pool: &TemplatePool,
    config: &ScptConfig,
    out_dir: &Path,
) -> Result<DatasetManifest, ScptError> {
    if config.epochs == 0 {
        return Err(ScptError::InvalidConfig("epochs must be at least 1".into()));
    }
    let mut owner: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, s) in structures.iter().enumerate() {
        for c in s.chunk_index().keys() {
            if owner.insert(c, i).is_some() {
                return Err(ScptError::MultiplyAssigned(c.clone()));
            }
        }
    }
    let mut seen = BTreeSet::new();
    for c in chunks {
        if !owner.contains_key(c.id.as_str()) {
            return Err(ScptError::UnassignedChunk(c.id.clone()));
        }
        if !seen.insert(c.id.as_str()) {
            return Err(ScptError::InvalidConfig(format!("chunk `{}` listed twice", c.id)));
        }
    }
    let chunk_language: BTreeMap<&str, &str> = chunks
        .iter()
        .map(|c| (c.id.as_str(), languages.get(&c.doc_id).map_or("und", String::as_str)))
        .collect();
    let mut ordered: Vec<&KnowledgeStructure> = structures.iter().collect();
    ordered.sort_by(|a, b| a.structure_id().cmp(b.structure_id()));

    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ScptError::Io { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written: Vec<PathBuf> = Vec::new();
    let result = (|| {
        let mut files = Vec::new();
        let mut all_counts = (RecordCounts::default(), TokenTotals::default());
        for slot in 1..=config.epochs {
            let mut records = map_bounded(chunks, config.workers, |c| {
                let s = &structures[owner[c.id.as_str()]];
                let mut rng = derive_rng(config.seed, &format!("scpt:{slot}:{}", c.id));
                emit_chunk_record(c, s, pool, config.scope, chunk_language[c.id.as_str()], slot, &mut rng)
            })
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
            records.shuffle(&mut derive_rng(config.seed, &format!("scpt:{slot}:shuffle")));
            for s in &ordered {
                let mut rng = derive_rng(config.seed, &format!("scpt:{slot}:recall:{}", s.structure_id()));
                records.push(emit_structure_recall_record(s, &structure_language(s, &chunk_language), slot, &mut rng));
            }

            let name = scpt_file_name(slot);
            let path = out_dir.join(&name);
            let tmp = out_dir.join(format!("{name}.tmp"));
            written.push(tmp.clone());
            crate::jsonl::write_jsonl(&tmp, &records).map_err(io_err(&tmp))?;
            fs::rename(&tmp, &path).map_err(io_err(&path))?;
            written.push(path);

            let (c, t) = DatasetManifest::tally(&records, config.tokenizer);
            all_counts = merge_counts(all_counts, c, t);
            files.push(SlotFile { epoch_slot: slot, file: name, records: records.len() });
            info!("scpt slot {slot}: {} records", records.len());
        }
        let manifest = DatasetManifest {
            dataset_id: config.dataset_id.clone(),
            counts: all_counts.0,
            tokens: all_counts.1,
            config: ConfigSnapshot {
                budget: config.budget,
                tokenizer: config.tokenizer,
                seed: config.seed,
                epochs: config.epochs,
                scope: config.scope,
                template_pool_sha256: pool.hash(),
            },
            schedule: format!(
                "{} epoch slot(s); each slot lists every chunk-conditional record once in seeded shuffled order, then one structure-recall record per structure",
                config.epochs
            ),
            files,
        };
        let path = out_dir.join(MANIFEST_FILE);
        written.push(path.clone());
        crate::jsonl::write_json(&path, &manifest).map_err(io_err(&path))?;
        Ok(manifest)
    })();
    if result.is_err() {
        for p in &written {
            let _ = fs::remove_file(p);
        }
    }
    result
}

fn merge_counts(acc: (RecordCounts, TokenTotals), c: RecordCounts, t: TokenTotals) -> (RecordCounts, TokenTotals) {
    let (mut counts, mut tokens) = acc;
    counts.total += c.total;
    for (k, v) in c.by_kind {
        *counts.by_kind.entry(k).or_default() += v;
    }
    for (k, v) in c.by_language {
        *counts.by_language.entry(k).or_default() += v;
    }
    tokens.supervised += t.supervised;
    tokens.unsupervised += t.unsupervised;
    (counts, tokens)
}

/// Checks the per-slot ordering contract on emitted records: every chunk of
/// a structure appears exactly once before that structure's recall record.
pub fn check_schedule(records: &[TrainingRecord], structures: &[KnowledgeStructure]) -> Result<(), String> {
    let mut seen: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in records {
        match r.kind {
            RecordKind::ChunkConditional => {
                let c = r.meta.chunk_id.as_deref().ok_or("chunk record without chunk_id")?;
                if !seen.entry(&r.meta.structure_id).or_default().insert(c) {
                    return Err(format!("chunk `{c}` appears twice"));
                }
            }
            RecordKind::StructureRecall => {
                let s = structures
                    .iter()
                    .find(|s| s.structure_id() == r.meta.structure_id)
                    .ok_or_else(|| format!("unknown structure `{}`", r.meta.structure_id))?;
                let got = seen.get(r.meta.structure_id.as_str()).cloned().unwrap_or_default();
                let want: BTreeSet<&str> = s.chunk_index().keys().map(String::as_str).collect();
                if got != want {
                    return Err(format!("recall for `{}` before all of its chunks", r.meta.structure_id));
                }
            }
        }
    }
    Ok(())
}
