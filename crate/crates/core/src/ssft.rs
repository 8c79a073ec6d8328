//! Structure-aware QA samples for supervised fine-tuning.
//!
//! Questions are synthesized along sampled knowledge-path bundles: one
//! branch gives a knowledge-intensive question, two or more give multi-hop
//! questions. Every plain sample also yields a chain-of-thought variant
//! whose answer starts with the path-local mindmap of its knowledge points.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Chunk;
use crate::eval::{choice_letter, token_f1, token_f1_tokens};
use crate::llm::{map_bounded, GenerationClient, GenerationRequest, LlmError, RequestTag};
use crate::mindmap::{render_targets, MindmapError, MindmapScope};
use crate::prompts::{self, PromptPoint};
use crate::seed::derive_rng;
use crate::taxonomy::{lowest_common_ancestor, sample_path_bundle, validate_bundle, KnowledgePath, KnowledgeStructure, PathBundle, TaxonomyError};
use crate::tokenize::{normalize_tokens, LanguageMode};

/// Appended to the question of every chain-of-thought variant.
pub const COT_SENTENCE: &str = "Let's recall the relevant knowledge structure step by step before answering.";

pub const DEFAULT_LEAKAGE_THRESHOLD: f64 = 0.5;

/// Question focus hints rotated across synthesis prompts.
pub const STYLES: &[&str] = &[
    "Focus on a definition or key fact.",
    "Focus on a cause or mechanism.",
    "Focus on a consequence or practical application.",
    "Focus on a comparison or relationship.",
];

#[derive(Debug, Error)]
pub enum SsftError {
    #[error("could not parse synthesis response: {0}")]
    SynthesisParseError(String),
    #[error("no knowledge point scored above the retrieval floor (best {best:.3})")]
    NoRetrievalHit { best: f64 },
    #[error("chunk `{0}` referenced by the structure is missing")]
    MissingChunk(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Mindmap(#[from] MindmapError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HopKind {
    KnowledgeIntensive,
    TwoHop,
    MultiHop,
}

impl HopKind {
    pub fn for_branches(n: usize) -> Self {
        match n {
            0 | 1 => HopKind::KnowledgeIntensive,
            2 => HopKind::TwoHop,
            _ => HopKind::MultiHop,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Plain,
    Cot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QASample {
    pub id: String,
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<usize>,
    pub structure_id: String,
    pub bundle: PathBundle,
    /// Chunk ids of the bundle leaves, in branch order.
    pub chunk_ids: Vec<String>,
    pub hop_kind: HopKind,
    pub variant: Variant,
}

/// A question-answer pair from an existing dataset or a test set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub id: String,
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedQa {
    pub question: String,
    pub answer: String,
    pub explanation: Option<String>,
    pub options: Option<Vec<String>>,
}

const FIELDS: [&str; 4] = ["QUESTION:", "OPTIONS:", "ANSWER:", "EXPLANATION:"];

/// Splits a response into its delimited fields; a field runs until the
/// next delimiter line.
fn fields(text: &str) -> BTreeMap<&'static str, String> {
    let mut out: BTreeMap<&'static str, Vec<&str>> = BTreeMap::new();
    let mut current: Option<&'static str> = None;
    for line in text.lines() {
        let trimmed = line.trim_start();
        if let Some(f) = FIELDS.iter().find(|f| trimmed.starts_with(**f)) {
            current = Some(f);
            out.entry(f).or_default().push(trimmed[f.len()..].trim());
            continue;
        }
        if let Some(f) = current {
            out.entry(f).or_default().push(line.trim_end());
        }
    }
    out.into_iter().map(|(k, v)| (k, v.join("\n").trim().to_string())).collect()
}

/// Parses the `QUESTION:` / `OPTIONS:` / `ANSWER:` / `EXPLANATION:` format.
pub fn parse_qa_response(text: &str, multi_choice: bool) -> Result<ParsedQa, SsftError> {
    let f = fields(text);
    let get = |k: &str| f.get(k).filter(|v| !v.is_empty()).cloned();
    let question = get("QUESTION:").ok_or_else(|| SsftError::SynthesisParseError("missing QUESTION".into()))?;
    let answer = get("ANSWER:").ok_or_else(|| SsftError::SynthesisParseError("missing ANSWER".into()))?;
    let explanation = get("EXPLANATION:");
    let options = if multi_choice {
        let block = get("OPTIONS:").ok_or_else(|| SsftError::SynthesisParseError("missing OPTIONS".into()))?;
        let opts: Vec<String> = block
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .enumerate()
            .map(|(i, l)| {
                let prefix_dot = format!("{}.", choice_letter(i));
                let prefix_paren = format!("{})", choice_letter(i));
                l.strip_prefix(&prefix_dot)
                    .or_else(|| l.strip_prefix(&prefix_paren))
                    .map(|o| o.trim().to_string())
                    .ok_or_else(|| SsftError::SynthesisParseError(format!("option line `{l}` is not labeled {}", choice_letter(i))))
            })
            .collect::<Result<_, _>>()?;
        if opts.len() < 2 {
            return Err(SsftError::SynthesisParseError("fewer than two options".into()));
        }
        Some(opts)
    } else {
        None
    };
    Ok(ParsedQa { question, answer, explanation, options })
}

fn answer_letter(answer: &str, n: usize) -> Option<usize> {
    let a = answer.trim().trim_start_matches('(');
    let c = a.chars().next()?;
    let next = a[c.len_utf8()..].chars().next();
    let i = (c as u32).checked_sub('A' as u32)? as usize;
    (c.is_ascii_uppercase() && i < n && next.map_or(true, |x| !x.is_alphanumeric())).then_some(i)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisOptions {
    pub multi_choice: bool,
    /// Extra requests after an unparsable response.
    pub retries: usize,
    pub max_output_tokens: u32,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            multi_choice: false,
            retries: 2,
            max_output_tokens: 1024,
        }
    }
}

fn prompt_points<'a>(s: &'a KnowledgeStructure, paths: &[KnowledgePath], chunks: &[&'a Chunk]) -> Vec<PromptPoint<'a>> {
    paths
        .iter()
        .zip(chunks)
        .map(|(p, c)| PromptPoint {
            path: s.labels(&p.0),
            text: &c.text,
        })
        .collect()
}

fn leaf_chunks<'a>(s: &KnowledgeStructure, bundle: &PathBundle, chunks: &BTreeMap<&str, &'a Chunk>) -> Result<Vec<&'a Chunk>, SsftError> {
    bundle
        .leaves()
        .into_iter()
        .map(|l| {
            let id = s.nodes()[l].chunk_ref.as_deref().expect("leaves carry chunk refs");
            chunks.get(id).copied().ok_or_else(|| SsftError::MissingChunk(id.to_string()))
        })
        .collect()
}

/// Synthesizes one plain sample for `bundle`; `id` is left empty.
pub fn synthesize_qa(
    s: &KnowledgeStructure,
    bundle: &PathBundle,
    chunks: &BTreeMap<&str, &Chunk>,
    client: &GenerationClient,
    style: &str,
    opts: &SynthesisOptions,
) -> Result<QASample, SsftError> {
    let leaf_chunks = leaf_chunks(s, bundle, chunks)?;
    let mindmap = render_targets(s, MindmapScope::PathLocal, &bundle.leaves())?;
    let points = prompt_points(s, &bundle.branches, &leaf_chunks);
    let mut request = GenerationRequest::new(
        RequestTag::QaSynthesis,
        prompts::synthesis_prompt(&mindmap.text, &points, style, opts.multi_choice),
    );
    request.max_output_tokens = opts.max_output_tokens;
    let mut last = None;
    for _ in 0..=opts.retries {
        let response = client.generate(&request)?;
        match parse_qa_response(&response.text, opts.multi_choice).and_then(|p| {
            let gold = match &p.options {
                Some(o) => Some(answer_letter(&p.answer, o.len()).ok_or_else(|| {
                    SsftError::SynthesisParseError(format!("answer `{}` is not an option letter", p.answer))
                })?),
                None => None,
            };
            Ok((p, gold))
        }) {
            Ok((p, gold)) => {
                return Ok(QASample {
                    id: String::new(),
                    question: p.question,
                    answer: p.answer,
                    explanation: p.explanation,
                    options: p.options,
                    gold,
                    structure_id: s.structure_id().to_string(),
                    hop_kind: HopKind::for_branches(bundle.branches.len()),
                    bundle: bundle.clone(),
                    chunk_ids: leaf_chunks.iter().map(|c| c.id.clone()).collect(),
                    variant: Variant::Plain,
                })
            }
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Chain-of-thought variant: the question gains [`COT_SENTENCE`]; the answer
/// becomes the path-local mindmap of the bundle leaves, the explanation (if
/// any) and the original answer, separated by blank lines.
pub fn derive_cot_variant(sample: &QASample, s: &KnowledgeStructure) -> Result<QASample, SsftError> {
    let mindmap = render_targets(s, MindmapScope::PathLocal, &sample.bundle.leaves())?;
    let mut parts = vec![mindmap.text];
    if let Some(e) = &sample.explanation {
        parts.push(e.clone());
    }
    parts.push(sample.answer.clone());
    Ok(QASample {
        id: format!("{}-cot", sample.id),
        question: format!("{} {COT_SENTENCE}", sample.question.trim_end()),
        answer: parts.join("\n\n"),
        variant: Variant::Cot,
        ..sample.clone()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalOptions {
    pub top_k: usize,
    pub floor: f64,
    /// Chunk words compared after the leaf label.
    pub head_words: usize,
    pub mode: LanguageMode,
}

impl Default for RetrievalOptions {
    fn default() -> Self {
        Self {
            top_k: 2,
            floor: 0.05,
            head_words: 64,
            mode: LanguageMode::Unicode,
        }
    }
}

/// Ranked `(structure index, leaf, score)` for a question; ties keep
/// document order.
pub fn retrieve_leaves(
    question: &str,
    structures: &[KnowledgeStructure],
    chunks: &BTreeMap<&str, &Chunk>,
    opts: &RetrievalOptions,
) -> Vec<(usize, usize, f64)> {
    let q = normalize_tokens(question, opts.mode);
    let mut scored = Vec::new();
    for (si, s) in structures.iter().enumerate() {
        for leaf in s.leaves() {
            let node = &s.nodes()[leaf];
            let mut doc = normalize_tokens(&node.label, opts.mode);
            if let Some(c) = node.chunk_ref.as_deref().and_then(|id| chunks.get(id)) {
                doc.extend(normalize_tokens(&c.text, opts.mode).into_iter().take(opts.head_words));
            }
            scored.push((si, leaf, token_f1_tokens(&q, &doc)));
        }
    }
    scored.sort_by(|a, b| b.2.total_cmp(&a.2));
    scored
}

/// Explains an existing QA pair with retrieved knowledge points. Leaves
/// come from the best-scoring structure; lower-ranked leaves are added
/// while they keep the bundle valid.
pub fn augment_existing_qa(
    qa: &QaPair,
    structures: &[KnowledgeStructure],
    chunks: &BTreeMap<&str, &Chunk>,
    client: &GenerationClient,
    opts: &RetrievalOptions,
) -> Result<QASample, SsftError> {
    let ranked = retrieve_leaves(&qa.question, structures, chunks, opts);
    let best = ranked.first().map_or(0.0, |r| r.2);
    if best < opts.floor {
        return Err(SsftError::NoRetrievalHit { best });
    }
    let si = ranked[0].0;
    let s = &structures[si];
    let mut leaves: Vec<usize> = Vec::new();
    for &(sj, leaf, score) in &ranked {
        if leaves.len() >= opts.top_k.max(1) || score < opts.floor {
            break;
        }
        if sj != si {
            continue;
        }
        let mut trial = leaves.clone();
        trial.push(leaf);
        if validate_bundle(s, &bundle_for(s, &trial)?, opts.top_k.max(1)).is_ok() {
            leaves = trial;
        }
    }
    let bundle = bundle_for(s, &leaves)?;
    let leaf_chunks = leaf_chunks(s, &bundle, chunks)?;
    let points = prompt_points(s, &bundle.branches, &leaf_chunks);
    let request = GenerationRequest::new(RequestTag::Explanation, prompts::explanation_prompt(&qa.question, &qa.answer, &points));
    let response = client.generate(&request)?;
    let explanation = fields(&response.text)
        .remove("EXPLANATION:")
        .filter(|e| !e.is_empty())
        .unwrap_or_else(|| response.text.trim().to_string());
    Ok(QASample {
        id: qa.id.clone(),
        question: qa.question.clone(),
        answer: qa.answer.clone(),
        explanation: Some(explanation),
        options: None,
        gold: None,
        structure_id: s.structure_id().to_string(),
        hop_kind: HopKind::for_branches(bundle.branches.len()),
        chunk_ids: leaf_chunks.iter().map(|c| c.id.clone()).collect(),
        bundle,
        variant: Variant::Plain,
    })
}

fn bundle_for(s: &KnowledgeStructure, leaves: &[usize]) -> Result<PathBundle, SsftError> {
    let order = s.preorder();
    let mut sorted = leaves.to_vec();
    sorted.sort_by_key(|&l| order.iter().position(|&n| n == l));
    let branches = sorted.iter().map(|&l| s.path_to(l).map(KnowledgePath)).collect::<Result<Vec<_>, _>>()?;
    let branch_point = if sorted.len() >= 2 {
        lowest_common_ancestor(s, &sorted).expect("leaves share the root")
    } else {
        s.root()
    };
    Ok(PathBundle { branch_point, branches })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedSample {
    pub sample_id: String,
    pub test_id: String,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub threshold: f64,
    pub kept: Vec<String>,
    pub removed: Vec<RemovedSample>,
}

/// Removes samples whose question+answer has token F1 strictly above
/// `threshold` with some test item's question+answer.
pub fn leakage_filter(samples: Vec<QASample>, test_set: &[QaPair], threshold: f64, mode: LanguageMode) -> Result<(Vec<QASample>, LeakageReport), SsftError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(SsftError::InvalidConfig(format!("leakage threshold {threshold} outside (0, 1]")));
    }
    let tests: Vec<(String, Vec<String>)> = test_set
        .iter()
        .map(|t| (t.id.clone(), normalize_tokens(&format!("{} {}", t.question, t.answer), mode)))
        .collect();
    let mut kept = Vec::new();
    let mut report = LeakageReport { threshold, kept: Vec::new(), removed: Vec::new() };
    for s in samples {
        let toks = normalize_tokens(&format!("{} {}", s.question, s.answer), mode);
        let mut best: Option<(&str, f64)> = None;
        for (id, t) in &tests {
            let f = token_f1_tokens(&toks, t);
            if best.map_or(true, |(_, b)| f > b) {
                best = Some((id, f));
            }
        }
        match best {
            Some((id, f)) if f > threshold => report.removed.push(RemovedSample { sample_id: s.id.clone(), test_id: id.to_string(), f1: f }),
            _ => {
                report.kept.push(s.id.clone());
                kept.push(s);
            }
        }
    }
    Ok((kept, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum SampleBudget {
    /// Exactly this many bundles.
    Count(usize),
    /// Random bundles until every leaf is touched or `cap` draws, then one
    /// direct single-branch bundle per still-uncovered leaf.
    Coverage { cap: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsftConfig {
    pub budget: SampleBudget,
    pub max_branches: usize,
    pub seed: u64,
    pub synthesis: SynthesisOptions,
    pub leakage_threshold: f64,
    pub mode: LanguageMode,
}

impl SsftConfig {
    pub fn new(seed: u64, budget: SampleBudget) -> Self {
        Self {
            budget,
            max_branches: 3,
            seed,
            synthesis: SynthesisOptions::default(),
            leakage_threshold: DEFAULT_LEAKAGE_THRESHOLD,
            mode: LanguageMode::Unicode,
        }
    }
}

/// A bundle queued for synthesis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedBundle {
    pub structure: usize,
    pub bundle: PathBundle,
    pub fell_back: bool,
}

/// Draws bundles: structures are chosen with probability proportional to
/// their leaf count.
pub fn plan_bundles(structures: &[KnowledgeStructure], config: &SsftConfig) -> Result<Vec<PlannedBundle>, SsftError> {
    if structures.is_empty() {
        return Err(SsftError::InvalidConfig("no structures".into()));
    }
    if config.max_branches == 0 {
        return Err(SsftError::InvalidConfig("max_branches must be at least 1".into()));
    }
    let mut rng = derive_rng(config.seed, "ssft:bundles");
    let total: usize = structures.iter().map(KnowledgeStructure::leaf_count).sum();
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Result<PlannedBundle, SsftError> {
        let mut pick = rng.gen_range(0..total);
        let si = structures
            .iter()
            .position(|s| {
                if pick < s.leaf_count() {
                    true
                } else {
                    pick -= s.leaf_count();
                    false
                }
            })
            .expect("pick < total");
        let d = sample_path_bundle(&structures[si], config.max_branches, rng)?;
        Ok(PlannedBundle { structure: si, bundle: d.bundle, fell_back: d.fell_back })
    };
    let mut plan = Vec::new();
    match config.budget {
        SampleBudget::Count(n) => {
            for _ in 0..n {
                plan.push(draw(&mut rng)?);
            }
        }
        SampleBudget::Coverage { cap } => {
            let mut uncovered: BTreeSet<(usize, usize)> = structures
                .iter()
                .enumerate()
                .flat_map(|(si, s)| s.leaves().into_iter().map(move |l| (si, l)))
                .collect();
            while !uncovered.is_empty() && plan.len() < cap {
                let p = draw(&mut rng)?;
                for l in p.bundle.leaves() {
                    uncovered.remove(&(p.structure, l));
                }
                plan.push(p);
            }
            for (si, leaf) in uncovered {
                let s = &structures[si];
                plan.push(PlannedBundle {
                    structure: si,
                    bundle: PathBundle { branch_point: s.root(), branches: vec![KnowledgePath(s.path_to(leaf)?)] },
                    fell_back: false,
                });
            }
        }
    }
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedBundle {
    pub id: String,
    pub structure_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsftOutput {
    pub plain: Vec<QASample>,
    pub cot: Vec<QASample>,
    pub leakage: LeakageReport,
    pub dropped: Vec<DroppedBundle>,
}

pub fn sample_id(index: usize) -> String {
    format!("qa-{:05}", index + 1)
}

/// Plans bundles, synthesizes one plain sample per bundle (bounded-parallel
/// through the client), drops unparsable ones, filters leakage against
/// `test_set` and derives the chain-of-thought variant of every kept sample.
pub fn build_ssft_dataset(
    structures: &[KnowledgeStructure],
    chunks: &[Chunk],
    client: &GenerationClient,
    config: &SsftConfig,
    test_set: &[QaPair],
) -> Result<SsftOutput, SsftError> {
    let by_id: BTreeMap<&str, &Chunk> = chunks.iter().map(|c| (c.id.as_str(), c)).collect();
    for s in structures {
        for id in s.chunk_index().keys() {
            if !by_id.contains_key(id.as_str()) {
                return Err(SsftError::MissingChunk(id.clone()));
            }
        }
    }
    let plan = plan_bundles(structures, config)?;
    let indexed: Vec<(usize, &PlannedBundle)> = plan.iter().enumerate().collect();
    let results = map_bounded(&indexed, client.concurrency(), |(i, p)| {
        let style = STYLES[*i % STYLES.len()];
        synthesize_qa(&structures[p.structure], &p.bundle, &by_id, client, style, &config.synthesis)
    });
    let mut plain = Vec::new();
    let mut dropped = Vec::new();
    for ((i, p), r) in indexed.iter().zip(results) {
        match r {
            Ok(mut sample) => {
                sample.id = sample_id(*i);
                plain.push(sample);
            }
            Err(e @ (SsftError::SynthesisParseError(_) | SsftError::Llm(_))) => {
                warn!("dropping {}: {e}", sample_id(*i));
                dropped.push(DroppedBundle {
                    id: sample_id(*i),
                    structure_id: structures[p.structure].structure_id().to_string(),
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    let (plain, leakage) = leakage_filter(plain, test_set, config.leakage_threshold, config.mode)?;
    let by_sid: BTreeMap<&str, &KnowledgeStructure> = structures.iter().map(|s| (s.structure_id(), s)).collect();
    let cot = plain
        .iter()
        .map(|p| derive_cot_variant(p, by_sid[p.structure_id.as_str()]))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SsftOutput { plain, cot, leakage, dropped })
}

/// Max token F1 between a sample's question+answer and any test item.
pub fn max_test_f1(sample: &QASample, test_set: &[QaPair], mode: LanguageMode) -> f64 {
    test_set
        .iter()
        .map(|t| token_f1(&format!("{} {}", sample.question, sample.answer), &format!("{} {}", t.question, t.answer), mode))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::llm::{MockBackend, OfflineResponder, RetryPolicy};
    use crate::mindmap::parse_mindmap;
    use crate::taxonomy::{Level, OutlineNode};

    fn chunk(id: &str, text: &str) -> Chunk {
        Chunk {
            id: id.into(),
            doc_id: "d".into(),
            index: 0,
            text: text.into(),
            token_count: 0,
            title: None,
            separator: String::new(),
            leading: String::new(),
        }
    }

    fn corpus() -> (KnowledgeStructure, Vec<Chunk>) {
        let forest = vec![
            OutlineNode::branch(
                "Digestion",
                vec![
                    OutlineNode::leaf("Bile", Some("c0".into())),
                    OutlineNode::leaf("Pancreatic enzymes", Some("c1".into())),
                ],
            ),
            OutlineNode::branch("Hormones", vec![OutlineNode::leaf("Insulin", Some("c2".into()))]),
        ];
        let s = KnowledgeStructure::from_outline("phys", "Physiology", &forest, Level::Chapter).unwrap();
        let chunks = vec![
            chunk("c0", "Bile is produced by the liver and emulsifies dietary fat. It is stored in the gallbladder."),
            chunk("c1", "The pancreas secretes lipase and amylase into the duodenum."),
            chunk("c2", "Insulin lowers blood glucose by promoting cellular uptake."),
        ];
        (s, chunks)
    }

    fn offline_client() -> GenerationClient {
        let mock = MockBackend::new().with_fallback(Arc::new(|r| OfflineResponder.respond(r)));
        GenerationClient::new(Arc::new(mock)).with_policy(RetryPolicy::immediate(0))
    }

    fn canned(prompt: &str, response: &str) -> GenerationClient {
        let mut mock = MockBackend::new();
        mock.insert(prompt, response);
        GenerationClient::new(Arc::new(mock)).with_policy(RetryPolicy::immediate(0))
    }

    fn path(s: &KnowledgeStructure, c: &str) -> KnowledgePath {
        s.path_for_chunk(c).unwrap()
    }

    #[test]
    fn hop_kinds() {
        assert_eq!(HopKind::for_branches(1), HopKind::KnowledgeIntensive);
        assert_eq!(HopKind::for_branches(2), HopKind::TwoHop);
        assert_eq!(HopKind::for_branches(4), HopKind::MultiHop);
    }

    #[test]
    fn single_branch_is_knowledge_intensive() {
        let (s, chunks) = corpus();
        let by_id = chunks.iter().map(|c| (c.id.as_str(), c)).collect();
        let bundle = PathBundle { branch_point: s.root(), branches: vec![path(&s, "c2")] };
        let q = synthesize_qa(&s, &bundle, &by_id, &offline_client(), STYLES[0], &SynthesisOptions::default()).unwrap();
        assert_eq!(q.hop_kind, HopKind::KnowledgeIntensive);
        assert_eq!(q.answer, "Insulin lowers blood glucose by promoting cellular uptake.");
        assert_eq!(q.chunk_ids, ["c2"]);
    }

    fn two_branch_prompt(s: &KnowledgeStructure, chunks: &[Chunk]) -> (PathBundle, String) {
        let bundle = PathBundle { branch_point: s.root(), branches: vec![path(s, "c0"), path(s, "c2")] };
        let mindmap = render_targets(s, MindmapScope::PathLocal, &bundle.leaves()).unwrap();
        let points = vec![
            PromptPoint { path: s.labels(&bundle.branches[0].0), text: &chunks[0].text },
            PromptPoint { path: s.labels(&bundle.branches[1].0), text: &chunks[2].text },
        ];
        (bundle, prompts::synthesis_prompt(&mindmap.text, &points, "", false))
    }

    #[test]
    fn canned_triple_passes_through() {
        let (s, chunks) = corpus();
        let by_id = chunks.iter().map(|c| (c.id.as_str(), c)).collect();
        let (bundle, prompt) = two_branch_prompt(&s, &chunks);
        let client = canned(&prompt, "QUESTION: Which organ makes bile?\nANSWER: The liver.\nEXPLANATION: Bile sits under Digestion.\nIt aids fat digestion.");
        let q = synthesize_qa(&s, &bundle, &by_id, &client, "", &SynthesisOptions::default()).unwrap();
        assert_eq!(q.question, "Which organ makes bile?");
        assert_eq!(q.answer, "The liver.");
        assert_eq!(q.explanation.as_deref(), Some("Bile sits under Digestion.\nIt aids fat digestion."));
        assert_eq!(q.hop_kind, HopKind::TwoHop);

        let client = canned(&prompt, "QUESTION: Which organ makes bile?\nThe liver.");
        match synthesize_qa(&s, &bundle, &by_id, &client, "", &SynthesisOptions::default()) {
            Err(SsftError::SynthesisParseError(m)) => assert!(m.contains("ANSWER")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn multi_choice_parsing() {
        let p = parse_qa_response("QUESTION: Q?\nOPTIONS:\nA. liver\nB. kidney\nC) spleen\nANSWER: C\nEXPLANATION: e", true).unwrap();
        assert_eq!(p.options.unwrap(), ["liver", "kidney", "spleen"]);
        assert_eq!(answer_letter("C", 3), Some(2));
        assert_eq!(answer_letter("(B) kidney", 3), Some(1));
        assert_eq!(answer_letter("Because", 3), None);
        assert!(parse_qa_response("QUESTION: Q?\nANSWER: A", true).is_err());
        assert!(parse_qa_response("QUESTION: Q?\nOPTIONS:\nliver\nANSWER: A", true).is_err());
    }

    #[test]
    fn cot_variant() {
        let (s, chunks) = corpus();
        let by_id = chunks.iter().map(|c| (c.id.as_str(), c)).collect();
        let bundle = PathBundle { branch_point: s.root(), branches: vec![path(&s, "c0"), path(&s, "c2")] };
        let mut plain = synthesize_qa(&s, &bundle, &by_id, &offline_client(), "", &SynthesisOptions::default()).unwrap();
        plain.id = "qa-00001".into();
        let before = plain.clone();
        let cot = derive_cot_variant(&plain, &s).unwrap();
        assert_eq!(plain, before);
        assert!(cot.question.ends_with(COT_SENTENCE));
        assert_eq!(cot.id, "qa-00001-cot");
        assert!(cot.id.starts_with(&plain.id));
        assert_eq!((cot.bundle.clone(), cot.chunk_ids.clone()), (plain.bundle.clone(), plain.chunk_ids.clone()));
        let tree = parse_mindmap(&cot.answer);
        let labels = tree.labels();
        for leaf in bundle.leaves() {
            assert!(labels.contains(&s.nodes()[leaf].label.as_str()));
        }
        assert!(cot.answer.ends_with(&plain.answer));
    }

    #[test]
    fn augmentation_retrieves_and_explains() {
        let (s, chunks) = corpus();
        let by_id: BTreeMap<&str, &Chunk> = chunks.iter().map(|c| (c.id.as_str(), c)).collect();
        let qa = QaPair { id: "x1".into(), question: "The pancreas secretes lipase and amylase into the duodenum.".into(), answer: "lipase".into() };
        let ranked = retrieve_leaves(&qa.question, std::slice::from_ref(&s), &by_id, &RetrievalOptions::default());
        assert_eq!(s.nodes()[ranked[0].1].chunk_ref.as_deref(), Some("c1"));

        let sample = augment_existing_qa(&qa, std::slice::from_ref(&s), &by_id, &offline_client(), &RetrievalOptions::default()).unwrap();
        assert!(sample.chunk_ids.iter().any(|c| c == "c1"));
        assert!(sample.explanation.unwrap().starts_with("The question falls under"));

        // a canned explanation is attached verbatim
        let opts = RetrievalOptions { top_k: 1, ..Default::default() };
        let leaf_path = s.path_for_chunk("c1").unwrap();
        let points = [PromptPoint { path: s.labels(&leaf_path.0), text: &chunks[1].text }];
        let client = canned(&prompts::explanation_prompt(&qa.question, &qa.answer, &points), "EXPLANATION: Lipase is pancreatic.");
        let sample = augment_existing_qa(&qa, std::slice::from_ref(&s), &by_id, &client, &opts).unwrap();
        assert_eq!(sample.explanation.as_deref(), Some("Lipase is pancreatic."));

        let nonsense = QaPair { id: "x2".into(), question: "zzyzx qwerty plover".into(), answer: "-".into() };
        for (_, _, score) in retrieve_leaves(&nonsense.question, std::slice::from_ref(&s), &by_id, &RetrievalOptions::default()) {
            assert!(score < 0.05);
        }
        assert!(matches!(
            augment_existing_qa(&nonsense, std::slice::from_ref(&s), &by_id, &offline_client(), &RetrievalOptions::default()),
            Err(SsftError::NoRetrievalHit { .. })
        ));
    }

    fn sample(id: &str, q: &str, a: &str) -> QASample {
        let s = KnowledgeStructure::trivial("t", "x", "c");
        QASample {
            id: id.into(),
            question: q.into(),
            answer: a.into(),
            explanation: None,
            options: None,
            gold: None,
            structure_id: "t".into(),
            bundle: PathBundle { branch_point: 0, branches: vec![s.path_for_chunk("c").unwrap()] },
            chunk_ids: vec!["c".into()],
            hop_kind: HopKind::KnowledgeIntensive,
            variant: Variant::Plain,
        }
    }

    #[test]
    fn leakage_rules() {
        let tests = vec![
            QaPair { id: "t1".into(), question: "What makes bile?".into(), answer: "The liver".into() },
            QaPair { id: "t2".into(), question: "a b".into(), answer: "c d".into() },
        ];
        let samples = vec![
            sample("dup", "What makes bile?", "The liver"),
            sample("far", "Zebra", "stripes"),
            // tokens {a b x y}: overlap 2 with {a b c d}; P = R = 1/2, F1 = 1/2
            sample("half", "a b", "x y"),
        ];
        let (kept, report) = leakage_filter(samples, &tests, 0.5, LanguageMode::Unicode).unwrap();
        assert_eq!(report.removed, vec![RemovedSample { sample_id: "dup".into(), test_id: "t1".into(), f1: 1.0 }]);
        assert_eq!(report.kept, ["far", "half"]);
        assert_eq!(max_test_f1(&kept[0], &tests, LanguageMode::Unicode), 0.0);
        assert_eq!(max_test_f1(&kept[1], &tests, LanguageMode::Unicode), 0.5);
        let (again, r2) = leakage_filter(kept.clone(), &tests, 0.5, LanguageMode::Unicode).unwrap();
        assert_eq!(again, kept);
        assert!(r2.removed.is_empty());
        assert!(leakage_filter(vec![], &tests, 0.0, LanguageMode::Unicode).is_err());
    }

    #[test]
    fn dataset_count_and_coverage() {
        let (s, chunks) = corpus();
        let client = offline_client();
        let out = build_ssft_dataset(std::slice::from_ref(&s), &chunks, &client, &SsftConfig::new(5, SampleBudget::Count(4)), &[]).unwrap();
        assert_eq!(out.plain.len() + out.cot.len(), 8);
        for (p, c) in out.plain.iter().zip(&out.cot) {
            assert_eq!(c.id, format!("{}-cot", p.id));
            assert_eq!(p.hop_kind, HopKind::for_branches(p.bundle.branches.len()));
            validate_bundle(&s, &p.bundle, 3).unwrap();
        }
        let again = build_ssft_dataset(std::slice::from_ref(&s), &chunks, &client, &SsftConfig::new(5, SampleBudget::Count(4)), &[]).unwrap();
        assert_eq!(again, out);

        let out = build_ssft_dataset(std::slice::from_ref(&s), &chunks, &client, &SsftConfig::new(5, SampleBudget::Coverage { cap: 1 }), &[]).unwrap();
        let touched: BTreeSet<&str> = out.plain.iter().flat_map(|p| p.chunk_ids.iter().map(String::as_str)).collect();
        assert_eq!(touched, BTreeSet::from(["c0", "c1", "c2"]));
    }
}
