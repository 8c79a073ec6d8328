//! Document ingestion: normalization, paragraph segmentation, token-budgeted
//! chunk packing and chunk titles.
//!
//! Every step is lossless. A document's normalized body can be rebuilt from
//! its chunks as `leading + Σ (text + separator)`.

mod io;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

use crate::llm::{GenerationClient, GenerationRequest, LlmError, RequestTag};
use crate::prompts;
use crate::tokenize::{count_tokens, TokenizerMode};

pub use io::{load_corpus, read_chunks, write_chunks, DocumentDefaults};

/// Budget used by the 2048-token chunking preset.
pub const BUDGET_2048: usize = 2048;
/// Budget used by the 3072-token chunking preset.
pub const BUDGET_3072: usize = 3072;
pub const MAX_TITLE_CHARS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    #[default]
    Textbook,
    WebFragmented,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub language: String,
    pub body: String,
    #[serde(default)]
    pub source_kind: SourceKind,
}

impl Document {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.id.trim().is_empty() {
            return Err(CorpusError::InvalidDocument { id: self.id.clone(), reason: "empty id".into() });
        }
        if self.body.is_empty() {
            return Err(CorpusError::InvalidDocument { id: self.id.clone(), reason: "empty body".into() });
        }
        if self.language.trim().is_empty() {
            return Err(CorpusError::InvalidDocument { id: self.id.clone(), reason: "empty language tag".into() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paragraph {
    pub doc_id: String,
    pub index: usize,
    pub text: String,
    pub token_count: usize,
    /// Bytes between this paragraph and the next (or the end of the body).
    pub separator: String,
    /// Bytes before the first paragraph; empty for all others.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub leading: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub doc_id: String,
    pub index: usize,
    pub text: String,
    pub token_count: usize,
    pub title: Option<String>,
    #[serde(default)]
    pub separator: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub leading: String,
}

pub fn chunk_id(doc_id: &str, index: usize) -> String {
    format!("{doc_id}-{index:04}")
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("paragraph {index} of document `{doc_id}` exceeds the chunk budget")]
    OversizedParagraph { doc_id: String, index: usize },
    #[error("title generation failed for chunk `{chunk_id}`: {reason}")]
    GenerationFailed { chunk_id: String, reason: String },
    #[error("invalid document `{id}`: {reason}")]
    InvalidDocument { id: String, reason: String },
    #[error("duplicate document id `{0}`")]
    DuplicateDocument(String),
    #[error("no documents found")]
    EmptyCorpus,
    #[error("invalid chunk budget {0}")]
    InvalidBudget(usize),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SegmentationConfig {
    pub mode: TokenizerMode,
}

/// What to do with a paragraph larger than the budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OversizePolicy {
    /// Sentence-level re-split, then hard split at the budget.
    #[default]
    Split,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkingConfig {
    pub budget: usize,
    pub mode: TokenizerMode,
    pub oversize: OversizePolicy,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self {
            budget: BUDGET_2048,
            mode: TokenizerMode::UnicodeWords,
            oversize: OversizePolicy::Split,
        }
    }
}

fn is_blank(line: &str) -> bool {
    line.trim().is_empty()
}

/// Canonical form: BOM stripped, CRLF → LF, runs of more than two blank
/// lines collapsed to two.
pub fn normalize_body(body: &str) -> String {
    let body = body.strip_prefix('\u{feff}').unwrap_or(body).replace("\r\n", "\n");
    let mut out = String::with_capacity(body.len());
    let mut blank_run = 0;
    for line in body.split_inclusive('\n') {
        if is_blank(line) && line.ends_with('\n') {
            blank_run += 1;
            if blank_run > 2 {
                continue;
            }
        } else {
            blank_run = 0;
        }
        out.push_str(line);
    }
    out
}

/// Splits a normalized body at blank lines; single newlines are soft wraps.
pub fn segment_paragraphs(doc: &Document, rules: &SegmentationConfig) -> Vec<Paragraph> {
    let body = normalize_body(&doc.body);
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut run: Option<(usize, usize)> = None;
    let mut offset = 0;
    for line in body.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        if is_blank(line) {
            if let Some(r) = run.take() {
                spans.push(r);
            }
        } else {
            let content_end = start + line.trim_end_matches('\n').len();
            run = Some(match run {
                Some((s, _)) => (s, content_end),
                None => (start, content_end),
            });
        }
    }
    if let Some(r) = run {
        spans.push(r);
    }
    if spans.is_empty() {
        return vec![Paragraph {
            doc_id: doc.id.clone(),
            index: 0,
            token_count: count_tokens(&body, rules.mode),
            text: body,
            separator: String::new(),
            leading: String::new(),
        }];
    }
    // tighten spans to their trimmed content
    let spans: Vec<(usize, usize)> = spans
        .into_iter()
        .map(|(s, e)| {
            let raw = &body[s..e];
            let lead = raw.len() - raw.trim_start().len();
            let trail = raw.len() - raw.trim_end().len();
            (s + lead, e - trail)
        })
        .collect();
    spans
        .iter()
        .enumerate()
        .map(|(i, &(s, e))| {
            let next = spans.get(i + 1).map_or(body.len(), |n| n.0);
            let text = body[s..e].to_string();
            Paragraph {
                doc_id: doc.id.clone(),
                index: i,
                token_count: count_tokens(&text, rules.mode),
                text,
                separator: body[e..next].to_string(),
                leading: if i == 0 { body[..s].to_string() } else { String::new() },
            }
        })
        .collect()
}

const ASCII_TERMINATORS: &[char] = &['.', '!', '?'];
const WIDE_TERMINATORS: &[char] = &['。', '！', '？'];

/// Byte spans of sentences; whitespace after a terminator is left between spans.
fn sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let end = i + c.len_utf8();
        let cut = if WIDE_TERMINATORS.contains(&c) {
            true
        } else if ASCII_TERMINATORS.contains(&c) {
            chars.peek().map_or(false, |&(_, n)| n.is_whitespace())
        } else {
            false
        };
        if cut {
            spans.push((start, end));
            // skip whitespace to the next sentence start
            start = end;
            while let Some(&(j, n)) = chars.peek() {
                if n.is_whitespace() {
                    chars.next();
                    start = j + n.len_utf8();
                } else {
                    break;
                }
            }
        }
    }
    if start < text.len() {
        spans.push((start, text.len()));
    }
    spans
}

/// Largest prefix end (byte offset) of `text` holding at most `budget` tokens.
fn hard_cut(text: &str, budget: usize, mode: TokenizerMode) -> usize {
    match mode {
        TokenizerMode::BytesDiv4 => {
            let mut cut = (budget * 4).min(text.len());
            while !text.is_char_boundary(cut) {
                cut -= 1;
            }
            cut
        }
        TokenizerMode::UnicodeWords => text
            .unicode_word_indices()
            .nth(budget)
            .map_or(text.len(), |(i, _)| i),
    }
}

/// Re-splits an oversized paragraph at sentence terminators, then hard-splits
/// any sentence still over budget. Pieces keep exact separators; indices are
/// left for the caller to renumber.
pub fn split_oversized(p: &Paragraph, budget: usize, mode: TokenizerMode) -> Vec<Paragraph> {
    let text = p.text.as_str();
    // (start, end) pieces, each within budget
    let mut pieces: Vec<(usize, usize)> = Vec::new();
    for (s, e) in sentence_spans(text) {
        let mut s = s;
        while count_tokens(&text[s..e], mode) > budget {
            let mut cut = s + hard_cut(&text[s..e], budget, mode);
            if cut == s {
                cut = s + text[s..e].chars().next().map_or(0, char::len_utf8);
            }
            let piece_end = s + text[s..cut].trim_end().len();
            pieces.push((s, if piece_end > s { piece_end } else { cut }));
            s = cut + (text[cut..e].len() - text[cut..e].trim_start().len());
            if s >= e {
                break;
            }
        }
        if s < e {
            pieces.push((s, e));
        }
    }
    // greedily merge consecutive pieces back up to the budget
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for (s, e) in pieces {
        if let Some(last) = merged.last_mut() {
            if count_tokens(&text[last.0..e], mode) <= budget {
                last.1 = e;
                continue;
            }
        }
        merged.push((s, e));
    }
    let n = merged.len();
    merged
        .iter()
        .enumerate()
        .map(|(i, &(s, e))| {
            let piece = text[s..e].to_string();
            Paragraph {
                doc_id: p.doc_id.clone(),
                index: p.index,
                token_count: count_tokens(&piece, mode),
                text: piece,
                separator: if i + 1 == n { p.separator.clone() } else { text[e..merged[i + 1].0].to_string() },
                leading: if i == 0 { p.leading.clone() } else { String::new() },
            }
        })
        .collect()
}

/// Greedy in-order packing: paragraphs accumulate while the joined chunk text
/// stays within `budget`, then the chunk is cut.
pub fn pack_chunks(paragraphs: &[Paragraph], budget: usize, mode: TokenizerMode) -> Result<Vec<Chunk>, CorpusError> {
    if budget == 0 {
        return Err(CorpusError::InvalidBudget(budget));
    }
    if let Some(p) = paragraphs.iter().find(|p| count_tokens(&p.text, mode) > budget) {
        return Err(CorpusError::OversizedParagraph { doc_id: p.doc_id.clone(), index: p.index });
    }
    let mut chunks: Vec<Chunk> = Vec::new();
    let mut current: Option<(String, String, String, String)> = None; // doc, text, separator, leading
    let flush = |cur: (String, String, String, String), chunks: &mut Vec<Chunk>| {
        let (doc_id, text, separator, leading) = cur;
        let index = chunks.len();
        chunks.push(Chunk {
            id: chunk_id(&doc_id, index),
            token_count: count_tokens(&text, mode),
            doc_id,
            index,
            text,
            title: None,
            separator,
            leading,
        });
    };
    for p in paragraphs {
        current = match current.take() {
            Some((doc, text, sep, leading)) => {
                let candidate = format!("{text}{sep}{}", p.text);
                if count_tokens(&candidate, mode) <= budget {
                    Some((doc, candidate, p.separator.clone(), leading))
                } else {
                    flush((doc, text, sep, leading), &mut chunks);
                    Some((p.doc_id.clone(), p.text.clone(), p.separator.clone(), p.leading.clone()))
                }
            }
            None => Some((p.doc_id.clone(), p.text.clone(), p.separator.clone(), p.leading.clone())),
        };
    }
    if let Some(cur) = current {
        flush(cur, &mut chunks);
    }
    Ok(chunks)
}

/// Segments, resolves oversized paragraphs per policy, and packs one document.
pub fn chunk_document(doc: &Document, config: &ChunkingConfig) -> Result<Vec<Chunk>, CorpusError> {
    doc.validate()?;
    if config.budget == 0 {
        return Err(CorpusError::InvalidBudget(0));
    }
    let paragraphs = segment_paragraphs(doc, &SegmentationConfig { mode: config.mode });
    let mut resolved = Vec::with_capacity(paragraphs.len());
    for p in paragraphs {
        if p.token_count > config.budget {
            match config.oversize {
                OversizePolicy::Reject => {
                    return Err(CorpusError::OversizedParagraph { doc_id: p.doc_id, index: p.index })
                }
                OversizePolicy::Split => resolved.extend(split_oversized(&p, config.budget, config.mode)),
            }
        } else {
            resolved.push(p);
        }
    }
    for (i, p) in resolved.iter_mut().enumerate() {
        p.index = i;
    }
    pack_chunks(&resolved, config.budget, config.mode)
}

/// Rebuilds a body from its chunks (or paragraphs) in order.
pub fn reconstruct<'a>(parts: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>) -> String {
    let mut out = String::new();
    for (leading, text, sep) in parts {
        out.push_str(leading);
        out.push_str(text);
        out.push_str(sep);
    }
    out
}

pub fn reconstruct_chunks(chunks: &[Chunk]) -> String {
    reconstruct(chunks.iter().map(|c| (c.leading.as_str(), c.text.as_str(), c.separator.as_str())))
}

/// First non-empty line, trimmed and capped at [`MAX_TITLE_CHARS`].
pub fn normalize_title(response: &str) -> Option<String> {
    let line = response.lines().map(str::trim).find(|l| !l.is_empty())?;
    Some(line.chars().take(MAX_TITLE_CHARS).collect::<String>().trim_end().to_string())
}

#[derive(Debug)]
pub struct TitleOutcome {
    /// All input chunks in input order; failed ones stay untitled.
    pub chunks: Vec<Chunk>,
    pub failures: Vec<CorpusError>,
}

/// Requests one title per chunk with the client's bounded parallelism.
pub fn request_titles(chunks: Vec<Chunk>, client: &GenerationClient) -> TitleOutcome {
    let requests: Vec<GenerationRequest> = chunks
        .iter()
        .map(|c| GenerationRequest::new(RequestTag::Title, prompts::title_prompt(&c.text)))
        .collect();
    let responses = client.generate_batch(&requests);
    let mut failures = Vec::new();
    let chunks = chunks
        .into_iter()
        .zip(responses)
        .map(|(mut chunk, resp)| {
            let title = resp
                .map_err(|e: LlmError| e.to_string())
                .and_then(|r| normalize_title(&r.text).ok_or_else(|| "empty response".to_string()));
            match title {
                Ok(t) => chunk.title = Some(t),
                Err(reason) => {
                    log::warn!("chunk {} left untitled and excluded from structuring: {reason}", chunk.id);
                    failures.push(CorpusError::GenerationFailed { chunk_id: chunk.id.clone(), reason });
                }
            }
            chunk
        })
        .collect();
    TitleOutcome { chunks, failures }
}
