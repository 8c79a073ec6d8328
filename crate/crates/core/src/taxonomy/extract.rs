use std::collections::BTreeMap;

use log::{info, warn};

use super::outline::{normalize_label, parse_structure_response};
use super::{KnowledgeStructure, OutlineNode, TaxonomyError};
use crate::corpus::Chunk;
use crate::llm::{GenerationClient, GenerationRequest, RequestTag};
use crate::prompts;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractOptions {
    /// Titles per structure prompt; longer lists are windowed.
    pub window: usize,
    /// Extra attempts after an unparsable or non-covering response.
    pub retries: usize,
    pub max_output_tokens: u32,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            window: 200,
            retries: 2,
            max_output_tokens: 4096,
        }
    }
}

/// Prompts the client with the ordered chunk titles and builds the tree.
/// Chunks sharing a title are shown to the model as `Title (2)`, `Title (3)`, ...
pub fn extract_structure(
    chunks: &[Chunk],
    domain_label: &str,
    structure_id: &str,
    client: &GenerationClient,
    opts: &ExtractOptions,
) -> Result<KnowledgeStructure, TaxonomyError> {
    if chunks.is_empty() {
        return Err(TaxonomyError::NoChunks);
    }
    if opts.window == 0 {
        return Err(TaxonomyError::InvalidParameter("window must be at least 1".into()));
    }
    let titles = display_titles(chunks)?;
    if chunks.len() == 1 {
        return Ok(KnowledgeStructure::trivial(structure_id, &titles[0], &chunks[0].id));
    }

    let mut parts = Vec::new();
    let windows: Vec<_> = titles.chunks(opts.window).zip(chunks.chunks(opts.window)).collect();
    for (w, (titles, chunks)) in windows.iter().enumerate() {
        let id = if windows.len() == 1 { structure_id.to_string() } else { format!("{structure_id}.w{w}") };
        parts.push(extract_window(titles, chunks, domain_label, &id, client, opts)?);
    }
    if parts.len() == 1 {
        return Ok(parts.pop().expect("one part"));
    }
    info!("structure {structure_id}: merging {} windows", parts.len());
    KnowledgeStructure::merge(structure_id, domain_label, &parts)
}

fn display_titles(chunks: &[Chunk]) -> Result<Vec<String>, TaxonomyError> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    chunks
        .iter()
        .map(|c| {
            let t = c
                .title
                .as_deref()
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .ok_or_else(|| TaxonomyError::UntitledChunk(c.id.clone()))?;
            let n = seen.entry(normalize_label(t)).or_insert(0);
            *n += 1;
            Ok(if *n == 1 { t.to_string() } else { format!("{t} ({n})") })
        })
        .collect()
}

fn extract_window(
    titles: &[String],
    chunks: &[Chunk],
    domain_label: &str,
    structure_id: &str,
    client: &GenerationClient,
    opts: &ExtractOptions,
) -> Result<KnowledgeStructure, TaxonomyError> {
    let mut request = GenerationRequest::new(RequestTag::Structure, prompts::structure_prompt(titles));
    request.max_output_tokens = opts.max_output_tokens;
    let by_title: BTreeMap<String, &str> = titles
        .iter()
        .zip(chunks)
        .map(|(t, c)| (normalize_label(t), c.id.as_str()))
        .collect();

    let mut last_err = None;
    for attempt in 0..=opts.retries {
        let response = client.generate(&request)?;
        match parse_structure_response(&response.text, titles) {
            Ok(mut fragment) => {
                for root in &mut fragment.roots {
                    attach_refs(root, &by_title);
                }
                return KnowledgeStructure::from_outline(structure_id, domain_label, &fragment.roots, fragment.top_level());
            }
            Err(e) => {
                warn!("structure {structure_id}: attempt {} rejected: {e}", attempt + 1);
                last_err = Some(e);
            }
        }
    }
    Err(last_err.expect("at least one attempt"))
}

fn attach_refs(node: &mut OutlineNode, by_title: &BTreeMap<String, &str>) {
    for leaf in node.leaves_mut() {
        leaf.chunk_ref = by_title.get(&normalize_label(&leaf.label)).map(|s| s.to_string());
    }
}
