use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Chunk, CorpusError, Document, SourceKind};
use crate::jsonl;

/// Field values for documents read from plain-text files.
#[derive(Debug, Clone)]
pub struct DocumentDefaults {
    pub language: String,
    pub source_kind: SourceKind,
}

impl Default for DocumentDefaults {
    fn default() -> Self {
        Self {
            language: "en".into(),
            source_kind: SourceKind::Textbook,
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Loads documents from directories of `.txt`/`.md` files, single text files
/// or `.jsonl` manifests, in sorted path order.
///
/// For text files the id is the path relative to the given directory without
/// extension (`/` replaced by `_`). A leading `# Heading` line becomes the
/// title and is removed from the body; otherwise the file stem is the title.
pub fn load_corpus(paths: &[PathBuf], defaults: &DocumentDefaults) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    for path in paths {
        let meta = fs::metadata(path).map_err(|e| io_err(path, e))?;
        if meta.is_dir() {
            let mut files = Vec::new();
            collect_text_files(path, &mut files)?;
            files.sort();
            for file in files {
                let rel = file.strip_prefix(path).unwrap_or(&file);
                docs.push(read_text_document(&file, rel, defaults)?);
            }
        } else if path.extension().is_some_and(|e| e == "jsonl") {
            let manifest: Vec<Document> = jsonl::read_jsonl(path).map_err(|e| io_err(path, e))?;
            docs.extend(manifest);
        } else {
            let name = PathBuf::from(path.file_name().unwrap_or_default());
            docs.push(read_text_document(path, &name, defaults)?);
        }
    }
    if docs.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut seen = BTreeSet::new();
    for d in &docs {
        d.validate()?;
        if !seen.insert(d.id.as_str()) {
            return Err(CorpusError::DuplicateDocument(d.id.clone()));
        }
    }
    Ok(docs)
}

fn collect_text_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CorpusError> {
    for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        if path.is_dir() {
            collect_text_files(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "txt" || e == "md") {
            out.push(path);
        }
    }
    Ok(())
}

fn read_text_document(path: &Path, rel: &Path, defaults: &DocumentDefaults) -> Result<Document, CorpusError> {
    let raw = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let id = rel
        .with_extension("")
        .to_string_lossy()
        .replace(['/', '\\'], "_");
    let stem = rel.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| id.clone());
    let content = raw.strip_prefix('\u{feff}').unwrap_or(&raw);
    let (title, body) = match content.split_once('\n') {
        Some((first, rest)) if first.trim_start().starts_with("# ") => {
            let title = first.trim_start()[2..].trim().to_string();
            (title, rest.trim_start_matches(['\n', '\r']).to_string())
        }
        None if content.trim_start().starts_with("# ") => (content.trim_start()[2..].trim().to_string(), String::new()),
        _ => (stem, content.to_string()),
    };
    Ok(Document {
        id,
        title,
        language: defaults.language.clone(),
        body,
        source_kind: defaults.source_kind,
    })
}

pub fn write_chunks(path: &Path, chunks: &[Chunk]) -> std::io::Result<usize> {
    jsonl::write_jsonl(path, chunks)
}

pub fn read_chunks(path: &Path) -> std::io::Result<Vec<Chunk>> {
    jsonl::read_jsonl(path)
}
