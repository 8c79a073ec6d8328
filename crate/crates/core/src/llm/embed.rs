//! Text embedding for the clustering structure builder.

use std::collections::BTreeMap;

use super::LlmError;
use crate::tokenize::{normalize_tokens, LanguageMode};

/// Produces one unit-norm vector per input text, all of equal dimension.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError>;
}

/// TF-IDF over the batch vocabulary, L2-normalized.
///
/// Term weights are `tf * (ln((1 + n) / (1 + df)) + 1)`, so every term that
/// occurs gets a strictly positive weight. Dimensions follow the sorted
/// vocabulary, which keeps the output independent of input hashing.
#[derive(Debug, Clone, Copy, Default)]
pub struct TfIdfEmbedder {
    pub mode: LanguageMode,
}

impl TfIdfEmbedder {
    pub fn new(mode: LanguageMode) -> Self {
        Self { mode }
    }
}

impl Embedder for TfIdfEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        if texts.is_empty() {
            return Err(LlmError::EmbeddingFailed("no texts to embed".into()));
        }
        let docs: Vec<Vec<String>> = texts.iter().map(|t| normalize_tokens(t, self.mode)).collect();
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in &docs {
            let mut seen: Vec<&str> = doc.iter().map(String::as_str).collect();
            seen.sort_unstable();
            seen.dedup();
            for term in seen {
                *df.entry(term).or_default() += 1;
            }
        }
        let index: BTreeMap<&str, usize> = df.keys().enumerate().map(|(i, t)| (*t, i)).collect();
        let n = docs.len() as f64;
        let idf: Vec<f64> = df.values().map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0).collect();

        let mut out = Vec::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            if doc.is_empty() {
                return Err(LlmError::EmbeddingFailed(format!("text {i} has no indexable terms")));
            }
            let mut v = vec![0.0; index.len()];
            for term in doc {
                v[index[term.as_str()]] += 1.0;
            }
            for (x, w) in v.iter_mut().zip(&idf) {
                *x *= w;
            }
            normalize(&mut v);
            out.push(v);
        }
        Ok(out)
    }
}

pub fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
