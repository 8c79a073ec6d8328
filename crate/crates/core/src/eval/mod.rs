//! Lexical evaluation metrics and the log-quadratic scaling-curve fit.
//!
//! Every metric works on [`normalize_tokens`] output, so punctuation and
//! case never matter and CJK text can be scored per character.

mod choice;
mod report;
mod scaling;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::mindmap::{parse_mindmap, subtree, MindmapTree};
use crate::taxonomy::{KnowledgeStructure, NodeId};
use crate::tokenize::{normalize_tokens, LanguageMode};

pub use choice::{choice_letter, exact_match_choice, extract_choice_set, Gold};
pub use report::{evaluate, join_items, EvalError, EvalItem, EvalReport, Metric, ReferenceItem, ResponseItem};
pub use scaling::{eval_scaling, fit_scaling_curve, ScalingCurve, ScalingError, ScalingPoint, STRUCTURE_AWARE, VANILLA};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub name: String,
    pub per_item: Vec<f64>,
    pub aggregate: f64,
}

impl MetricResult {
    /// Aggregate is the arithmetic mean; 0 for no items.
    pub fn new(name: impl Into<String>, per_item: Vec<f64>) -> Self {
        let aggregate = if per_item.is_empty() {
            0.0
        } else {
            per_item.iter().sum::<f64>() / per_item.len() as f64
        };
        Self {
            name: name.into(),
            per_item,
            aggregate,
        }
    }
}

/// Size of the multiset intersection.
pub fn bag_overlap<T: AsRef<str>>(a: &[T], b: &[T]) -> usize {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in b {
        *counts.entry(t.as_ref()).or_default() += 1;
    }
    let mut n = 0;
    for t in a {
        if let Some(c) = counts.get_mut(t.as_ref()) {
            if *c > 0 {
                *c -= 1;
                n += 1;
            }
        }
    }
    n
}

/// Harmonic mean of `overlap / pred_len` and `overlap / ref_len`, computed as
/// one division so the result is the correctly rounded rational.
fn f1(overlap: usize, pred_len: usize, ref_len: usize) -> f64 {
    (2 * overlap) as f64 / (pred_len + ref_len) as f64
}

pub fn token_f1_tokens<T: AsRef<str>>(pred: &[T], reference: &[T]) -> f64 {
    match (pred.is_empty(), reference.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => f1(bag_overlap(pred, reference), pred.len(), reference.len()),
    }
}

/// Bag-of-tokens F1. Two empty texts score 1, one empty text scores 0.
pub fn token_f1(pred: &str, reference: &str, mode: LanguageMode) -> f64 {
    token_f1_tokens(&normalize_tokens(pred, mode), &normalize_tokens(reference, mode))
}

pub fn answer_recall_tokens<T: AsRef<str>>(pred: &[T], reference: &[T]) -> f64 {
    if reference.is_empty() {
        return 1.0;
    }
    bag_overlap(pred, reference) as f64 / reference.len() as f64
}

/// Fraction of reference tokens (as a bag) found in the prediction; an
/// empty reference scores 1.
pub fn answer_recall(pred: &str, reference: &str, mode: LanguageMode) -> f64 {
    answer_recall_tokens(&normalize_tokens(pred, mode), &normalize_tokens(reference, mode))
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub fn rouge_l_tokens<T: AsRef<str>>(pred: &[T], reference: &[T]) -> f64 {
    match (pred.is_empty(), reference.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => {
            let p: Vec<&str> = pred.iter().map(AsRef::as_ref).collect();
            let r: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
            f1(lcs_len(&p, &r), p.len(), r.len())
        }
    }
}

/// ROUGE-L F-measure with β = 1 over normalized tokens.
pub fn rouge_l(pred: &str, reference: &str, mode: LanguageMode) -> f64 {
    rouge_l_tokens(&normalize_tokens(pred, mode), &normalize_tokens(reference, mode))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MindmapScore {
    pub f1: f64,
    pub rouge_l: f64,
}

fn label_tokens(tree: &MindmapTree, mode: LanguageMode) -> Vec<String> {
    tree.labels().iter().flat_map(|l| normalize_tokens(l, mode)).collect()
}

/// Scores the first mindmap found in `response` against `target`, comparing
/// flattened label token sequences. An unparsable response scores zero.
pub fn mindmap_recall_tree(response: &str, target: &MindmapTree, mode: LanguageMode) -> MindmapScore {
    let parsed = parse_mindmap(response);
    if parsed.is_empty() {
        return MindmapScore { f1: 0.0, rouge_l: 0.0 };
    }
    let pred = label_tokens(&parsed, mode);
    let reference = label_tokens(target, mode);
    MindmapScore {
        f1: token_f1_tokens(&pred, &reference),
        rouge_l: rouge_l_tokens(&pred, &reference),
    }
}

/// [`mindmap_recall_tree`] against the subtree of `structure` rooted at `target`.
pub fn mindmap_recall(response: &str, structure: &KnowledgeStructure, target: NodeId, mode: LanguageMode) -> MindmapScore {
    mindmap_recall_tree(response, &subtree(structure, target), mode)
}

/// Extension point for embedding-based similarity (e.g. BERTScore), which
/// needs an external model and is not bundled.
pub trait SemanticScorer {
    fn name(&self) -> &str;
    fn score(&self, pred: &str, reference: &str) -> f64;
}
