use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::choice::Gold;
use super::{answer_recall, mindmap_recall_tree, rouge_l, token_f1, MetricResult};
use crate::llm::map_bounded;
use crate::mindmap::parse_mindmap;
use crate::tokenize::LanguageMode;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseItem {
    pub id: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceItem {
    pub id: String,
    pub reference: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Gold>,
}

/// A response joined with its reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalItem {
    pub id: String,
    pub response: String,
    pub reference: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Gold>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("ids do not line up: missing responses {missing_responses:?}, missing references {missing_references:?}")]
    IdMismatch {
        missing_responses: Vec<String>,
        missing_references: Vec<String>,
    },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("metric {metric} needs {field} on item `{id}`")]
    MissingField { metric: &'static str, field: &'static str, id: String },
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Recall,
    F1,
    RougeL,
    ExactMatch,
    MindmapRecall,
}

impl Metric {
    pub const DEFAULT: [Metric; 3] = [Metric::Recall, Metric::F1, Metric::RougeL];
}

impl FromStr for Metric {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, EvalError> {
        Ok(match s {
            "recall" => Metric::Recall,
            "f1" => Metric::F1,
            "rouge_l" | "rouge-l" => Metric::RougeL,
            "exact_match" | "em" => Metric::ExactMatch,
            "mindmap_recall" | "mindmap" => Metric::MindmapRecall,
            other => return Err(EvalError::UnknownMetric(other.to_string())),
        })
    }
}

/// Joins responses to references by id, in reference order.
pub fn join_items(responses: Vec<ResponseItem>, references: Vec<ReferenceItem>) -> Result<Vec<EvalItem>, EvalError> {
    let mut by_id: BTreeMap<String, String> = BTreeMap::new();
    for r in responses {
        if by_id.insert(r.id.clone(), r.response).is_some() {
            return Err(EvalError::DuplicateId(r.id));
        }
    }
    let mut seen = BTreeSet::new();
    for r in &references {
        if !seen.insert(r.id.as_str()) {
            return Err(EvalError::DuplicateId(r.id.clone()));
        }
    }
    let missing_responses: Vec<String> = references.iter().filter(|r| !by_id.contains_key(&r.id)).map(|r| r.id.clone()).collect();
    let missing_references: Vec<String> = by_id.keys().filter(|id| !seen.contains(id.as_str())).cloned().collect();
    if !missing_responses.is_empty() || !missing_references.is_empty() {
        return Err(EvalError::IdMismatch {
            missing_responses,
            missing_references,
        });
    }
    Ok(references
        .into_iter()
        .map(|r| EvalItem {
            response: by_id.remove(&r.id).expect("checked"),
            id: r.id,
            reference: r.reference,
            options: r.options,
            gold: r.gold,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub language: LanguageMode,
    pub ids: Vec<String>,
    /// Per-item values are aligned with `ids`.
    pub metrics: Vec<MetricResult>,
}

impl EvalReport {
    pub fn metric(&self, name: &str) -> Option<&MetricResult> {
        self.metrics.iter().find(|m| m.name == name)
    }

    /// One row per item, one column per metric.
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["id".to_string()];
        header.extend(self.metrics.iter().map(|m| m.name.clone()));
        w.write_record(&header)?;
        for (i, id) in self.ids.iter().enumerate() {
            let mut row = vec![id.clone()];
            row.extend(self.metrics.iter().map(|m| m.per_item[i].to_string()));
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv of utf-8 input"))
    }
}

/// Scores every item under each metric. Exact match needs `options` and
/// `gold` on all items; mindmap recall parses the reference as a mindmap
/// and reports `mindmap_f1` and `mindmap_rouge_l`.
pub fn evaluate(items: &[EvalItem], metrics: &[Metric], mode: LanguageMode, workers: usize) -> Result<EvalReport, EvalError> {
    if metrics.contains(&Metric::ExactMatch) {
        for it in items {
            if it.options.is_none() {
                return Err(EvalError::MissingField { metric: "exact_match", field: "options", id: it.id.clone() });
            }
            if it.gold.is_none() {
                return Err(EvalError::MissingField { metric: "exact_match", field: "gold", id: it.id.clone() });
            }
        }
    }
    let mut unique: Vec<Metric> = metrics.to_vec();
    unique.dedup();
    let rows: Vec<Vec<(String, f64)>> = map_bounded(items, workers, |it| {
        let mut row = Vec::new();
        for m in &unique {
            match m {
                Metric::Recall => row.push(("recall".into(), answer_recall(&it.response, &it.reference, mode))),
                Metric::F1 => row.push(("f1".into(), token_f1(&it.response, &it.reference, mode))),
                Metric::RougeL => row.push(("rouge_l".into(), rouge_l(&it.response, &it.reference, mode))),
                Metric::ExactMatch => {
                    let gold = it.gold.as_ref().expect("checked");
                    row.push(("exact_match".into(), gold.score(&it.response, it.options.as_deref().expect("checked"), mode)));
                }
                Metric::MindmapRecall => {
                    let s = mindmap_recall_tree(&it.response, &parse_mindmap(&it.reference), mode);
                    row.push(("mindmap_f1".into(), s.f1));
                    row.push(("mindmap_rouge_l".into(), s.rouge_l));
                }
            }
        }
        row
    });
    let names: Vec<String> = rows.first().map(|r| r.iter().map(|(n, _)| n.clone()).collect()).unwrap_or_default();
    let metrics = names
        .iter()
        .enumerate()
        .map(|(k, name)| MetricResult::new(name.clone(), rows.iter().map(|r| r[k].1).collect()))
        .collect();
    Ok(EvalReport {
        language: mode,
        ids: items.iter().map(|i| i.id.clone()).collect(),
        metrics,
    })
}
