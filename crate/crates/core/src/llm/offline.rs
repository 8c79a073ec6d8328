//! Extractive stand-in for a generation model.
//!
//! Used behind [`MockBackend`](super::MockBackend) in `--offline` runs for
//! prompts without a recorded transcript. It answers title, QA-synthesis and
//! explanation prompts by copying text out of the prompt itself, so its
//! output is a pure function of the prompt. Structure prompts are never
//! answered: those must come from transcripts.

use super::{GenerationRequest, RequestTag};
use crate::prompts;

#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineResponder;

impl OfflineResponder {
    pub fn respond(&self, request: &GenerationRequest) -> Option<String> {
        match request.request_tag {
            RequestTag::Title => {
                let passage = prompts::extract_passage(&request.prompt)?;
                let title = heuristic_title(passage);
                (!title.is_empty()).then_some(title)
            }
            RequestTag::QaSynthesis => {
                let points = prompts::extract_points(&request.prompt);
                synthesize(&points)
            }
            RequestTag::Explanation => {
                let points = prompts::extract_points(&request.prompt);
                let (path, text) = points.first()?;
                Some(format!(
                    "EXPLANATION: The question falls under {}. {}",
                    path.join(prompts::PATH_SEPARATOR),
                    first_sentence(text)
                ))
            }
            RequestTag::Structure => None,
        }
    }
}

const SENTENCE_END: &[char] = &['.', '!', '?', '。', '！', '？'];

pub fn first_sentence(text: &str) -> String {
    let text = text.trim();
    let end = text
        .char_indices()
        .find(|&(i, c)| {
            SENTENCE_END.contains(&c)
                && text[i + c.len_utf8()..].chars().next().map_or(true, |n| n.is_whitespace() || !c.is_ascii())
        })
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(text.len());
    text[..end].split_whitespace().collect::<Vec<_>>().join(" ")
}

/// First sentence cut to eight words, trailing punctuation removed.
pub fn heuristic_title(text: &str) -> String {
    let sentence = first_sentence(text);
    let words: Vec<&str> = sentence.split_whitespace().collect();
    let mut title = if words.len() <= 1 {
        sentence.chars().take(24).collect::<String>()
    } else {
        words.iter().take(8).copied().collect::<Vec<_>>().join(" ")
    };
    while title.ends_with(|c: char| c.is_ascii_punctuation() || SENTENCE_END.contains(&c) || c == '，') {
        title.pop();
    }
    title
}

fn synthesize(points: &[(Vec<String>, String)]) -> Option<String> {
    let leaf = |p: &(Vec<String>, String)| p.0.last().cloned().unwrap_or_default();
    match points {
        [] => None,
        [single] => Some(format!(
            "QUESTION: What does the knowledge point \"{}\" state?\nANSWER: {}\nEXPLANATION: Following the path {}, the passage states: {}",
            leaf(single),
            first_sentence(&single.1),
            single.0.join(prompts::PATH_SEPARATOR),
            first_sentence(&single.1)
        )),
        many => {
            let leaves: Vec<String> = many.iter().map(|p| format!("\"{}\"", leaf(p))).collect();
            let facts: Vec<String> = many.iter().map(|p| first_sentence(&p.1)).collect();
            let paths: Vec<String> = many.iter().map(|p| p.0.join(prompts::PATH_SEPARATOR)).collect();
            Some(format!(
                "QUESTION: How do the knowledge points {} relate to each other?\nANSWER: {}\nEXPLANATION: The question combines the paths {}.",
                leaves.join(" and "),
                facts.join(" "),
                paths.join("; ")
            ))
        }
    }
}
