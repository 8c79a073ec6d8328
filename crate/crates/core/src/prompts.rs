//! Prompt text for every generation request the pipeline issues.
//!
//! Knowledge-point bodies are fenced with `--- Knowledge point N: <path>` /
//! `--- end` lines and passages with `<<<` / `>>>` so that responses (and
//! the offline responder) can locate them.

use std::fmt::Write;

pub const PATH_SEPARATOR: &str = " > ";

pub fn title_prompt(text: &str) -> String {
    format!(
        "Summarize the passage below with one short, specific title that names the knowledge it teaches. \
Reply with the title only, on a single line.\n\nPassage:\n<<<\n{text}\n>>>\nTitle:"
    )
}

pub fn structure_prompt(titles: &[String]) -> String {
    let mut p = String::from(
        "The titles below belong to consecutive knowledge points of one document, listed in reading order. \
Identify the knowledge structure that organizes them.\n\n\
Output rules:\n\
- Write a numbered outline with 2 spaces of indentation per level, using \"N.\" for top-level entries, \"N.M\" for the second level and \"N.M.K\" for the third level.\n\
- Group related titles under concise chapter and section headings and keep the original order.\n\
- Every title must appear exactly once, verbatim, as a leaf of the outline. Do not add leaves that are not in the list.\n\
- Output the outline only.\n\nTitles:\n",
    );
    for t in titles {
        let _ = writeln!(p, "* {t}");
    }
    p
}

pub fn cluster_label_prompt(member_titles: &[String]) -> String {
    let mut p = String::from(
        "Write one short heading (at most eight words) that covers all of the following topics. \
Reply with the heading only.\n\nTopics:\n",
    );
    for t in member_titles {
        let _ = writeln!(p, "* {t}");
    }
    p
}

/// A knowledge point as shown to the model: its root-to-leaf label path and text.
#[derive(Debug, Clone)]
pub struct PromptPoint<'a> {
    pub path: Vec<&'a str>,
    pub text: &'a str,
}

fn write_points(p: &mut String, points: &[PromptPoint<'_>]) {
    for (i, pt) in points.iter().enumerate() {
        let _ = writeln!(p, "--- Knowledge point {}: {}", i + 1, pt.path.join(PATH_SEPARATOR));
        let _ = writeln!(p, "{}", pt.text.trim_end());
        let _ = writeln!(p, "--- end");
    }
}

pub const QA_FORMAT: &str = "QUESTION: <the question>\nANSWER: <the answer>\nEXPLANATION: <step-by-step reasoning that follows the knowledge structure>";
pub const QA_FORMAT_CHOICE: &str = "QUESTION: <the question>\nOPTIONS:\nA. <option>\nB. <option>\nC. <option>\nD. <option>\nANSWER: <the letter of the correct option>\nEXPLANATION: <step-by-step reasoning that follows the knowledge structure>";

pub fn synthesis_prompt(mindmap: &str, points: &[PromptPoint<'_>], style: &str, multi_choice: bool) -> String {
    let mut p = String::new();
    let task = if points.len() <= 1 {
        "Write one knowledge-intensive question that can be answered from the knowledge point below."
    } else if points.len() == 2 {
        "Write one two-hop question whose answer requires combining both knowledge points below along the knowledge structure."
    } else {
        "Write one multi-hop question whose answer requires reasoning across all of the knowledge points below along the knowledge structure."
    };
    let _ = writeln!(p, "{task} {style}\n");
    let _ = writeln!(p, "Knowledge structure:\n{mindmap}\n");
    write_points(&mut p, points);
    let _ = write!(
        p,
        "\nUse only the information above. Respond exactly in this format:\n{}\n",
        if multi_choice { QA_FORMAT_CHOICE } else { QA_FORMAT }
    );
    p
}

pub fn explanation_prompt(question: &str, answer: &str, points: &[PromptPoint<'_>]) -> String {
    let mut p = String::from(
        "Explain why the answer to the question is correct, reasoning step by step along the knowledge paths \
and using only the reference knowledge points.\n\n",
    );
    let _ = writeln!(p, "Question: {question}");
    let _ = writeln!(p, "Answer: {answer}\n");
    write_points(&mut p, points);
    p.push_str("\nRespond in this format:\nEXPLANATION: <explanation>\n");
    p
}

/// Knowledge points fenced in a prompt, as `(path labels, text)`.
pub fn extract_points(prompt: &str) -> Vec<(Vec<String>, String)> {
    let mut out = Vec::new();
    let mut current: Option<(Vec<String>, Vec<&str>)> = None;
    for line in prompt.lines() {
        if let Some(rest) = line.strip_prefix("--- Knowledge point ") {
            if let Some((_, path)) = rest.split_once(": ") {
                let labels = path.split(PATH_SEPARATOR).map(str::to_string).collect();
                current = Some((labels, Vec::new()));
                continue;
            }
        }
        if line == "--- end" {
            if let Some((path, body)) = current.take() {
                out.push((path, body.join("\n")));
            }
            continue;
        }
        if let Some((_, body)) = current.as_mut() {
            body.push(line);
        }
    }
    out
}

/// Passage fenced by `<<<` / `>>>` in a title prompt.
pub fn extract_passage(prompt: &str) -> Option<&str> {
    let start = prompt.find("<<<\n")? + 4;
    let end = prompt.rfind("\n>>>")?;
    (end >= start).then(|| &prompt[start..end])
}

/// Line value following `prefix` (e.g. `Question: `).
pub fn extract_field<'a>(prompt: &'a str, prefix: &str) -> Option<&'a str> {
    prompt.lines().find_map(|l| l.strip_prefix(prefix))
}
