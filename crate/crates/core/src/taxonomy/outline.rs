//! Numbered-outline wire format shared by structure prompts and the
//! on-disk `.outline.txt` form.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;

use super::{Level, OutlineNode, TaxonomyError};

const CHUNK_MARKER: &str = " <- chunk:";

/// Parsed outline: top-level entries plus the deepest numbering depth seen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutlineFragment {
    pub roots: Vec<OutlineNode>,
    pub depth: usize,
}

impl OutlineFragment {
    /// Four or more numbering levels put the top entries at domain level;
    /// shallower outlines start at chapter level.
    pub fn top_level(&self) -> Level {
        if self.depth >= 4 {
            Level::Domain
        } else {
            Level::Chapter
        }
    }
}

fn line_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(\d+(?:\.\d+)*)\.?\s+(\S.*?)\s*$").expect("static regex"))
}

/// Case-insensitive, whitespace-collapsed form used for title matching.
pub fn normalize_label(label: &str) -> String {
    label.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Parses the outline without any coverage check. Prose before the first
/// and after the last numbered line (and code fences) is ignored; prose
/// between numbered lines is an error.
pub fn parse_outline(text: &str) -> Result<OutlineFragment, TaxonomyError> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with("```"))
        .collect();
    let matched: Vec<bool> = lines.iter().map(|(_, l)| line_pattern().is_match(l)).collect();
    let (Some(first), Some(last)) = (matched.iter().position(|&m| m), matched.iter().rposition(|&m| m)) else {
        return Err(TaxonomyError::StructureParseError {
            line: 1,
            message: "no numbered outline lines found".into(),
        });
    };

    // stack of (depth, node); closed nodes are attached to their parent
    let mut stack: Vec<(usize, OutlineNode)> = Vec::new();
    let mut roots = Vec::new();
    let mut max_depth = 0;
    let close = |stack: &mut Vec<(usize, OutlineNode)>, roots: &mut Vec<OutlineNode>, to: usize| {
        while stack.last().is_some_and(|(d, _)| *d >= to) {
            let (_, node) = stack.pop().expect("non-empty");
            match stack.last_mut() {
                Some((_, parent)) => parent.children.push(node),
                None => roots.push(node),
            }
        }
    };
    for (k, &(line_no, line)) in lines.iter().enumerate().take(last + 1).skip(first) {
        let err = |message: String| TaxonomyError::StructureParseError { line: line_no, message };
        let caps = line_pattern()
            .captures(line)
            .ok_or_else(|| err(format!("expected a numbered outline line, found `{}`", line.trim())))?;
        let depth = caps[1].split('.').count();
        let prev = stack.last().map_or(0, |(d, _)| *d);
        if depth > prev + 1 {
            return Err(err(format!("numbering jumps from depth {prev} to {depth}")));
        }
        if k == first && depth != 1 {
            return Err(err("outline must start at the top level".into()));
        }
        let rest = &caps[2];
        let (label, chunk_ref) = match rest.rsplit_once(CHUNK_MARKER) {
            Some((l, r)) if !r.trim().is_empty() => (l.trim(), Some(r.trim().to_string())),
            _ => (rest.trim(), None),
        };
        if label.is_empty() {
            return Err(err("empty label".into()));
        }
        close(&mut stack, &mut roots, depth);
        stack.push((depth, OutlineNode::leaf(label, chunk_ref)));
        max_depth = max_depth.max(depth);
    }
    close(&mut stack, &mut roots, 1);
    for r in &roots {
        check_refs(r)?;
    }
    Ok(OutlineFragment { roots, depth: max_depth })
}

fn check_refs(node: &OutlineNode) -> Result<(), TaxonomyError> {
    if !node.children.is_empty() && node.chunk_ref.is_some() {
        return Err(TaxonomyError::InvalidStructure(format!(
            "outline entry `{}` has children and a chunk reference",
            node.label
        )));
    }
    node.children.iter().try_for_each(check_refs)
}

/// Parses a structure response and checks that every expected title is a
/// leaf exactly once. Violations are reported in the order missing,
/// duplicate, unexpected.
pub fn parse_structure_response(text: &str, expected_titles: &[String]) -> Result<OutlineFragment, TaxonomyError> {
    let fragment = parse_outline(text)?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut first_seen: Vec<&str> = Vec::new();
    for root in &fragment.roots {
        for leaf in root.leaves() {
            let c = counts.entry(normalize_label(&leaf.label)).or_insert(0);
            if *c == 0 {
                first_seen.push(&leaf.label);
            }
            *c += 1;
        }
    }
    let expected: BTreeMap<String, &String> = expected_titles.iter().map(|t| (normalize_label(t), t)).collect();
    for t in expected_titles {
        if !counts.contains_key(&normalize_label(t)) {
            return Err(TaxonomyError::MissingTitle(t.clone()));
        }
    }
    for t in expected_titles {
        if counts[&normalize_label(t)] > 1 {
            return Err(TaxonomyError::DuplicateTitle(t.clone()));
        }
    }
    if let Some(extra) = first_seen.iter().find(|l| !expected.contains_key(&normalize_label(l))) {
        return Err(TaxonomyError::UnexpectedTitle(extra.to_string()));
    }
    Ok(fragment)
}
