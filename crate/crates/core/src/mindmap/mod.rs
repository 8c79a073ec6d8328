//! Indented-outline mindmaps of knowledge structures, and the framing
//! templates that turn a mindmap into a conditioning prefix.

mod templates;

use std::collections::BTreeSet;
use std::fmt::Write;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{KnowledgeStructure, NodeId};

pub use templates::{apply_template, FramingTemplate, TemplatePool, MINDMAP_PLACEHOLDER};

/// Suffix marking the leaf a path-local mindmap was rendered for.
pub const TARGET_MARK: &str = " (*)";

#[derive(Debug, Error)]
pub enum MindmapError {
    #[error("node {0} is not a leaf of the structure")]
    UnknownLeaf(NodeId),
    #[error("path-local mindmaps need at least one target leaf")]
    MissingTarget,
    #[error("invalid template pool: {0}")]
    InvalidTemplate(String),
    #[error("reading template pool {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MindmapScope {
    Full,
    #[default]
    PathLocal,
}

impl std::str::FromStr for MindmapScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(Self::Full),
            "path_local" => Ok(Self::PathLocal),
            other => Err(format!("unknown mindmap scope `{other}` (expected full or path_local)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MindmapText {
    pub text: String,
    pub structure_id: String,
    pub scope: MindmapScope,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MindmapNode {
    pub label: String,
    pub marked: bool,
    pub children: Vec<MindmapNode>,
}

impl MindmapNode {
    pub fn new(label: impl Into<String>, children: Vec<MindmapNode>) -> Self {
        Self {
            label: label.into(),
            marked: false,
            children,
        }
    }

    fn count(&self) -> usize {
        1 + self.children.iter().map(MindmapNode::count).sum::<usize>()
    }
}

/// A forest of labeled nodes; usually a single root.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MindmapTree {
    pub roots: Vec<MindmapNode>,
}

impl MindmapTree {
    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.roots.iter().map(MindmapNode::count).sum()
    }

    /// Canonical text: one `- label` line per node, two spaces of indent per
    /// depth, lines joined with `\n` and no trailing newline.
    pub fn render(&self) -> String {
        fn go(n: &MindmapNode, depth: usize, out: &mut String) {
            if !out.is_empty() {
                out.push('\n');
            }
            let _ = write!(out, "{}- {}", "  ".repeat(depth), n.label);
            if n.marked {
                out.push_str(TARGET_MARK);
            }
            for c in &n.children {
                go(c, depth + 1, out);
            }
        }
        let mut out = String::new();
        for r in &self.roots {
            go(r, 0, &mut out);
        }
        out
    }

    /// Labels in pre-order.
    pub fn labels(&self) -> Vec<&str> {
        fn go<'a>(n: &'a MindmapNode, out: &mut Vec<&'a str>) {
            out.push(&n.label);
            n.children.iter().for_each(|c| go(c, out));
        }
        let mut out = Vec::new();
        self.roots.iter().for_each(|r| go(r, &mut out));
        out
    }

    /// (parent label, child label) pairs in pre-order.
    pub fn edges(&self) -> Vec<(&str, &str)> {
        fn go<'a>(n: &'a MindmapNode, out: &mut Vec<(&'a str, &'a str)>) {
            for c in &n.children {
                out.push((&n.label, &c.label));
                go(c, out);
            }
        }
        let mut out = Vec::new();
        self.roots.iter().for_each(|r| go(r, &mut out));
        out
    }
}

/// Full subtree below `node` (inclusive).
pub fn subtree(s: &KnowledgeStructure, node: NodeId) -> MindmapTree {
    fn build(s: &KnowledgeStructure, id: NodeId) -> MindmapNode {
        let n = &s.nodes()[id];
        MindmapNode::new(n.label.clone(), n.children.iter().map(|&c| build(s, c)).collect())
    }
    MindmapTree {
        roots: vec![build(s, node)],
    }
}

/// Builds the mindmap view. Full scope is the whole tree. Path-local scope
/// keeps the root paths of `targets`, plus the immediate children of every
/// node on those paths as unexpanded context. Targets are marked.
pub fn mindmap_tree(s: &KnowledgeStructure, scope: MindmapScope, targets: &[NodeId]) -> Result<MindmapTree, MindmapError> {
    for &t in targets {
        if s.node(t).map_or(true, |n| !n.is_leaf()) {
            return Err(MindmapError::UnknownLeaf(t));
        }
    }
    if scope == MindmapScope::PathLocal && targets.is_empty() {
        return Err(MindmapError::MissingTarget);
    }
    let marked: BTreeSet<NodeId> = targets.iter().copied().collect();
    let on_path: BTreeSet<NodeId> = targets
        .iter()
        .flat_map(|&t| s.path_to(t).expect("checked above"))
        .collect();
    fn build(s: &KnowledgeStructure, id: NodeId, expand: &dyn Fn(NodeId) -> bool, marked: &BTreeSet<NodeId>) -> MindmapNode {
        let n = &s.nodes()[id];
        let children = if expand(id) {
            n.children.iter().map(|&c| build(s, c, expand, marked)).collect()
        } else {
            Vec::new()
        };
        MindmapNode {
            label: n.label.clone(),
            marked: marked.contains(&id),
            children,
        }
    }
    let expand = |id: NodeId| scope == MindmapScope::Full || on_path.contains(&id);
    Ok(MindmapTree {
        roots: vec![build(s, s.root(), &expand, &marked)],
    })
}

pub fn render_mindmap(s: &KnowledgeStructure, scope: MindmapScope, target_leaf: Option<NodeId>) -> Result<MindmapText, MindmapError> {
    let targets: Vec<NodeId> = target_leaf.into_iter().collect();
    render_targets(s, scope, &targets)
}

/// Like [`render_mindmap`] with any number of marked target leaves.
pub fn render_targets(s: &KnowledgeStructure, scope: MindmapScope, targets: &[NodeId]) -> Result<MindmapText, MindmapError> {
    Ok(MindmapText {
        text: mindmap_tree(s, scope, targets)?.render(),
        structure_id: s.structure_id().to_string(),
        scope,
    })
}

fn bullet_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^([ \t]*)(?:[-*+•]|\d+[.)])\s+(\S.*?)\s*$").expect("static regex"))
}

/// Lenient parse of the first bullet block in `text`. Indentation decides
/// nesting (a tab counts as two spaces); a line indented between two levels
/// attaches to the nearest shallower line. Trailing ` (*)` marks are
/// recognized. Returns an empty tree when there is no bullet line.
pub fn parse_mindmap(text: &str) -> MindmapTree {
    let mut stack: Vec<(usize, MindmapNode)> = Vec::new();
    let mut roots = Vec::new();
    let mut started = false;
    fn close(stack: &mut Vec<(usize, MindmapNode)>, roots: &mut Vec<MindmapNode>, indent: Option<usize>) {
        while let Some((top, _)) = stack.last() {
            if indent.is_some_and(|i| *top < i) {
                break;
            }
            let (_, node) = stack.pop().expect("non-empty");
            match stack.last_mut() {
                Some((_, parent)) => parent.children.push(node),
                None => roots.push(node),
            }
        }
    }
    for line in text.lines() {
        let Some(caps) = bullet_pattern().captures(line) else {
            if started && !line.trim().is_empty() {
                break;
            }
            continue;
        };
        started = true;
        let indent: usize = caps[1].chars().map(|c| if c == '\t' { 2 } else { 1 }).sum();
        let (label, marked) = match caps[2].strip_suffix(TARGET_MARK) {
            Some(l) => (l.to_string(), true),
            None => (caps[2].to_string(), false),
        };
        close(&mut stack, &mut roots, Some(indent));
        stack.push((indent, MindmapNode { label, marked, children: Vec::new() }));
    }
    close(&mut stack, &mut roots, None);
    MindmapTree { roots }
}
