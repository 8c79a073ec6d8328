//! Knowledge taxonomy: a rooted tree whose leaves are knowledge points
//! (titled chunks), grouped under sections, chapters and a domain root.
//!
//! Structures come from two builders: prompting a model with the ordered
//! chunk titles ([`extract_structure`]) or recursive clustering of chunk
//! embeddings ([`build_structure_by_clustering`]). Both go through
//! [`KnowledgeStructure::from_outline`], which enforces the fixed
//! domain → chapter → section → point depth.

mod cluster;
mod extract;
mod outline;
mod sample;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::LlmError;

pub use cluster::{build_structure_by_clustering, kmeans, kmeans_restarts, ClusterConfig, ClusterLabeler, KMeans};
pub use extract::{extract_structure, ExtractOptions};
pub use outline::{normalize_label, parse_outline, parse_structure_response, OutlineFragment};
pub use sample::{lowest_common_ancestor, sample_path_bundle, validate_bundle, BundleDraw, KnowledgePath, PathBundle};

pub type NodeId = usize;

/// Joins folded outline levels into one leaf label.
pub const FOLD_SEPARATOR: &str = " — ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Domain,
    Chapter,
    Section,
    Point,
}

impl Level {
    pub fn next(self) -> Level {
        match self {
            Level::Domain => Level::Chapter,
            Level::Chapter => Level::Section,
            Level::Section | Level::Point => Level::Point,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureNode {
    pub id: NodeId,
    pub label: String,
    pub level: Level,
    pub children: Vec<NodeId>,
    pub chunk_ref: Option<String>,
}

impl StructureNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// An outline tree before level assignment; used by parsers and builders.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OutlineNode {
    pub label: String,
    pub chunk_ref: Option<String>,
    pub children: Vec<OutlineNode>,
}

impl OutlineNode {
    pub fn leaf(label: impl Into<String>, chunk_ref: Option<String>) -> Self {
        Self {
            label: label.into(),
            chunk_ref,
            children: Vec::new(),
        }
    }

    pub fn branch(label: impl Into<String>, children: Vec<OutlineNode>) -> Self {
        Self {
            label: label.into(),
            chunk_ref: None,
            children,
        }
    }

    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(OutlineNode::depth).max().unwrap_or(0)
    }

    pub fn leaves(&self) -> Vec<&OutlineNode> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a OutlineNode>) {
        if self.children.is_empty() {
            out.push(self);
        }
        for c in &self.children {
            c.collect_leaves(out);
        }
    }

    pub fn leaves_mut(&mut self) -> Vec<&mut OutlineNode> {
        if self.children.is_empty() {
            return vec![self];
        }
        self.children.iter_mut().flat_map(OutlineNode::leaves_mut).collect()
    }
}

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("invalid structure: {0}")]
    InvalidStructure(String),
    #[error("unknown chunk `{0}`")]
    UnknownChunk(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is not a leaf")]
    NotALeaf(NodeId),
    #[error("structure response line {line}: {message}")]
    StructureParseError { line: usize, message: String },
    #[error("title missing from structure: `{0}`")]
    MissingTitle(String),
    #[error("title appears more than once in structure: `{0}`")]
    DuplicateTitle(String),
    #[error("structure contains a leaf that is not an input title: `{0}`")]
    UnexpectedTitle(String),
    #[error("chunk `{0}` has no title")]
    UntitledChunk(String),
    #[error("structure building needs at least one chunk")]
    NoChunks,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

/// Node counts by level; `books` counts depth-1 domain nodes of a merged
/// multi-book structure, and is 1 otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StructureStats {
    pub books: usize,
    pub chapters: usize,
    pub sections: usize,
    pub points: usize,
}

impl std::ops::Add for StructureStats {
    type Output = StructureStats;

    fn add(self, o: StructureStats) -> StructureStats {
        StructureStats {
            books: self.books + o.books,
            chapters: self.chapters + o.chapters,
            sections: self.sections + o.sections,
            points: self.points + o.points,
        }
    }
}

/// On-disk JSON form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructureFile {
    pub structure_id: String,
    pub root: NodeId,
    pub nodes: Vec<StructureNode>,
}

/// Immutable, validated taxonomy tree. Node ids are indices in pre-order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "StructureFile", into = "StructureFile")]
pub struct KnowledgeStructure {
    structure_id: String,
    root: NodeId,
    nodes: Vec<StructureNode>,
    parents: Vec<Option<NodeId>>,
    chunk_index: BTreeMap<String, NodeId>,
}

impl TryFrom<StructureFile> for KnowledgeStructure {
    type Error = TaxonomyError;

    fn try_from(f: StructureFile) -> Result<Self, TaxonomyError> {
        KnowledgeStructure::from_nodes(f.structure_id, f.root, f.nodes)
    }
}

impl From<KnowledgeStructure> for StructureFile {
    fn from(s: KnowledgeStructure) -> Self {
        StructureFile {
            structure_id: s.structure_id,
            root: s.root,
            nodes: s.nodes,
        }
    }
}

struct TreeBuilder {
    nodes: Vec<StructureNode>,
}

impl TreeBuilder {
    fn add(&mut self, parent: Option<NodeId>, label: &str, level: Level, chunk_ref: Option<String>) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(StructureNode {
            id,
            label: label.to_string(),
            level,
            children: Vec::new(),
            chunk_ref,
        });
        if let Some(p) = parent {
            self.nodes[p].children.push(id);
        }
        id
    }

    /// Places `node` at `level`, padding short branches and folding deep ones.
    fn place(&mut self, parent: Option<NodeId>, node: &OutlineNode, level: Level) -> NodeId {
        if node.children.is_empty() {
            if level == Level::Point {
                return self.add(parent, &node.label, Level::Point, node.chunk_ref.clone());
            }
            let pad = self.add(parent, &node.label, level, None);
            self.place(Some(pad), node, level.next());
            return pad;
        }
        if level < Level::Point {
            let id = self.add(parent, &node.label, level, None);
            for c in &node.children {
                self.place(Some(id), c, level.next());
            }
            return id;
        }
        let mut first = None;
        let mut trail = Vec::new();
        self.fold(parent, node, &mut trail, &mut first);
        first.expect("internal outline node has at least one leaf")
    }

    fn fold<'a>(&mut self, parent: Option<NodeId>, node: &'a OutlineNode, trail: &mut Vec<&'a str>, first: &mut Option<NodeId>) {
        trail.push(&node.label);
        if node.children.is_empty() {
            let id = self.add(parent, &trail.join(FOLD_SEPARATOR), Level::Point, node.chunk_ref.clone());
            first.get_or_insert(id);
        } else {
            for c in &node.children {
                self.fold(parent, c, trail, first);
            }
        }
        trail.pop();
    }
}

impl KnowledgeStructure {
    /// Validates raw nodes and builds the derived indices.
    pub fn from_nodes(structure_id: String, root: NodeId, nodes: Vec<StructureNode>) -> Result<Self, TaxonomyError> {
        let bad = |m: String| Err(TaxonomyError::InvalidStructure(m));
        if nodes.is_empty() {
            return bad("no nodes".into());
        }
        if root >= nodes.len() {
            return bad(format!("root {root} out of range"));
        }
        let mut parents: Vec<Option<NodeId>> = vec![None; nodes.len()];
        for (i, n) in nodes.iter().enumerate() {
            if n.id != i {
                return bad(format!("node at position {i} has id {}", n.id));
            }
            if n.label.trim().is_empty() {
                return bad(format!("node {i} has an empty label"));
            }
            match (n.level, n.children.is_empty(), &n.chunk_ref) {
                (Level::Point, true, Some(r)) if !r.is_empty() => {}
                (Level::Point, _, _) => return bad(format!("point node {i} must be a leaf with a chunk_ref")),
                (_, false, None) => {}
                _ => return bad(format!("internal node {i} must have children and no chunk_ref")),
            }
            for &c in &n.children {
                if c >= nodes.len() {
                    return bad(format!("node {i} references missing child {c}"));
                }
                if c == root || parents[c].is_some() {
                    return bad(format!("node {c} has more than one parent"));
                }
                parents[c] = Some(i);
                let (pl, cl) = (n.level, nodes[c].level);
                let ok = cl > pl || (pl == Level::Domain && cl == Level::Domain && i == root);
                if !ok {
                    return bad(format!("level of node {c} ({cl:?}) does not descend from node {i} ({pl:?})"));
                }
            }
        }
        // reachability from root also rules out cycles, given unique parents
        let mut seen = vec![false; nodes.len()];
        let mut stack = vec![root];
        while let Some(n) = stack.pop() {
            if std::mem::replace(&mut seen[n], true) {
                return bad(format!("cycle through node {n}"));
            }
            stack.extend(&nodes[n].children);
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return bad(format!("node {i} is not reachable from the root"));
        }
        let mut chunk_index = BTreeMap::new();
        for n in &nodes {
            if let Some(r) = &n.chunk_ref {
                if chunk_index.insert(r.clone(), n.id).is_some() {
                    return bad(format!("chunk `{r}` referenced by more than one leaf"));
                }
            }
        }
        Ok(Self {
            structure_id,
            root,
            nodes,
            parents,
            chunk_index,
        })
    }

    /// Builds a structure from an outline forest whose top entries sit at
    /// `top` (chapter or domain level). Leaves shallower than point level are
    /// padded with copies of their own label; outline levels deeper than
    /// point level are folded into the leaf label with [`FOLD_SEPARATOR`].
    /// With chapter-level tops, or several domain-level tops, a domain root
    /// labeled `root_label` is synthesized.
    pub fn from_outline(structure_id: &str, root_label: &str, forest: &[OutlineNode], top: Level) -> Result<Self, TaxonomyError> {
        if forest.is_empty() {
            return Err(TaxonomyError::InvalidStructure("empty outline".into()));
        }
        let mut b = TreeBuilder { nodes: Vec::new() };
        match top {
            Level::Domain if forest.len() == 1 => {
                b.place(None, &forest[0], Level::Domain);
            }
            Level::Domain | Level::Chapter => {
                let root = b.add(None, root_label, Level::Domain, None);
                for node in forest {
                    b.place(Some(root), node, top);
                }
            }
            _ => return Err(TaxonomyError::InvalidParameter(format!("outline tops cannot sit at {top:?} level"))),
        }
        Self::from_nodes(structure_id.to_string(), 0, b.nodes)
    }

    /// Single-leaf structure: domain → chapter → section → point, all with one label.
    pub fn trivial(structure_id: &str, label: &str, chunk_id: &str) -> Self {
        Self::from_outline(structure_id, label, &[OutlineNode::leaf(label, Some(chunk_id.to_string()))], Level::Chapter)
            .expect("trivial outline is valid")
    }

    pub fn structure_id(&self) -> &str {
        &self.structure_id
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn nodes(&self) -> &[StructureNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&StructureNode, TaxonomyError> {
        self.nodes.get(id).ok_or(TaxonomyError::UnknownNode(id))
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.parents.get(id).copied().flatten()
    }

    pub fn chunk_index(&self) -> &BTreeMap<String, NodeId> {
        &self.chunk_index
    }

    pub fn domain_label(&self) -> &str {
        &self.nodes[self.root].label
    }

    /// Leaf ids in pre-order (document order).
    pub fn leaves(&self) -> Vec<NodeId> {
        self.preorder().into_iter().filter(|&n| self.nodes[n].is_leaf()).collect()
    }

    pub fn leaf_count(&self) -> usize {
        self.chunk_index.len()
    }

    pub fn preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(self.nodes[n].children.iter().rev());
        }
        out
    }

    pub fn depth(&self, id: NodeId) -> usize {
        let mut d = 0;
        let mut cur = id;
        while let Some(p) = self.parent(cur) {
            d += 1;
            cur = p;
        }
        d
    }

    /// Root-to-node id sequence.
    pub fn path_to(&self, id: NodeId) -> Result<Vec<NodeId>, TaxonomyError> {
        self.node(id)?;
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.parent(cur) {
            path.push(p);
            cur = p;
        }
        path.reverse();
        Ok(path)
    }

    pub fn path_for_chunk(&self, chunk_id: &str) -> Result<KnowledgePath, TaxonomyError> {
        let leaf = *self
            .chunk_index
            .get(chunk_id)
            .ok_or_else(|| TaxonomyError::UnknownChunk(chunk_id.to_string()))?;
        Ok(KnowledgePath(self.path_to(leaf)?))
    }

    pub fn labels(&self, path: &[NodeId]) -> Vec<&str> {
        path.iter().map(|&n| self.nodes[n].label.as_str()).collect()
    }

    /// True when `ancestor` lies on the root path of `node` (inclusive).
    pub fn is_ancestor(&self, ancestor: NodeId, node: NodeId) -> bool {
        let mut cur = Some(node);
        while let Some(c) = cur {
            if c == ancestor {
                return true;
            }
            cur = self.parent(c);
        }
        false
    }

    pub fn leaves_under(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.is_leaf() {
                out.push(n);
            }
            stack.extend(node.children.iter().rev());
        }
        out
    }

    pub fn stats(&self) -> StructureStats {
        let count = |l: Level| self.nodes.iter().filter(|n| n.level == l).count();
        let merged_books = self.nodes[self.root]
            .children
            .iter()
            .filter(|&&c| self.nodes[c].level == Level::Domain)
            .count();
        StructureStats {
            books: if merged_books > 0 { merged_books } else { 1 },
            chapters: count(Level::Chapter),
            sections: count(Level::Section),
            points: count(Level::Point),
        }
    }

    /// Canonical numbered outline: 2-space indent per level, `N.` at the top,
    /// `N.M` below, leaves suffixed with ` <- chunk:<id>`.
    pub fn render_outline(&self) -> String {
        let mut out = String::new();
        self.render_outline_node(self.root, &mut Vec::new(), 1, &mut out);
        out
    }

    fn render_outline_node(&self, id: NodeId, number: &mut Vec<usize>, ordinal: usize, out: &mut String) {
        number.push(ordinal);
        let node = &self.nodes[id];
        let indent = "  ".repeat(number.len() - 1);
        let num: Vec<String> = number.iter().map(usize::to_string).collect();
        let num = if number.len() == 1 { format!("{}.", num[0]) } else { num.join(".") };
        let _ = write!(out, "{indent}{num} {}", node.label);
        if let Some(r) = &node.chunk_ref {
            let _ = write!(out, " <- chunk:{r}");
        }
        out.push('\n');
        for (i, &c) in node.children.iter().enumerate() {
            self.render_outline_node(c, number, i + 1, out);
        }
        number.pop();
    }

    /// Converts back to an outline forest rooted at this structure's root.
    pub fn to_outline(&self) -> OutlineNode {
        fn build(s: &KnowledgeStructure, id: NodeId) -> OutlineNode {
            let n = &s.nodes[id];
            OutlineNode {
                label: n.label.clone(),
                chunk_ref: n.chunk_ref.clone(),
                children: n.children.iter().map(|&c| build(s, c)).collect(),
            }
        }
        build(self, self.root)
    }

    /// Chunk ids referenced by leaves, in document order.
    pub fn chunk_ids(&self) -> Vec<&str> {
        self.leaves()
            .into_iter()
            .filter_map(|l| self.nodes[l].chunk_ref.as_deref())
            .collect()
    }

    /// Merges several structures under a new domain root; each becomes a book.
    pub fn merge(structure_id: &str, root_label: &str, parts: &[KnowledgeStructure]) -> Result<Self, TaxonomyError> {
        let forest: Vec<OutlineNode> = parts.iter().map(KnowledgeStructure::to_outline).collect();
        let mut b = TreeBuilder { nodes: Vec::new() };
        let root = b.add(None, root_label, Level::Domain, None);
        for (part, outline) in parts.iter().zip(&forest) {
            copy_levels(&mut b, root, part, part.root, outline);
        }
        Self::from_nodes(structure_id.to_string(), root, b.nodes)
    }
}

fn copy_levels(b: &mut TreeBuilder, parent: NodeId, s: &KnowledgeStructure, id: NodeId, o: &OutlineNode) {
    let n = &s.nodes[id];
    let new = b.add(Some(parent), &o.label, n.level, o.chunk_ref.clone());
    for (&c, co) in n.children.iter().zip(&o.children) {
        copy_levels(b, new, s, c, co);
    }
}

/// Chunk ids that appear in more than one structure.
pub fn overlapping_chunks(structures: &[KnowledgeStructure]) -> BTreeSet<String> {
    let mut seen = BTreeSet::new();
    let mut dup = BTreeSet::new();
    for s in structures {
        for id in s.chunk_index.keys() {
            if !seen.insert(id.clone()) {
                dup.insert(id.clone());
            }
        }
    }
    dup
}
