use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{KnowledgeStructure, NodeId, TaxonomyError};

/// Node ids from the root to one leaf.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct KnowledgePath(pub Vec<NodeId>);

impl KnowledgePath {
    pub fn leaf(&self) -> NodeId {
        *self.0.last().expect("paths are non-empty")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathBundle {
    pub branch_point: NodeId,
    pub branches: Vec<KnowledgePath>,
}

impl PathBundle {
    pub fn leaves(&self) -> Vec<NodeId> {
        self.branches.iter().map(KnowledgePath::leaf).collect()
    }
}

/// A sampled bundle with the branch count that was drawn before any fallback.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleDraw {
    pub bundle: PathBundle,
    pub requested: usize,
    pub fell_back: bool,
}

fn walk_to_leaf(s: &KnowledgeStructure, from: NodeId, rng: &mut impl Rng) -> KnowledgePath {
    let mut path = s.path_to(from).expect("node exists");
    let mut cur = from;
    loop {
        let children = &s.nodes()[cur].children;
        if children.is_empty() {
            return KnowledgePath(path);
        }
        cur = children[rng.gen_range(0..children.len())];
        path.push(cur);
    }
}

/// Draws b uniformly from `1..=min(l, leaves)`. One branch is a random
/// root-to-leaf walk. For more, a branch point is chosen uniformly among
/// internal nodes with at least b children, then b distinct children, then
/// a random walk below each. When no node has b children the draw falls
/// back to a single branch and says so.
pub fn sample_path_bundle(s: &KnowledgeStructure, l: usize, rng: &mut impl Rng) -> Result<BundleDraw, TaxonomyError> {
    if l == 0 {
        return Err(TaxonomyError::InvalidParameter("max branches must be at least 1".into()));
    }
    let b = rng.gen_range(1..=l.min(s.leaf_count()));
    if b >= 2 {
        let qualifying: Vec<NodeId> = s.nodes().iter().filter(|n| n.children.len() >= b).map(|n| n.id).collect();
        if !qualifying.is_empty() {
            let bp = qualifying[rng.gen_range(0..qualifying.len())];
            let children = &s.nodes()[bp].children;
            let mut picks = index::sample(rng, children.len(), b).into_vec();
            picks.sort_unstable();
            let branches = picks.into_iter().map(|i| walk_to_leaf(s, children[i], rng)).collect();
            return Ok(BundleDraw {
                bundle: PathBundle { branch_point: bp, branches },
                requested: b,
                fell_back: false,
            });
        }
    }
    Ok(BundleDraw {
        bundle: PathBundle {
            branch_point: s.root(),
            branches: vec![walk_to_leaf(s, s.root(), rng)],
        },
        requested: b,
        fell_back: b >= 2,
    })
}

pub fn lowest_common_ancestor(s: &KnowledgeStructure, nodes: &[NodeId]) -> Option<NodeId> {
    let mut paths = nodes.iter().map(|&n| s.path_to(n).ok());
    let mut common = paths.next()??;
    for p in paths {
        let p = p?;
        let shared = common.iter().zip(&p).take_while(|(a, b)| a == b).count();
        common.truncate(shared);
    }
    common.last().copied()
}

/// Checks the bundle invariants against `s` for a branch limit of `l`.
pub fn validate_bundle(s: &KnowledgeStructure, bundle: &PathBundle, l: usize) -> Result<(), String> {
    let n = bundle.branches.len();
    if n == 0 || n > l {
        return Err(format!("bundle has {n} branches, limit {l}"));
    }
    for path in &bundle.branches {
        let p = &path.0;
        if p.first() != Some(&s.root()) {
            return Err("path does not start at the root".into());
        }
        for w in p.windows(2) {
            if s.parent(w[1]) != Some(w[0]) {
                return Err(format!("{} is not a child of {}", w[1], w[0]));
            }
        }
        if !s.nodes()[path.leaf()].is_leaf() {
            return Err(format!("path ends at internal node {}", path.leaf()));
        }
        if !p.contains(&bundle.branch_point) {
            return Err("branch point is not on every path".into());
        }
    }
    let leaves = bundle.leaves();
    let mut distinct = leaves.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() != n {
        return Err("branch leaves are not distinct".into());
    }
    if n >= 2 && lowest_common_ancestor(s, &leaves) != Some(bundle.branch_point) {
        return Err("branch point is not the lowest common ancestor".into());
    }
    Ok(())
}
