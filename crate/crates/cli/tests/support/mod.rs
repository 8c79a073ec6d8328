//! Shared helpers and independent oracles for the CLI test targets.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::Rng;
use serde_json::Value;
use structkit::taxonomy::{KnowledgeStructure, Level, OutlineNode};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_structkit")
}

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn fixture(rel: &str) -> PathBuf {
    fixtures().join(rel)
}

/// Runs `structkit --config fixtures/tiny.toml --offline --output-dir <out> <args>`.
pub fn run_offline(out: &Path, args: &[&str]) -> Output {
    let config = fixture("tiny.toml");
    let mut cmd = Command::new(bin());
    cmd.arg("--config").arg(config).arg("--offline").arg("--output-dir").arg(out);
    cmd.args(args).env("RUST_LOG", "error");
    cmd.output().expect("spawn structkit")
}

pub fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).env("RUST_LOG", "error").output().expect("spawn structkit")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

pub fn describe(o: &Output) -> String {
    format!(
        "exit {}\nstdout:\n{}\nstderr:\n{}",
        code(o),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

/// Steps of the bundled offline pipeline, in order.
pub const PIPELINE: &[&[&str]] = &[
    &["ingest"],
    &["structure"],
    &["build-scpt"],
    &["build-ssft", "--count", "4"],
];

/// Runs the whole offline pipeline into `out`, evaluating the fixture
/// responses. Returns the first failing step's output, if any.
pub fn run_pipeline(out: &Path) -> Result<(), String> {
    let responses = fixture("eval/responses.jsonl");
    let references = fixture("eval/references.jsonl");
    let eval: Vec<&str> = vec![
        "evaluate",
        "--responses",
        responses.to_str().unwrap(),
        "--references",
        references.to_str().unwrap(),
    ];
    for step in PIPELINE.iter().copied().chain(std::iter::once(eval.as_slice())) {
        let o = run_offline(out, step);
        if !o.status.success() {
            return Err(format!("{step:?} failed\n{}", describe(&o)));
        }
    }
    Ok(())
}

/// Relative path → bytes for every file under `dir`.
pub fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn go(base: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                go(base, &p, out);
            } else {
                let rel = p.strip_prefix(base).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    go(dir, dir, &mut out);
    out
}

pub fn read_jsonl_values(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

// ---------------------------------------------------------------------------
// Metric oracles

fn counts<'a>(xs: &[&'a str]) -> HashMap<&'a str, usize> {
    let mut m = HashMap::new();
    for x in xs {
        *m.entry(*x).or_insert(0) += 1;
    }
    m
}

/// Multiset intersection size by per-type minimum counts.
pub fn oracle_overlap(a: &[&str], b: &[&str]) -> usize {
    let (ca, cb) = (counts(a), counts(b));
    ca.iter().map(|(k, n)| (*n).min(*cb.get(k).unwrap_or(&0))).sum()
}

/// Harmonic mean of precision and recall: `2·m / (|a| + |b|)`.
fn harmonic(m: usize, la: usize, lb: usize) -> f64 {
    if la == 0 && lb == 0 {
        1.0
    } else {
        (2 * m) as f64 / (la + lb) as f64
    }
}

pub fn oracle_f1(pred: &[&str], reference: &[&str]) -> f64 {
    harmonic(oracle_overlap(pred, reference), pred.len(), reference.len())
}

pub fn oracle_recall(pred: &[&str], reference: &[&str]) -> f64 {
    if reference.is_empty() {
        return 1.0;
    }
    oracle_overlap(pred, reference) as f64 / reference.len() as f64
}

/// LCS length by memoized recursion over suffix pairs.
pub fn oracle_lcs(a: &[&str], b: &[&str]) -> usize {
    fn go(a: &[&str], b: &[&str], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

pub fn oracle_rouge_l(pred: &[&str], reference: &[&str]) -> f64 {
    harmonic(oracle_lcs(pred, reference), pred.len(), reference.len())
}

pub const VOCAB: [&str; 10] = ["t0", "t1", "t2", "t3", "t4", "t5", "t6", "t7", "t8", "t9"];

pub fn random_tokens(rng: &mut impl Rng, max_len: usize) -> Vec<&'static str> {
    let n = rng.gen_range(0..=max_len);
    (0..n).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())]).collect()
}

// ---------------------------------------------------------------------------
// Scaling-curve oracle

fn det3(m: [[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Normal-equation matrix for the basis `[ln²r, ln r, 1]`.
pub fn normal_matrix(rs: &[f64]) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for &r in rs {
        let x = r.ln();
        let phi = [x * x, x, 1.0];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += phi[i] * phi[j];
            }
        }
    }
    m
}

/// Least-squares `(a, b, c)` by Cramer's rule on the normal equations.
pub fn oracle_fit(points: &[(f64, f64)]) -> [f64; 3] {
    let rs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let m = normal_matrix(&rs);
    let mut v = [0.0; 3];
    for &(r, p) in points {
        let x = r.ln();
        v[0] += x * x * p;
        v[1] += x * p;
        v[2] += p;
    }
    let d = det3(m);
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let mut mk = m;
        for i in 0..3 {
            mk[i][k] = v[i];
        }
        *o = det3(mk) / d;
    }
    out
}

/// Diagonal of the inverse normal matrix (cofactor / determinant).
pub fn inverse_diagonal(m: [[f64; 3]; 3]) -> [f64; 3] {
    let d = det3(m);
    [
        (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / d,
        (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / d,
        (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / d,
    ]
}

// ---------------------------------------------------------------------------
// Taxonomy oracles

const LABEL_STEMS: [&str; 4] = ["node", "节点", "Ünïcødé", "x"];

/// A random outline forest of depth 1..=5 with at most `max_leaves` leaves.
/// Leaf chunk refs are `c0`, `c1`, ... in pre-order.
pub fn random_forest(rng: &mut impl Rng, max_leaves: usize) -> Vec<OutlineNode> {
    fn grow(rng: &mut impl Rng, depth_left: usize, budget: &mut usize, next: &mut usize) -> OutlineNode {
        let stem = LABEL_STEMS[rng.gen_range(0..LABEL_STEMS.len())];
        let label = format!("{stem} {}", rng.gen_range(0..1000));
        if depth_left == 1 || *budget <= 1 || rng.gen_bool(0.2) {
            *budget = budget.saturating_sub(1);
            let id = *next;
            *next += 1;
            return OutlineNode::leaf(label, Some(format!("c{id}")));
        }
        let want = rng.gen_range(1..=6);
        let mut children = Vec::new();
        for _ in 0..want {
            if *budget == 0 {
                break;
            }
            children.push(grow(rng, depth_left - 1, budget, next));
        }
        OutlineNode::branch(label, children)
    }
    let depth = rng.gen_range(1..=5);
    let mut budget = rng.gen_range(1..=max_leaves);
    let mut next = 0;
    let mut forest = Vec::new();
    let tops = rng.gen_range(1..=5);
    for _ in 0..tops {
        if budget == 0 {
            break;
        }
        forest.push(grow(rng, depth, &mut budget, &mut next));
    }
    forest
}

pub fn random_structure(rng: &mut impl Rng, id: &str, max_leaves: usize) -> KnowledgeStructure {
    let forest = random_forest(rng, max_leaves);
    let depth = forest.iter().map(OutlineNode::depth).max().unwrap();
    let top = if depth >= 4 { Level::Domain } else { Level::Chapter };
    KnowledgeStructure::from_outline(id, "Random Domain", &forest, top).expect("random outline builds")
}

/// One structural pass: single root, unique parentage, every node reachable
/// exactly once, levels one step apart down to point-level leaves, chunk
/// refs only on leaves and indexed one-to-one.
pub fn check_tree(s: &KnowledgeStructure) -> Result<(), String> {
    let nodes = s.nodes();
    let mut parents = vec![0usize; nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        if n.id != i {
            return Err(format!("node at index {i} has id {}", n.id));
        }
        for &c in &n.children {
            if c >= nodes.len() {
                return Err(format!("dangling child {c}"));
            }
            parents[c] += 1;
        }
    }
    for (i, &p) in parents.iter().enumerate() {
        let expected = usize::from(i != s.root());
        if p != expected {
            return Err(format!("node {i} has {p} parents"));
        }
    }
    let mut seen = vec![false; nodes.len()];
    let mut stack = vec![s.root()];
    while let Some(n) = stack.pop() {
        if std::mem::replace(&mut seen[n], true) {
            return Err(format!("node {n} reached twice"));
        }
        stack.extend(&nodes[n].children);
    }
    if let Some(i) = seen.iter().position(|v| !v) {
        return Err(format!("node {i} unreachable"));
    }
    if nodes[s.root()].level != Level::Domain {
        return Err("root is not a domain".into());
    }
    let mut refs = BTreeMap::new();
    for n in nodes {
        if n.children.is_empty() {
            if n.level != Level::Point {
                return Err(format!("leaf {} at {:?}", n.id, n.level));
            }
            let Some(r) = &n.chunk_ref else {
                return Err(format!("leaf {} has no chunk", n.id));
            };
            if refs.insert(r.clone(), n.id).is_some() {
                return Err(format!("chunk {r} on two leaves"));
            }
        } else {
            if n.chunk_ref.is_some() {
                return Err(format!("internal node {} carries a chunk", n.id));
            }
            for &c in &n.children {
                // a merged root holds one domain node per book
                if n.id == s.root() && nodes[c].level == Level::Domain {
                    continue;
                }
                let expected = match n.level {
                    Level::Domain => Level::Chapter,
                    Level::Chapter => Level::Section,
                    Level::Section => Level::Point,
                    Level::Point => return Err(format!("point {} has children", n.id)),
                };
                if nodes[c].level != expected {
                    return Err(format!("child {c} of {:?} node is {:?}", n.level, nodes[c].level));
                }
            }
        }
    }
    if &refs != s.chunk_index() {
        return Err("chunk index disagrees with leaves".into());
    }
    Ok(())
}

/// Bundle identity: branch point and the node paths of its branches.
pub type BundleKey = (usize, Vec<Vec<usize>>);

fn paths_to_leaves(s: &KnowledgeStructure, from: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    prefix.push(from);
    let children = &s.nodes()[from].children;
    if children.is_empty() {
        out.push(prefix.clone());
    }
    for &c in children {
        paths_to_leaves(s, c, prefix, out);
    }
    prefix.pop();
}

fn root_path(s: &KnowledgeStructure, node: usize) -> Vec<usize> {
    let mut p = vec![node];
    let mut cur = node;
    while let Some(parent) = s.nodes().iter().position(|n| n.children.contains(&cur)) {
        p.push(parent);
        cur = parent;
    }
    p.reverse();
    p
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    if n < k {
        return Vec::new();
    }
    let mut out = subsets(n - 1, k);
    for mut s in subsets(n - 1, k - 1) {
        s.push(n - 1);
        out.push(s);
    }
    out
}

/// Every valid bundle with 1..=l branches: single root-to-leaf paths with the
/// root as branch point, and for b ≥ 2 one leaf under each of b distinct
/// children (in child order) of some node.
pub fn enumerate_bundles(s: &KnowledgeStructure, l: usize) -> HashSet<BundleKey> {
    let mut out = HashSet::new();
    let mut all = Vec::new();
    paths_to_leaves(s, s.root(), &mut Vec::new(), &mut all);
    for p in all {
        out.insert((s.root(), vec![p]));
    }
    for v in 0..s.nodes().len() {
        let children = &s.nodes()[v].children;
        let prefix = root_path(s, v);
        for b in 2..=l {
            for pick in subsets(children.len(), b) {
                let per_child: Vec<Vec<Vec<usize>>> = pick
                    .iter()
                    .map(|&i| {
                        let mut paths = Vec::new();
                        paths_to_leaves(s, children[i], &mut prefix.clone(), &mut paths);
                        paths
                    })
                    .collect();
                let mut combos: Vec<Vec<Vec<usize>>> = vec![Vec::new()];
                for options in &per_child {
                    combos = combos
                        .into_iter()
                        .flat_map(|c| {
                            options.iter().map(move |o| {
                                let mut c = c.clone();
                                c.push(o.clone());
                                c
                            })
                        })
                        .collect();
                }
                for c in combos {
                    out.insert((v, c));
                }
            }
        }
    }
    out
}

/// A hand-built tree with uneven fan-out: 9 leaves, node with 4 children.
pub fn bundle_fixture() -> KnowledgeStructure {
    let leaf = |l: &str, c: &str| OutlineNode::leaf(l, Some(c.to_string()));
    let forest = vec![
        OutlineNode::branch(
            "Lipids",
            vec![
                OutlineNode::branch("Transport", vec![leaf("Lipoproteins", "k1"), leaf("Albumin", "k2")]),
                OutlineNode::branch("Storage", vec![leaf("Adipocytes", "k3")]),
            ],
        ),
        OutlineNode::branch(
            "Enzymes",
            vec![OutlineNode::branch(
                "Kinetics",
                vec![leaf("Km", "k4"), leaf("Vmax", "k5"), leaf("Inhibition", "k6"), leaf("Allostery", "k7")],
            )],
        ),
        OutlineNode::branch("Hormones", vec![OutlineNode::branch("Insulin", vec![leaf("Receptor", "k8")])]),
        leaf("Vitamins", "k9"),
    ];
    KnowledgeStructure::from_outline("fixture", "Biochemistry", &forest, Level::Chapter).unwrap()
}

// ---------------------------------------------------------------------------
// SCPT scanners

/// Epoch files of a dataset directory in slot order.
pub fn epoch_files(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("scpt.epoch"))
        .collect();
    files.sort_by_key(|p| {
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        name.trim_start_matches("scpt.epoch").trim_end_matches(".jsonl").parse::<usize>().unwrap()
    });
    files
}

/// In every slot each leaf chunk appears exactly once, and before the
/// recall record of its structure; each structure has exactly one recall
/// record per slot.
pub fn scan_schedule(dir: &Path, structures: &[KnowledgeStructure]) -> Result<usize, String> {
    let leaves: BTreeMap<&str, BTreeSet<&str>> = structures
        .iter()
        .map(|s| (s.structure_id(), s.chunk_index().keys().map(String::as_str).collect()))
        .collect();
    let files = epoch_files(dir);
    if files.is_empty() {
        return Err("no epoch files".into());
    }
    let mut records = 0;
    for f in &files {
        let mut seen: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut recalled: BTreeSet<String> = BTreeSet::new();
        for (line, r) in read_jsonl_values(f).iter().enumerate() {
            records += 1;
            let sid = r["meta"]["structure_id"].as_str().ok_or("missing structure_id")?.to_string();
            let at = format!("{}:{}", f.display(), line + 1);
            match r["kind"].as_str() {
                Some("chunk_conditional") => {
                    let cid = r["meta"]["chunk_id"].as_str().ok_or("missing chunk_id")?.to_string();
                    if recalled.contains(&sid) {
                        return Err(format!("{at}: chunk {cid} after the recall record of {sid}"));
                    }
                    if !leaves.get(sid.as_str()).is_some_and(|l| l.contains(cid.as_str())) {
                        return Err(format!("{at}: chunk {cid} is not a leaf of {sid}"));
                    }
                    if !seen.entry(sid).or_default().insert(cid.clone()) {
                        return Err(format!("{at}: chunk {cid} repeated"));
                    }
                }
                Some("structure_recall") => {
                    let want = &leaves[sid.as_str()];
                    let got: BTreeSet<&str> = seen.get(&sid).map(|s| s.iter().map(String::as_str).collect()).unwrap_or_default();
                    if &got != want {
                        return Err(format!("{at}: recall of {sid} before all of its chunks"));
                    }
                    if !recalled.insert(sid.clone()) {
                        return Err(format!("{at}: second recall of {sid}"));
                    }
                }
                other => return Err(format!("{at}: unknown kind {other:?}")),
            }
        }
        let expected: BTreeSet<String> = leaves.keys().map(|s| s.to_string()).collect();
        if recalled != expected {
            return Err(format!("{}: recall records {recalled:?}, expected {expected:?}", f.display()));
        }
    }
    Ok(records)
}
