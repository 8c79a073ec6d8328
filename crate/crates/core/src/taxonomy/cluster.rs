use std::collections::BTreeMap;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{KnowledgeStructure, Level, OutlineNode, TaxonomyError};
use crate::corpus::Chunk;
use crate::llm::{offline, Embedder, GenerationClient, GenerationRequest, RequestTag};
use crate::prompts;
use crate::tokenize::{normalize_tokens, LanguageMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusterConfig {
    pub branching: usize,
    pub leaf_size: usize,
    pub max_depth: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Independent k-means++ starts per split; the lowest inertia wins.
    pub restarts: usize,
}

impl ClusterConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            branching: 2,
            leaf_size: 8,
            max_depth: 4,
            seed,
            max_iters: 100,
            restarts: 8,
        }
    }

    fn validate(&self) -> Result<(), TaxonomyError> {
        if self.branching < 2 {
            return Err(TaxonomyError::InvalidParameter("branching must be at least 2".into()));
        }
        if self.max_depth < 1 || self.leaf_size < 1 || self.max_iters < 1 || self.restarts < 1 {
            return Err(TaxonomyError::InvalidParameter(
                "max_depth, leaf_size, max_iters and restarts must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// How internal cluster nodes get their labels.
#[derive(Clone, Copy)]
pub enum ClusterLabeler<'a> {
    /// The three most frequent content terms of the member titles and texts.
    TopTerms(LanguageMode),
    /// Ask the model for a heading; falls back to top terms on failure.
    Client(&'a GenerationClient, LanguageMode),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
}

impl KMeans {
    /// Sum of squared distances from each point to its centroid.
    pub fn inertia(&self, points: &[Vec<f64>]) -> f64 {
        points.iter().zip(&self.assignments).map(|(p, &a)| dist2(p, &self.centroids[a])).sum()
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Lloyd's algorithm with k-means++ seeding. Ties go to the lowest centroid
/// index; an emptied cluster is reseeded with the point farthest from its
/// centroid. Stops when assignments repeat, so on return every point sits
/// at its nearest centroid and every centroid is its members' mean (unless
/// `max_iters` ran out first).
pub fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng, max_iters: usize) -> KMeans {
    let k = k.min(points.len()).max(1);
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    while centroids.len() < k {
        let weights: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.gen::<f64>() * total;
        let mut pick = weights.iter().rposition(|&w| w > 0.0).expect("positive total");
        for (i, w) in weights.iter().enumerate() {
            if *w > 0.0 && target < *w {
                pick = i;
                break;
            }
            target -= w;
        }
        centroids.push(points[pick].clone());
    }

    let dim = points[0].len();
    let mut prev: Option<Vec<usize>> = None;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let assign: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        if prev.as_ref() == Some(&assign) {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        for (c, (sum, &n)) in sums.into_iter().zip(&counts).enumerate() {
            if n > 0 {
                centroids[c] = sum.into_iter().map(|s| s / n as f64).collect();
            }
        }
        for c in 0..centroids.len() {
            if counts[c] == 0 {
                let far = (0..points.len())
                    .map(|i| (i, dist2(&points[i], &centroids[assign[i]])))
                    .fold((0, -1.0), |best, x| if x.1 > best.1 { x } else { best });
                centroids[c] = points[far.0].clone();
            }
        }
        prev = Some(assign);
    }
    let assignments = prev.unwrap_or_else(|| points.iter().map(|p| nearest(p, &centroids).0).collect());
    KMeans {
        assignments,
        centroids,
        iterations,
    }
}

/// Best of `restarts` runs of [`kmeans`] by inertia; earlier runs win ties.
pub fn kmeans_restarts(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng, max_iters: usize, restarts: usize) -> KMeans {
    let mut best = kmeans(points, k, rng, max_iters);
    let mut best_inertia = best.inertia(points);
    for _ in 1..restarts {
        let run = kmeans(points, k, rng, max_iters);
        let inertia = run.inertia(points);
        if inertia < best_inertia - 1e-12 {
            best = run;
            best_inertia = inertia;
        }
    }
    best
}

/// Recursive top-down clustering for corpora without usable headings.
/// Leaves are labeled with chunk titles (or a heuristic title for untitled
/// chunks); the top-level clusters become chapters under a domain root.
pub fn build_structure_by_clustering(
    chunks: &[Chunk],
    domain_label: &str,
    structure_id: &str,
    embedder: &dyn Embedder,
    labeler: ClusterLabeler<'_>,
    config: &ClusterConfig,
) -> Result<KnowledgeStructure, TaxonomyError> {
    config.validate()?;
    if chunks.is_empty() {
        return Err(TaxonomyError::NoChunks);
    }
    let labels: Vec<String> = chunks
        .iter()
        .map(|c| match c.title.as_deref().map(str::trim) {
            Some(t) if !t.is_empty() => t.to_string(),
            _ => offline::heuristic_title(&c.text),
        })
        .map(|t| if t.is_empty() { "Untitled".to_string() } else { t })
        .collect();
    if chunks.len() == 1 {
        return Ok(KnowledgeStructure::trivial(structure_id, &labels[0], &chunks[0].id));
    }
    let texts: Vec<String> = chunks.iter().zip(&labels).map(|(c, l)| format!("{l}\n{}", c.text)).collect();
    let vectors = embedder.embed(&texts)?;
    let mut ctx = Ctx {
        chunks,
        labels: &labels,
        texts: &texts,
        vectors: &vectors,
        labeler,
        config,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
    };
    let all: Vec<usize> = (0..chunks.len()).collect();
    let forest = ctx.split(&all, 1);
    KnowledgeStructure::from_outline(structure_id, domain_label, &forest, Level::Chapter)
}

struct Ctx<'a> {
    chunks: &'a [Chunk],
    labels: &'a [String],
    texts: &'a [String],
    vectors: &'a [Vec<f64>],
    labeler: ClusterLabeler<'a>,
    config: &'a ClusterConfig,
    rng: ChaCha8Rng,
}

impl Ctx<'_> {
    /// Children for a cluster of `members` at recursion `depth`.
    fn split(&mut self, members: &[usize], depth: usize) -> Vec<OutlineNode> {
        if members.len() <= self.config.leaf_size || depth > self.config.max_depth {
            return members
                .iter()
                .map(|&i| OutlineNode::leaf(self.labels[i].clone(), Some(self.chunks[i].id.clone())))
                .collect();
        }
        let points: Vec<Vec<f64>> = members.iter().map(|&i| self.vectors[i].clone()).collect();
        let km = kmeans_restarts(&points, self.config.branching, &mut self.rng, self.config.max_iters, self.config.restarts);
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); km.centroids.len()];
        for (&m, &a) in members.iter().zip(&km.assignments) {
            groups[a].push(m);
        }
        groups.retain(|g| !g.is_empty());
        if groups.len() < 2 {
            // identical embeddings: split contiguously to keep recursion finite
            let k = self.config.branching.min(members.len());
            let size = members.len().div_ceil(k);
            groups = members.chunks(size).map(<[usize]>::to_vec).collect();
        }
        groups.sort_by_key(|g| g[0]);
        groups
            .iter()
            .map(|g| {
                if g.len() == 1 {
                    let i = g[0];
                    return OutlineNode::leaf(self.labels[i].clone(), Some(self.chunks[i].id.clone()));
                }
                let children = self.split(g, depth + 1);
                OutlineNode::branch(self.label(g), children)
            })
            .collect()
    }

    fn label(&self, members: &[usize]) -> String {
        match self.labeler {
            ClusterLabeler::TopTerms(mode) => top_terms(members.iter().map(|&i| self.texts[i].as_str()), mode),
            ClusterLabeler::Client(client, mode) => {
                let titles: Vec<String> = members.iter().map(|&i| self.labels[i].clone()).collect();
                let request = GenerationRequest::new(RequestTag::Title, prompts::cluster_label_prompt(&titles));
                match client.generate(&request) {
                    Ok(r) => match crate::corpus::normalize_title(&r.text) {
                        Some(t) => t,
                        None => top_terms(members.iter().map(|&i| self.texts[i].as_str()), mode),
                    },
                    Err(e) => {
                        warn!("cluster label generation failed, using top terms: {e}");
                        top_terms(members.iter().map(|&i| self.texts[i].as_str()), mode)
                    }
                }
            }
        }
    }
}

const STOPWORDS: &[&str] = &[
    "about", "after", "all", "also", "and", "any", "are", "because", "been", "before", "being", "between", "both", "but",
    "can", "could", "does", "during", "each", "for", "from", "had", "has", "have", "her", "his", "how", "into", "its",
    "may", "more", "most", "not", "one", "only", "other", "our", "out", "over", "same", "she", "should", "some", "such",
    "than", "that", "the", "their", "them", "then", "there", "these", "they", "this", "those", "through", "too", "two",
    "under", "very", "was", "were", "what", "when", "where", "which", "while", "who", "why", "will", "with", "within",
    "would", "you", "your",
];

/// The three most frequent content terms, ties broken alphabetically.
/// Terms shorter than three characters are skipped unless they are CJK.
pub(crate) fn top_terms<'t>(texts: impl Iterator<Item = &'t str>, mode: LanguageMode) -> String {
    let mut tf: BTreeMap<String, usize> = BTreeMap::new();
    for t in texts {
        for tok in normalize_tokens(t, mode) {
            let cjk = tok.chars().any(crate::tokenize::is_cjk);
            if (cjk || tok.chars().count() >= 3) && !STOPWORDS.contains(&tok.as_str()) && !tok.chars().all(|c| c.is_ascii_digit()) {
                *tf.entry(tok).or_default() += 1;
            }
        }
    }
    let mut terms: Vec<(String, usize)> = tf.into_iter().collect();
    terms.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let top: Vec<String> = terms.into_iter().take(3).map(|(t, _)| t).collect();
    if top.is_empty() {
        "Miscellaneous".to_string()
    } else {
        top.join(", ")
    }
}
