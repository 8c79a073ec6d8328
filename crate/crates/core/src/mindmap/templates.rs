use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{MindmapError, MindmapText};

pub const MINDMAP_PLACEHOLDER: &str = "{MINDMAP}";

const DEFAULT_POOL: &str = include_str!("../../templates/framing_pool.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FramingTemplate {
    pub id: u32,
    pub preamble: String,
    pub bridge: String,
}

/// A validated, non-empty set of framing templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplatePool {
    templates: Vec<FramingTemplate>,
}

impl TemplatePool {
    pub fn new(templates: Vec<FramingTemplate>) -> Result<Self, MindmapError> {
        let bad = |m: String| Err(MindmapError::InvalidTemplate(m));
        if templates.is_empty() {
            return bad("pool is empty".into());
        }
        let mut ids: Vec<u32> = templates.iter().map(|t| t.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate template ids".into());
        }
        for t in &templates {
            if t.preamble.matches(MINDMAP_PLACEHOLDER).count() != 1 {
                return bad(format!("template {} must contain exactly one {MINDMAP_PLACEHOLDER}", t.id));
            }
            if t.bridge.trim().is_empty() {
                return bad(format!("template {} has an empty bridge", t.id));
            }
        }
        Ok(Self { templates })
    }

    /// The 20 framings shipped with the library.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_POOL).expect("built-in pool is valid")
    }

    pub fn from_json(json: &str) -> Result<Self, MindmapError> {
        let templates = serde_json::from_str(json).map_err(|e| MindmapError::InvalidTemplate(e.to_string()))?;
        Self::new(templates)
    }

    pub fn load(path: &Path) -> Result<Self, MindmapError> {
        let json = std::fs::read_to_string(path).map_err(|source| MindmapError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&json)
    }

    pub fn templates(&self) -> &[FramingTemplate] {
        &self.templates
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    /// SHA-256 of the compact JSON serialization, for manifests.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&self.templates).expect("templates serialize");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

impl FramingTemplate {
    pub fn frame(&self, mindmap: &str) -> String {
        let mut out = self.preamble.replacen(MINDMAP_PLACEHOLDER, mindmap, 1);
        out.push_str(&self.bridge);
        out
    }
}

/// Draws a template uniformly and returns the framed condition text with the
/// template id.
pub fn apply_template(mindmap: &MindmapText, pool: &TemplatePool, rng: &mut impl Rng) -> (String, u32) {
    let t = &pool.templates[rng.gen_range(0..pool.templates.len())];
    (t.frame(&mindmap.text), t.id)
}
