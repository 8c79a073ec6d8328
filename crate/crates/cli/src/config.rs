//! Pipeline configuration: one TOML document, overridden by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use structkit::corpus::{OversizePolicy, BUDGET_2048};
use structkit::llm::ClientConfig;
use structkit::mindmap::MindmapScope;
use structkit::tokenize::{LanguageMode, TokenizerMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum StructureMode {
    #[default]
    Prompted,
    Clustering,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    pub branching: usize,
    pub leaf_size: usize,
    pub max_depth: usize,
    pub max_iters: usize,
    pub restarts: usize,
    pub domain_label: String,
}

impl Default for ClusterSection {
    fn default() -> Self {
        Self {
            branching: 2,
            leaf_size: 8,
            max_depth: 4,
            max_iters: 100,
            restarts: 8,
            domain_label: "Corpus".into(),
        }
    }
}

/// Every pipeline default in one place. A resolved copy is written next to
/// the outputs of every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    /// Files, directories or `.jsonl` manifests; relative to the config file.
    pub corpus: Vec<String>,
    /// Language tag for documents read from plain-text files.
    pub language: String,
    pub tokenizer: TokenizerMode,
    pub budget: usize,
    pub oversize: OversizePolicy,
    pub structure_mode: StructureMode,
    /// Title-list window for prompted extraction.
    pub window: usize,
    pub max_branches: usize,
    pub epochs: usize,
    pub scope: MindmapScope,
    pub dataset_id: String,
    pub template_pool: Option<String>,
    pub metric_language: LanguageMode,
    pub leakage_threshold: f64,
    pub cluster: ClusterSection,
    pub client: ClientConfig,
    #[serde(skip_serializing)]
    pub output_dir: Option<String>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: None,
            corpus: Vec::new(),
            language: "en".into(),
            tokenizer: TokenizerMode::UnicodeWords,
            budget: BUDGET_2048,
            oversize: OversizePolicy::Split,
            structure_mode: StructureMode::Prompted,
            window: 200,
            max_branches: 3,
            epochs: 3,
            scope: MindmapScope::PathLocal,
            dataset_id: "scpt".into(),
            template_pool: None,
            metric_language: LanguageMode::Unicode,
            leakage_threshold: structkit::ssft::DEFAULT_LEAKAGE_THRESHOLD,
            cluster: ClusterSection::default(),
            client: ClientConfig::default(),
            output_dir: None,
            base_dir: PathBuf::from("."),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: PipelineConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Resolves a config-relative path. Absolute paths pass through.
    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.context("a seed is required (--seed or `seed` in the config)")
    }

    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        if self.budget == 0 {
            bail!("budget must be positive");
        }
        if self.max_branches == 0 {
            bail!("max_branches must be at least 1");
        }
        if self.epochs == 0 {
            bail!("epochs must be at least 1");
        }
        if self.window == 0 {
            bail!("window must be positive");
        }
        if !(self.leakage_threshold > 0.0 && self.leakage_threshold <= 1.0) {
            bail!("leakage_threshold must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}
