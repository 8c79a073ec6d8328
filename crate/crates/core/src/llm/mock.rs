//! Deterministic offline backends.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::io;
use std::path::Path;
use std::sync::{Arc, Mutex};

use super::{prompt_hash, Backend, BackendError, FinishReason, GenerationRequest, GenerationResponse};

pub type Responder = Arc<dyn Fn(&GenerationRequest) -> Option<String> + Send + Sync>;

/// Canned responses keyed by prompt hash, with an optional fallback.
///
/// Fixture directories hold one `<prompt_sha256>.txt` file per response.
/// Prompts without a fixture or fallback answer are remembered so that
/// transcripts can be authored for them (see [`MockBackend::dump_misses`]).
#[derive(Default)]
pub struct MockBackend {
    fixtures: BTreeMap<String, String>,
    fallback: Option<Responder>,
    misses: Mutex<BTreeMap<String, String>>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_dir(dir: &Path) -> io::Result<Self> {
        let mut mock = Self::new();
        mock.load_dir(dir)?;
        Ok(mock)
    }

    pub fn load_dir(&mut self, dir: &Path) -> io::Result<usize> {
        let mut loaded = 0;
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
            let Some(hash) = name.strip_suffix(".txt") else { continue };
            if hash.len() != 64 || !hash.bytes().all(|b| b.is_ascii_hexdigit()) {
                continue;
            }
            self.fixtures.insert(hash.to_ascii_lowercase(), fs::read_to_string(&path)?);
            loaded += 1;
        }
        Ok(loaded)
    }

    pub fn with_fallback(mut self, responder: Responder) -> Self {
        self.fallback = Some(responder);
        self
    }

    /// Registers `response` for the exact `prompt`.
    pub fn insert(&mut self, prompt: &str, response: impl Into<String>) {
        self.fixtures.insert(prompt_hash(prompt), response.into());
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }

    /// Prompts that had no canned answer, keyed by hash.
    pub fn misses(&self) -> BTreeMap<String, String> {
        self.misses.lock().unwrap().clone()
    }

    /// Writes `<hash>.prompt.txt` for every missed prompt.
    pub fn dump_misses(&self, dir: &Path) -> io::Result<usize> {
        fs::create_dir_all(dir)?;
        let misses = self.misses();
        for (hash, prompt) in &misses {
            fs::write(dir.join(format!("{hash}.prompt.txt")), prompt)?;
        }
        Ok(misses.len())
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let hash = prompt_hash(&request.prompt);
        let text = match self.fixtures.get(&hash) {
            Some(text) => Some(text.clone()),
            None => self.fallback.as_ref().and_then(|f| f(request)),
        };
        match text {
            Some(text) => Ok(GenerationResponse {
                text,
                finish_reason: FinishReason::Stop,
                latency_ms: 0,
            }),
            None => {
                self.misses.lock().unwrap().insert(hash.clone(), request.prompt.clone());
                Err(BackendError::NoFixture(hash))
            }
        }
    }
}

/// Replays a fixed sequence of outcomes regardless of the request.
pub struct ScriptedBackend {
    script: Mutex<VecDeque<Result<GenerationResponse, BackendError>>>,
    calls: Mutex<usize>,
}

impl ScriptedBackend {
    pub fn new(script: Vec<Result<GenerationResponse, BackendError>>) -> Self {
        Self {
            script: Mutex::new(script.into()),
            calls: Mutex::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        *self.calls.lock().unwrap()
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, _request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        *self.calls.lock().unwrap() += 1;
        self.script
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(BackendError::Transport("script exhausted".into())))
    }
}
