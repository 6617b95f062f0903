use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{batch_screenshots, merge_summaries, parse_summary_text, KeywordSummary, PromptSpec, SummarizerError};
use crate::digest::sha256_hex;
use crate::session::{ScreenshotRef, Session};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendIdentity {
    Live,
    Mock,
}

/// A multimodal model that answers a prompt about a batch of screenshots.
pub trait SummarizerBackend: Send + Sync {
    fn identity(&self) -> BackendIdentity;

    fn summarize_batch(&self, prompt: &PromptSpec, batch: &[ScreenshotRef]) -> Result<String, SummarizerError>;
}

impl<B: SummarizerBackend + ?Sized> SummarizerBackend for std::sync::Arc<B> {
    fn identity(&self) -> BackendIdentity {
        (**self).identity()
    }

    fn summarize_batch(&self, prompt: &PromptSpec, batch: &[ScreenshotRef]) -> Result<String, SummarizerError> {
        (**self).summarize_batch(prompt, batch)
    }
}

/// SHA-256 of the prompt text, a newline, and the sorted screenshot keys
/// joined by commas.
pub fn fixture_key<S: AsRef<str>>(prompt_text: &str, keys: &[S]) -> String {
    let mut sorted: Vec<&str> = keys.iter().map(AsRef::as_ref).collect();
    sorted.sort_unstable();
    sha256_hex(format!("{prompt_text}\n{}", sorted.join(",")))
}

/// Deterministic backend that replays stored responses from
/// `<root>/fixture/<fixture_key>.txt`.
#[derive(Debug)]
pub struct MockBackend {
    root: PathBuf,
}

impl MockBackend {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        MockBackend { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn fixture_path<S: AsRef<str>>(&self, prompt_text: &str, keys: &[S]) -> PathBuf {
        self.root.join("fixture").join(format!("{}.txt", fixture_key(prompt_text, keys)))
    }

    /// Stores `response` as the reply for `(prompt, keys)`.
    pub fn write_fixture<S: AsRef<str>>(&self, prompt: &PromptSpec, keys: &[S], response: &str) -> std::io::Result<PathBuf> {
        let path = self.fixture_path(&prompt.instruction_text, keys);
        fs::create_dir_all(path.parent().expect("fixture dir"))?;
        fs::write(&path, response)?;
        Ok(path)
    }
}

impl SummarizerBackend for MockBackend {
    fn identity(&self) -> BackendIdentity {
        BackendIdentity::Mock
    }

    fn summarize_batch(&self, prompt: &PromptSpec, batch: &[ScreenshotRef]) -> Result<String, SummarizerError> {
        let keys: Vec<&str> = batch.iter().map(|s| s.key.as_str()).collect();
        let path = self.fixture_path(&prompt.instruction_text, &keys);
        fs::read_to_string(&path).map_err(|_| SummarizerError::FixtureMissing { path: path.display().to_string() })
    }
}

/// Wraps a backend and records the size of every batch it is asked about.
#[derive(Debug)]
pub struct RecordingBackend<B> {
    inner: B,
    calls: AtomicUsize,
    batch_sizes: Mutex<Vec<usize>>,
}

impl<B> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        RecordingBackend { inner, calls: AtomicUsize::new(0), batch_sizes: Mutex::new(Vec::new()) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Batch sizes in call order. Concurrent batches may interleave.
    pub fn batch_sizes(&self) -> Vec<usize> {
        self.batch_sizes.lock().expect("recording lock").clone()
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
        self.batch_sizes.lock().expect("recording lock").clear();
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: SummarizerBackend> SummarizerBackend for RecordingBackend<B> {
    fn identity(&self) -> BackendIdentity {
        self.inner.identity()
    }

    fn summarize_batch(&self, prompt: &PromptSpec, batch: &[ScreenshotRef]) -> Result<String, SummarizerError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.batch_sizes.lock().expect("recording lock").push(batch.len());
        self.inner.summarize_batch(prompt, batch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SummarizeOptions {
    pub batch_size: usize,
    /// Upper bound on batches sent to the backend at the same time.
    pub max_in_flight: usize,
}

impl Default for SummarizeOptions {
    fn default() -> Self {
        SummarizeOptions { batch_size: 10, max_in_flight: 2 }
    }
}

/// Summarizes every screenshot of `session`.
pub fn summarize_session(
    session: &Session,
    backend: &dyn SummarizerBackend,
    prompt: &PromptSpec,
    opts: SummarizeOptions,
) -> Result<KeywordSummary, SummarizerError> {
    let refs: Vec<ScreenshotRef> = session.screenshots().cloned().collect();
    summarize_screenshots(&refs, backend, prompt, opts)
}

/// Batches `refs`, sends each batch with `prompt`, parses every response and
/// merges the per-batch summaries. The first failing batch (by index) is
/// reported.
pub fn summarize_screenshots(
    refs: &[ScreenshotRef],
    backend: &dyn SummarizerBackend,
    prompt: &PromptSpec,
    opts: SummarizeOptions,
) -> Result<KeywordSummary, SummarizerError> {
    if refs.is_empty() {
        return Err(SummarizerError::NoScreenshots);
    }
    let batches = batch_screenshots(refs, opts.batch_size)?;
    let wave = opts.max_in_flight.max(1);
    let mut results: Vec<Result<KeywordSummary, SummarizerError>> = Vec::with_capacity(batches.len());
    for group in batches.chunks(wave) {
        let outcome: Vec<_> = std::thread::scope(|scope| {
            let handles: Vec<_> = group
                .iter()
                .map(|batch| scope.spawn(move || backend.summarize_batch(prompt, batch).and_then(|raw| parse_summary_text(&raw))))
                .collect();
            handles.into_iter().map(|h| h.join().expect("summarizer thread panicked")).collect()
        });
        let failed = outcome.iter().any(Result::is_err);
        results.extend(outcome);
        if failed {
            break;
        }
    }
    let mut parts = Vec::with_capacity(results.len());
    for (batch_index, result) in results.into_iter().enumerate() {
        match result {
            Ok(summary) => parts.push(summary),
            Err(err @ SummarizerError::BackendUnavailable(_)) => return Err(err),
            Err(source) => return Err(SummarizerError::Batch { batch_index, source: Box::new(source) }),
        }
    }
    Ok(merge_summaries(&parts))
}
