//! Recall@k / MRR@k and the experiment runner.

mod synthetic;

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::catalog::CatalogSnapshot;
use crate::digest::json_digest;
use crate::exec::Exec;
use crate::models::{train_model, ModelError, ModelKind, ModelParams, RankedPredictions};
use crate::rerank::{rerank_topk, EmbeddingProvider, RerankError};
use crate::session::{ScreenshotKind, ScreenshotRef, Session};
use crate::summarizer::{summarize_screenshots, KeywordSummary, PromptSpec, SummarizeOptions, SummarizerBackend, SummarizerError};

pub use synthetic::{synthetic_corpus, SyntheticCorpus, SyntheticSpec};

/// Share of sessions held out for testing.
pub const TEST_SHARE: f64 = 0.2;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("test split is empty")]
    EmptyTestSplit,
    #[error("no summary available for session `{session_id}`: {reason}")]
    MissingSummaries { session_id: String, reason: String },
    #[error("prediction source `{name}` has no entry for session `{session_id}`")]
    MissingPredictions { name: String, session_id: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Rerank(#[from] RerankError),
    #[error(transparent)]
    Summarizer(SummarizerError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// 1 when `truth` is among the first `k` entries.
pub fn recall_at_k(predictions: &RankedPredictions, truth: &str, k: usize) -> f64 {
    match predictions.rank_of(truth) {
        Some(rank) if rank <= k => 1.0,
        _ => 0.0,
    }
}

/// Inverse 1-based rank of `truth` within the first `k` entries, else 0.
pub fn mrr_at_k(predictions: &RankedPredictions, truth: &str, k: usize) -> f64 {
    match predictions.rank_of(truth) {
        Some(rank) if rank <= k => 1.0 / rank as f64,
        _ => 0.0,
    }
}

/// Dataset-level (recall, mrr): means over the given (prediction, truth)
/// pairs, summed in order.
pub fn mean_metrics<'a>(pairs: impl IntoIterator<Item = (&'a RankedPredictions, &'a str)>, k: usize) -> (f64, f64) {
    let (mut recall, mut mrr, mut n) = (0.0, 0.0, 0usize);
    for (p, truth) in pairs {
        recall += recall_at_k(p, truth, k);
        mrr += mrr_at_k(p, truth, k);
        n += 1;
    }
    if n == 0 {
        (0.0, 0.0)
    } else {
        (recall / n as f64, mrr / n as f64)
    }
}

/// How much of each test session's history the model and summarizer see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SessionWindow {
    #[default]
    Full,
    Last(usize),
}

impl fmt::Display for SessionWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SessionWindow::Full => f.write_str("FULL"),
            SessionWindow::Last(m) => write!(f, "{m}"),
        }
    }
}

impl Serialize for SessionWindow {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            SessionWindow::Full => s.serialize_str("FULL"),
            SessionWindow::Last(m) => s.serialize_u64(*m as u64),
        }
    }
}

impl<'de> Deserialize<'de> for SessionWindow {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Count(u64),
            Word(String),
        }
        match Repr::deserialize(d)? {
            Repr::Count(0) => Err(serde::de::Error::custom("session_window must be positive")),
            Repr::Count(m) => Ok(SessionWindow::Last(m as usize)),
            Repr::Word(w) if w.eq_ignore_ascii_case("full") => Ok(SessionWindow::Full),
            Repr::Word(w) => Err(serde::de::Error::custom(format!("session_window must be a positive integer or FULL, got `{w}`"))),
        }
    }
}

/// A ranking source under evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    /// Trained on the training split.
    Native(ModelKind),
    /// Precomputed rankings read from a prediction file.
    File { name: String, path: PathBuf },
}

impl ModelSource {
    pub fn name(&self) -> String {
        match self {
            ModelSource::Native(kind) => kind.to_string(),
            ModelSource::File { name, .. } => name.clone(),
        }
    }
}

fn default_k() -> usize {
    50
}

fn default_fraction() -> f64 {
    1.0
}

fn default_models() -> Vec<ModelSource> {
    ModelKind::ALL.into_iter().map(ModelSource::Native).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub rerank: bool,
    #[serde(default = "default_fraction")]
    pub training_fraction: f64,
    #[serde(default)]
    pub session_window: SessionWindow,
    #[serde(default)]
    pub screenshot_kind: ScreenshotKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_models")]
    pub models: Vec<ModelSource>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: default_k(),
            rerank: false,
            training_fraction: default_fraction(),
            session_window: SessionWindow::Full,
            screenshot_kind: ScreenshotKind::FullPageViewport,
            seed: 0,
            models: default_models(),
        }
    }
}

impl EvalConfig {
    pub fn check(&self) -> Result<(), EvalError> {
        if self.k == 0 {
            return Err(EvalError::InvalidConfig("k must be at least 1".into()));
        }
        if !(self.training_fraction > 0.0 && self.training_fraction <= 1.0) {
            return Err(EvalError::InvalidConfig(format!("training_fraction {} is outside (0, 1]", self.training_fraction)));
        }
        if self.models.is_empty() {
            return Err(EvalError::InvalidConfig("no models listed".into()));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        json_digest(self)
    }
}

/// A base configuration plus optional sweeps; each sweep value yields one
/// configuration (sweeps combine as a cartesian product).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPlan {
    #[serde(flatten)]
    pub base: EvalConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_fractions: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_windows: Option<Vec<SessionWindow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screenshot_kinds: Option<Vec<ScreenshotKind>>,
}

impl EvalPlan {
    pub fn configs(&self) -> Vec<EvalConfig> {
        let fractions = self.training_fractions.clone().unwrap_or_else(|| vec![self.base.training_fraction]);
        let windows = self.session_windows.clone().unwrap_or_else(|| vec![self.base.session_window]);
        let kinds = self.screenshot_kinds.clone().unwrap_or_else(|| vec![self.base.screenshot_kind]);
        let mut out = Vec::new();
        for &training_fraction in &fractions {
            for &session_window in &windows {
                for &screenshot_kind in &kinds {
                    out.push(EvalConfig { training_fraction, session_window, screenshot_kind, ..self.base.clone() });
                }
            }
        }
        out
    }
}

/// Produces the keyword summary used to re-rank a test session.
pub trait SummaryProvider: Send + Sync {
    fn summary(&self, session_id: &str, screenshots: &[ScreenshotRef]) -> Result<KeywordSummary, EvalError>;
}

/// Summaries prepared ahead of time, keyed by session id.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedSummaries(pub HashMap<String, KeywordSummary>);

impl SummaryProvider for PrecomputedSummaries {
    fn summary(&self, session_id: &str, _: &[ScreenshotRef]) -> Result<KeywordSummary, EvalError> {
        self.0.get(session_id).cloned().ok_or_else(|| EvalError::MissingSummaries {
            session_id: session_id.to_string(),
            reason: "no precomputed summary".into(),
        })
    }
}

/// Summaries produced by a summarizer backend (typically the fixture mock).
/// A session without screenshots of the selected kind gets an all-absent
/// summary, which leaves its ranking unchanged.
pub struct BackendSummaries<'a> {
    pub backend: &'a dyn SummarizerBackend,
    pub prompt: PromptSpec,
    pub options: SummarizeOptions,
}

impl SummaryProvider for BackendSummaries<'_> {
    fn summary(&self, session_id: &str, screenshots: &[ScreenshotRef]) -> Result<KeywordSummary, EvalError> {
        if screenshots.is_empty() {
            return Ok(KeywordSummary::default());
        }
        summarize_screenshots(screenshots, self.backend, &self.prompt, self.options).map_err(|e| match e {
            SummarizerError::FixtureMissing { path } => {
                EvalError::MissingSummaries { session_id: session_id.to_string(), reason: format!("fixture {} is absent", path) }
            }
            SummarizerError::Batch { source, .. } if matches!(*source, SummarizerError::FixtureMissing { .. }) => {
                EvalError::MissingSummaries { session_id: session_id.to_string(), reason: source.to_string() }
            }
            other => EvalError::Summarizer(other),
        })
    }
}

pub struct EvalContext<'a> {
    pub catalog: &'a CatalogSnapshot,
    pub embedder: &'a dyn EmbeddingProvider,
    /// Required when any configuration has `rerank` set.
    pub summaries: Option<&'a dyn SummaryProvider>,
    pub model_params: ModelParams,
    pub exec: Exec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub model: String,
    pub reranked: bool,
    pub config: EvalConfig,
    pub recall: f64,
    pub mrr: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset_digest: String,
    pub seed: u64,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub provenance: Provenance,
}

impl EvalReport {
    pub fn row(&self, model: &str, reranked: bool) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.model == model && r.reranked == reranked)
    }

    pub fn to_jsonl(&self) -> String {
        self.rows.iter().map(|r| serde_json::to_string(r).expect("row encodes") + "\n").collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,reranked,k,training_fraction,session_window,screenshot_kind,seed,recall,mrr,n\n");
        for r in &self.rows {
            let kind = serde_json::to_value(r.config.screenshot_kind).expect("kind encodes");
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{:.6},{:.6},{}\n",
                r.model,
                r.reranked,
                r.config.k,
                r.config.training_fraction,
                r.config.session_window,
                kind.as_str().unwrap_or_default(),
                r.config.seed,
                r.recall,
                r.mrr,
                r.n
            ));
        }
        out
    }

    /// Plain-text table for terminals.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<14} {:<8} {:>6} {:>8} {:>9} {:>9} {:>6}\n", "model", "rerank", "frac", "window", "recall", "mrr", "n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<14} {:<8} {:>6} {:>8} {:>9.4} {:>9.4} {:>6}\n",
                r.model, r.reranked, r.config.training_fraction, r.config.session_window.to_string(), r.recall, r.mrr, r.n
            ));
        }
        out
    }

    /// Appends the rows to `<dir>/<config digest>.jsonl` and returns that path.
    pub fn append_to(&self, dir: impl AsRef<Path>) -> std::io::Result<PathBuf> {
        fs::create_dir_all(dir.as_ref())?;
        let path = dir.as_ref().join(format!("{}.jsonl", self.provenance.config_digest));
        let mut f = fs::OpenOptions::new().create(true).append(true).open(&path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(path)
    }

    /// Concatenates reports from several configurations over one dataset.
    pub fn combine(reports: Vec<EvalReport>) -> Option<EvalReport> {
        let first = reports.first()?.provenance.clone();
        let configs: Vec<&str> = reports.iter().map(|r| r.provenance.config_digest.as_str()).collect();
        let provenance = Provenance { config_digest: json_digest(&configs), ..first };
        Some(EvalReport { rows: reports.into_iter().flat_map(|r| r.rows).collect(), provenance })
    }
}

/// Seeded 80/20 split: (train, test) indices. The training side keeps the
/// shuffled order, so smaller fractions take nested prefixes.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (n as f64 * TEST_SHARE).round() as usize;
    let train = order.split_off(n_test.min(n));
    (train, order)
}

struct TestCase {
    session_id: String,
    prefix: Vec<String>,
    truth: String,
    screenshots: Vec<ScreenshotRef>,
}

enum Ranker {
    Model(crate::models::SessionModel),
    File(HashMap<String, RankedPredictions>),
}

pub fn run_experiment(config: &EvalConfig, dataset: &[Session], ctx: &EvalContext<'_>) -> Result<EvalReport, EvalError> {
    config.check()?;
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let (train_idx, test_idx) = split_indices(dataset.len(), config.seed);
    let n_train = ((train_idx.len() as f64 * config.training_fraction).ceil() as usize).min(train_idx.len());
    let train: Vec<Session> = train_idx[..n_train].iter().map(|&i| dataset[i].clone()).collect();

    let cases: Vec<TestCase> = test_idx
        .iter()
        .map(|&i| &dataset[i])
        .filter(|s| s.is_evaluable())
        .map(|s| {
            let windowed = match config.session_window {
                SessionWindow::Full => s.clone(),
                SessionWindow::Last(m) => s.truncate(m).expect("window is positive"),
            };
            TestCase {
                session_id: s.session_id.clone(),
                prefix: windowed.item_ids(),
                truth: s.ground_truth_next.clone().expect("evaluable"),
                screenshots: windowed.screenshots_of_kind(config.screenshot_kind),
            }
        })
        .collect();
    if cases.is_empty() {
        return Err(EvalError::EmptyTestSplit);
    }

    let summaries: Option<Vec<KeywordSummary>> = if config.rerank {
        let provider = ctx.summaries.ok_or_else(|| EvalError::MissingSummaries {
            session_id: cases[0].session_id.clone(),
            reason: "no summary source configured".into(),
        })?;
        let results = ctx.exec.map(&cases, |c| provider.summary(&c.session_id, &c.screenshots));
        Some(results.into_iter().collect::<Result<_, _>>()?)
    } else {
        None
    };

    let mut rows = Vec::new();
    for source in &config.models {
        let ranker = match source {
            ModelSource::Native(kind) => Ranker::Model(train_model(*kind, &train, &ctx.model_params)?),
            ModelSource::File { path, .. } => {
                Ranker::File(crate::models::read_predictions(path)?.into_iter().map(|p| (p.session_id.clone(), p)).collect())
            }
        };
        let per_case = ctx.exec.map_range(cases.len(), |i| -> Result<_, EvalError> {
            let case = &cases[i];
            let base = match &ranker {
                Ranker::Model(m) => m.predict_topk(&case.session_id, &case.prefix, config.k)?,
                Ranker::File(by_session) => by_session
                    .get(&case.session_id)
                    .map(|p| p.truncated(config.k))
                    .ok_or_else(|| EvalError::MissingPredictions { name: source.name(), session_id: case.session_id.clone() })?,
            };
            let reranked = match &summaries {
                Some(s) => Some(rerank_topk(&base, &s[i], ctx.catalog, ctx.embedder)?),
                None => None,
            };
            Ok((base, reranked))
        });
        let per_case: Vec<_> = per_case.into_iter().collect::<Result<_, _>>()?;
        let (recall, mrr) = mean_metrics(per_case.iter().zip(&cases).map(|((b, _), c)| (b, c.truth.as_str())), config.k);
        rows.push(EvalRow { model: source.name(), reranked: false, config: config.clone(), recall, mrr, n: cases.len() });
        if config.rerank {
            let (recall, mrr) = mean_metrics(
                per_case.iter().zip(&cases).map(|((_, r), c)| (r.as_ref().expect("reranked"), c.truth.as_str())),
                config.k,
            );
            rows.push(EvalRow { model: source.name(), reranked: true, config: config.clone(), recall, mrr, n: cases.len() });
        }
    }
    Ok(EvalReport {
        rows,
        provenance: Provenance { dataset_digest: json_digest(&dataset), seed: config.seed, config_digest: config.digest() },
    })
}

/// Runs every configuration of `plan` and concatenates the rows.
pub fn run_plan(plan: &EvalPlan, dataset: &[Session], ctx: &EvalContext<'_>) -> Result<EvalReport, EvalError> {
    let reports = plan.configs().iter().map(|c| run_experiment(c, dataset, ctx)).collect::<Result<Vec<_>, _>>()?;
    let mut report = EvalReport::combine(reports).ok_or(EvalError::EmptyDataset)?;
    report.provenance.config_digest = json_digest(plan);
    Ok(report)
}
