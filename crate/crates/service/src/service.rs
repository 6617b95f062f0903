//! The recommendation pipeline: session events, cached summarization,
//! constraint decomposition and validation, then assortment optimization or
//! re-ranking.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use screenrec_core::catalog::{CatalogError, CatalogSnapshot, CatalogStore};
use screenrec_core::choice::{
    estimate_mnl, mnl_probability, optimize_assortment, ChoiceError, EstimationOptions, FeasibleSpec, MnlParameters, Transaction,
};
use screenrec_core::constraints::{decompose, validate, ColorVocabulary, ConstraintSet, ValidationReport};
use screenrec_core::digest::sha256_hex;
use screenrec_core::models::{train_model, ModelError, ModelParams, SessionModel};
use screenrec_core::rerank::{rerank_topk, CachedEmbedder, EmbeddingProvider, HashEmbedder, RerankError};
use screenrec_core::screenshots::ScreenshotStore;
use screenrec_core::session::{load_session_dataset, InteractionEvent, LoadOptions, ScreenshotKind, Session, SessionError};
use screenrec_core::summarizer::{
    build_prompt, default_categories, summarize_session, KeywordSummary, MockBackend, PromptSpec, SummarizeOptions, SummarizerBackend,
    SummarizerError,
};
use screenrec_core::Money;

use crate::config::{BackendChoice, Config};
use crate::live::{LiveBackend, LiveEmbedder};
use crate::store::KvStore;

const SESSIONS: &str = "sessions";
const SUMMARIES: &str = "summaries";
const OVERRIDES: &str = "overrides";
const RESPONSES: &str = "responses";

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("session `{0}` not found")]
    SessionNotFound(String),
    #[error("session `{0}` already exists")]
    SessionExists(String),
    #[error("constraints rejected: {}", .0.issues.iter().map(|i| format!("{}: {}", i.code, i.message)).collect::<Vec<_>>().join("; "))]
    ValidationRejected(ValidationReport),
    #[error("summarizer backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("rerank mode needs a session model; none is configured")]
    NoModelConfigured,
    #[error("session `{0}` has no events to rank from")]
    EmptySession(String),
    #[error("invalid request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Summarizer(SummarizerError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Choice(#[from] ChoiceError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Rerank(#[from] RerankError),
    #[error("storage error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<SummarizerError> for ServiceError {
    fn from(e: SummarizerError) -> Self {
        match e {
            SummarizerError::BackendUnavailable(reason) => ServiceError::BackendUnavailable(reason),
            other => ServiceError::Summarizer(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Assortment,
    Rerank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationItem {
    pub item_id: String,
    pub title: String,
    pub price: Money,
    /// Cosine similarity in rerank mode; share of expected revenue in
    /// assortment mode.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationResponse {
    pub session_id: String,
    pub mode: Mode,
    pub items: Vec<RecommendationItem>,
    pub constraints_used: ConstraintSet,
    pub summary_digest: String,
    /// Expected revenue of the assortment (assortment mode only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_revenue: Option<f64>,
    /// Milliseconds since the epoch.
    pub generated_at: u64,
}

/// Summary cache key: SHA-256 over the prompt digest and the sorted
/// screenshot keys.
pub fn cache_key<S: AsRef<str>>(screenshot_keys: &[S], prompt_digest: &str) -> String {
    let mut keys: Vec<&str> = screenshot_keys.iter().map(AsRef::as_ref).collect();
    keys.sort_unstable();
    sha256_hex(format!("{prompt_digest}\n{}", keys.join(",")).as_bytes())
}

fn now_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// A new event as submitted by a client.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EventRequest {
    pub item_id: String,
    #[serde(default)]
    pub timestamp: Option<u64>,
    #[serde(default)]
    pub screenshot_key: Option<String>,
    #[serde(default)]
    pub kind: Option<ScreenshotKind>,
}

pub struct Service {
    config: Config,
    catalog: CatalogStore,
    screenshots: ScreenshotStore,
    kv: KvStore,
    backend: Arc<dyn SummarizerBackend>,
    embedder: Arc<dyn EmbeddingProvider>,
    prompt: PromptSpec,
    model: RwLock<Option<Arc<SessionModel>>>,
    mnl: RwLock<Option<MnlParameters>>,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl Service {
    /// Builds the backend and embedder the configuration asks for.
    pub fn from_config(config: Config) -> Result<Self, ServiceError> {
        let screenshots = ScreenshotStore::open(config.screenshot_dir())?;
        let backend: Arc<dyn SummarizerBackend> = match config.backend {
            BackendChoice::Mock => Arc::new(MockBackend::new(&config.fixtures_dir)),
            BackendChoice::Live => Arc::new(LiveBackend::from_config(&config, screenshots.clone())),
        };
        let embedder: Arc<dyn EmbeddingProvider> = match &config.embed_url {
            Some(url) => Arc::new(CachedEmbedder::with_file(
                LiveEmbedder::new(url.clone(), config.embed_key.clone(), config.retry),
                config.embedding_cache_path(),
            )?),
            None => Arc::new(HashEmbedder { dim: config.embed_dim }),
        };
        Self::with_parts(config, backend, embedder)
    }

    pub fn with_parts(
        config: Config,
        backend: Arc<dyn SummarizerBackend>,
        embedder: Arc<dyn EmbeddingProvider>,
    ) -> Result<Self, ServiceError> {
        let service = Service {
            catalog: CatalogStore::open(config.catalog_dir())?,
            screenshots: ScreenshotStore::open(config.screenshot_dir())?,
            kv: KvStore::open(config.kv_dir())?,
            prompt: build_prompt(&default_categories()).expect("default categories are valid"),
            backend,
            embedder,
            model: RwLock::new(None),
            mnl: RwLock::new(None),
            locks: Mutex::new(HashMap::new()),
            config,
        };
        service.load_models()?;
        Ok(service)
    }

    /// Picks up MNL parameters and training sessions from the data directory.
    fn load_models(&self) -> Result<(), ServiceError> {
        let params_path = self.config.mnl_params_path();
        let tx_path = self.config.transactions_path();
        if params_path.is_file() {
            self.set_mnl(MnlParameters::load(&params_path)?);
        } else if tx_path.is_file() {
            let transactions = Transaction::parse_jsonl(&std::fs::read_to_string(&tx_path)?)?;
            let estimate = estimate_mnl(&transactions, &EstimationOptions::default())?;
            for c in &estimate.clamped {
                tracing::info!(item = %c.item_id, raw = c.raw_weight, clamped = c.clamped_to, "estimated weight clamped");
            }
            self.set_mnl(estimate.params);
        }
        let train_path = self.config.training_sessions_path();
        if train_path.is_file() {
            let data = load_session_dataset(&train_path, &LoadOptions::default())?;
            let model = train_model(self.config.session_model, &data.sessions, &ModelParams::default())?;
            tracing::info!(kind = %model.kind(), sessions = model.trained_on(), "session model trained");
            self.set_session_model(model);
        }
        Ok(())
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn catalog(&self) -> Arc<CatalogSnapshot> {
        self.catalog.current()
    }

    pub fn screenshots(&self) -> &ScreenshotStore {
        &self.screenshots
    }

    pub fn prompt(&self) -> &PromptSpec {
        &self.prompt
    }

    pub fn backend(&self) -> &dyn SummarizerBackend {
        self.backend.as_ref()
    }

    pub fn embedder(&self) -> &dyn EmbeddingProvider {
        self.embedder.as_ref()
    }

    pub fn set_session_model(&self, model: SessionModel) {
        *self.model.write().expect("model lock") = Some(Arc::new(model));
    }

    pub fn set_mnl(&self, params: MnlParameters) {
        *self.mnl.write().expect("mnl lock") = Some(params);
    }

    pub fn import_catalog_text(&self, text: &str) -> Result<Arc<CatalogSnapshot>, ServiceError> {
        Ok(self.catalog.import_text(text)?)
    }

    pub fn import_catalog_file(&self, path: &Path) -> Result<Arc<CatalogSnapshot>, ServiceError> {
        self.import_catalog_text(&std::fs::read_to_string(path)?)
    }

    fn session_lock(&self, session_id: &str) -> Arc<Mutex<()>> {
        self.locks.lock().expect("lock table").entry(session_id.to_string()).or_default().clone()
    }

    pub fn create_session(&self, session_id: Option<String>) -> Result<Session, ServiceError> {
        let id = session_id.unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
        if id.trim().is_empty() {
            return Err(ServiceError::BadRequest("session_id must not be empty".into()));
        }
        let lock = self.session_lock(&id);
        let _guard = lock.lock().expect("session lock");
        if self.kv.contains(SESSIONS, &id) {
            return Err(ServiceError::SessionExists(id));
        }
        let session = Session::new(id.clone());
        self.kv.put(SESSIONS, &id, &session)?;
        Ok(session)
    }

    /// Stores a whole session (used to seed the store from session files).
    pub fn put_session(&self, session: &Session) -> Result<(), ServiceError> {
        let lock = self.session_lock(&session.session_id);
        let _guard = lock.lock().expect("session lock");
        Ok(self.kv.put(SESSIONS, &session.session_id, session)?)
    }

    pub fn session(&self, session_id: &str) -> Result<Session, ServiceError> {
        self.kv.get(SESSIONS, session_id)?.ok_or_else(|| ServiceError::SessionNotFound(session_id.to_string()))
    }

    pub fn append_event(&self, session_id: &str, event: EventRequest) -> Result<Session, ServiceError> {
        if event.item_id.trim().is_empty() {
            return Err(ServiceError::BadRequest("item_id must not be empty".into()));
        }
        let lock = self.session_lock(session_id);
        let _guard = lock.lock().expect("session lock");
        let mut session = self.session(session_id)?;
        let after_last = session.events.last().map_or(0, |e| e.timestamp + 1);
        let timestamp = event.timestamp.unwrap_or_else(|| now_millis().max(after_last));
        let mut ev = InteractionEvent::new(event.item_id, timestamp);
        if let Some(key) = event.screenshot_key {
            if !self.screenshots.contains(&key) {
                return Err(ServiceError::BadRequest(format!("screenshot `{key}` is not in the store")));
            }
            ev = ev.with_screenshot(key, event.kind.unwrap_or_default());
        }
        session.append_event(ev)?;
        self.kv.put(SESSIONS, session_id, &session)?;
        Ok(session)
    }

    pub fn put_overrides(&self, session_id: &str, overrides: &ConstraintSet) -> Result<ValidationReport, ServiceError> {
        let lock = self.session_lock(session_id);
        let _guard = lock.lock().expect("session lock");
        self.session(session_id)?;
        let report = validate(overrides, &self.catalog());
        if !report.is_valid() {
            return Err(ServiceError::ValidationRejected(report));
        }
        self.kv.put(OVERRIDES, session_id, overrides)?;
        Ok(report)
    }

    /// Summary of all the session's screenshots, from cache when possible.
    /// `None` when the session has no screenshots.
    pub fn summary(&self, session_id: &str) -> Result<Option<KeywordSummary>, ServiceError> {
        let lock = self.session_lock(session_id);
        let _guard = lock.lock().expect("session lock");
        let session = self.session(session_id)?;
        self.summary_of(&session)
    }

    fn summary_of(&self, session: &Session) -> Result<Option<KeywordSummary>, ServiceError> {
        let keys: Vec<&str> = session.screenshots().map(|s| s.key.as_str()).collect();
        if keys.is_empty() {
            return Ok(None);
        }
        let key = cache_key(&keys, &self.prompt.digest());
        if let Some(hit) = self.kv.get::<KeywordSummary>(SUMMARIES, &key)? {
            return Ok(Some(hit));
        }
        let options = SummarizeOptions { batch_size: self.config.batch_size, max_in_flight: self.config.max_in_flight };
        let summary = summarize_session(session, self.backend.as_ref(), &self.prompt, options)?;
        self.kv.put(SUMMARIES, &key, &summary)?;
        Ok(Some(summary))
    }

    pub fn last_response(&self, session_id: &str) -> Result<Option<RecommendationResponse>, ServiceError> {
        Ok(self.kv.get(RESPONSES, session_id)?)
    }

    fn mnl_for(&self, catalog: &CatalogSnapshot) -> MnlParameters {
        match &*self.mnl.read().expect("mnl lock") {
            Some(params) => params.clone(),
            None => MnlParameters::uniform(catalog, 0.5),
        }
    }

    /// Runs the full pipeline for one session and persists the response.
    /// `k` bounds the list in rerank mode; assortment mode returns the whole
    /// optimal assortment.
    pub fn orchestrate(
        &self,
        session_id: &str,
        mode: Mode,
        k: usize,
        overrides: Option<&ConstraintSet>,
    ) -> Result<RecommendationResponse, ServiceError> {
        if k == 0 {
            return Err(ServiceError::BadRequest("k must be at least 1".into()));
        }
        let lock = self.session_lock(session_id);
        let _guard = lock.lock().expect("session lock");
        let session = self.session(session_id)?;
        let catalog = self.catalog();
        let summary = self.summary_of(&session)?;

        let decomposed = summary.as_ref().map(|s| decompose(s, &ColorVocabulary::for_catalog(&catalog))).unwrap_or_default();
        let stored: Option<ConstraintSet> = self.kv.get(OVERRIDES, session_id)?;
        let mut constraints = decomposed;
        if let Some(o) = &stored {
            constraints = constraints.overridden_by(o);
        }
        if let Some(o) = overrides {
            constraints = constraints.overridden_by(o);
        }
        if !constraints.is_empty() {
            let report = validate(&constraints, &catalog);
            if !report.is_valid() {
                return Err(ServiceError::ValidationRejected(report));
            }
        }

        let summary = summary.unwrap_or_default();
        let (items, expected_revenue) = match mode {
            Mode::Assortment => {
                let params = self.mnl_for(&catalog);
                let spec = FeasibleSpec { constraints: constraints.clone(), max_cardinality: self.config.max_cardinality };
                let best = optimize_assortment(&params, &catalog, &spec)?;
                let mut items = Vec::with_capacity(best.items.len());
                for id in &best.items {
                    let item = catalog.get(id).expect("optimizer returns catalog items");
                    let share = if best.revenue > 0.0 {
                        item.price.to_f64() * mnl_probability(&params, &best.items, id)? / best.revenue
                    } else {
                        0.0
                    };
                    items.push(RecommendationItem { item_id: id.clone(), title: item.title.clone(), price: item.price, score: share });
                }
                items.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.item_id.cmp(&b.item_id)));
                (items, Some(best.revenue))
            }
            Mode::Rerank => {
                let model = self.model.read().expect("model lock").clone().ok_or(ServiceError::NoModelConfigured)?;
                let prefix = session.item_ids();
                if prefix.is_empty() {
                    return Err(ServiceError::EmptySession(session_id.to_string()));
                }
                let base = model.predict_topk(session_id, &prefix, k)?;
                let ranked = rerank_topk(&base, &summary, &catalog, self.embedder.as_ref())?;
                let items = ranked
                    .entries
                    .into_iter()
                    .map(|e| {
                        let (title, price) = catalog.get(&e.item_id).map_or((String::new(), Money::from_cents(0)), |i| (i.title.clone(), i.price));
                        RecommendationItem { item_id: e.item_id, title, price, score: e.score }
                    })
                    .collect();
                (items, None)
            }
        };
        let response = RecommendationResponse {
            session_id: session_id.to_string(),
            mode,
            items,
            constraints_used: constraints,
            summary_digest: summary.digest(),
            expected_revenue,
            generated_at: now_millis(),
        };
        self.kv.put(RESPONSES, session_id, &response)?;
        Ok(response)
    }
}

