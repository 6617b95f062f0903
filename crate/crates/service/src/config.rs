use std::env;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use screenrec_core::models::ModelKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendChoice {
    Mock,
    Live,
}

impl FromStr for BackendChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mock" => Ok(BackendChoice::Mock),
            "live" => Ok(BackendChoice::Live),
            other => Err(format!("unknown backend `{other}` (expected mock or live)")),
        }
    }
}

/// Backoff for throttled live requests: `base * factor^attempt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub base: Duration,
    pub factor: u32,
    pub max_tries: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { base: Duration::from_secs(1), factor: 2, max_tries: 5 }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        self.base * self.factor.saturating_pow(attempt)
    }
}

#[derive(Debug, Clone)]
pub struct Config {
    pub data_dir: PathBuf,
    /// Root of the mock backend's `fixture/` directory.
    pub fixtures_dir: PathBuf,
    pub backend: BackendChoice,
    pub mllm_url: String,
    pub mllm_model: String,
    pub mllm_key: Option<String>,
    pub embed_url: Option<String>,
    pub embed_key: Option<String>,
    pub embed_dim: usize,
    /// Session model used by rerank mode; trained from
    /// `<data_dir>/training/sessions.jsonl` when that file exists.
    pub session_model: ModelKind,
    /// Cap on assortment size; `None` searches all sizes.
    pub max_cardinality: Option<usize>,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    pub ui_dir: PathBuf,
}

impl Config {
    /// Defaults rooted at `data_dir`: mock backend, hash embedder.
    pub fn for_data_dir(data_dir: impl Into<PathBuf>) -> Self {
        let data_dir = data_dir.into();
        Config {
            fixtures_dir: data_dir.join("fixtures"),
            ui_dir: data_dir.join("ui"),
            data_dir,
            backend: BackendChoice::Mock,
            mllm_url: "https://api.openai.com/v1/chat/completions".into(),
            mllm_model: "gpt-4o".into(),
            mllm_key: None,
            embed_url: None,
            embed_key: None,
            embed_dim: screenrec_core::rerank::DEFAULT_DIM,
            session_model: ModelKind::Markov,
            max_cardinality: None,
            batch_size: 10,
            max_in_flight: 2,
            retry: RetryPolicy::default(),
        }
    }

    pub fn from_env() -> Result<Self, String> {
        let var = |name: &str| env::var(name).ok().filter(|v| !v.trim().is_empty());
        let mut cfg = Config::for_data_dir(var("SCREENREC_DATA_DIR").unwrap_or_else(|| "./data".into()));
        if let Some(dir) = var("SCREENREC_FIXTURES") {
            cfg.fixtures_dir = dir.into();
        }
        if let Some(dir) = var("SCREENREC_UI_DIR") {
            cfg.ui_dir = dir.into();
        }
        if let Some(b) = var("SCREENREC_BACKEND") {
            cfg.backend = b.parse()?;
        }
        if let Some(url) = var("SCREENREC_MLLM_URL") {
            cfg.mllm_url = url;
        }
        if let Some(model) = var("SCREENREC_MLLM_MODEL") {
            cfg.mllm_model = model;
        }
        cfg.mllm_key = var("SCREENREC_MLLM_KEY");
        cfg.embed_url = var("SCREENREC_EMBED_URL");
        cfg.embed_key = var("SCREENREC_EMBED_KEY");
        if let Some(m) = var("SCREENREC_SESSION_MODEL") {
            cfg.session_model = m.parse()?;
        }
        if let Some(c) = var("SCREENREC_MAX_ASSORTMENT") {
            cfg.max_cardinality = Some(c.parse().map_err(|e| format!("SCREENREC_MAX_ASSORTMENT: {e}"))?);
        }
        if let Some(n) = var("SCREENREC_BATCH_SIZE") {
            cfg.batch_size = n.parse().map_err(|e| format!("SCREENREC_BATCH_SIZE: {e}"))?;
        }
        Ok(cfg)
    }

    pub fn catalog_dir(&self) -> PathBuf {
        self.data_dir.join("catalog")
    }

    pub fn screenshot_dir(&self) -> PathBuf {
        self.data_dir.join("screenshots")
    }

    pub fn kv_dir(&self) -> PathBuf {
        self.data_dir.join("kv")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.data_dir.join("reports")
    }

    pub fn mnl_params_path(&self) -> PathBuf {
        self.data_dir.join("mnl").join("params.json")
    }

    pub fn transactions_path(&self) -> PathBuf {
        self.data_dir.join("mnl").join("transactions.jsonl")
    }

    pub fn training_sessions_path(&self) -> PathBuf {
        self.data_dir.join("training").join("sessions.jsonl")
    }

    pub fn embedding_cache_path(&self) -> PathBuf {
        self.data_dir.join("embeddings.jsonl")
    }
}
