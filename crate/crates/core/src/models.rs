//! Desk-scale next-item predictors and the prediction-file format used to
//! bring in rankings produced elsewhere.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::session::Session;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("cannot train on an empty session collection")]
    EmptyTrainingSet,
    #[error("model has not been trained")]
    UntrainedModel,
    #[error("prefix must contain at least one item")]
    EmptyPrefix,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: scores are not sorted in descending order")]
    UnsortedScores { line: usize },
    #[error("line {line}: item `{item_id}` appears twice")]
    DuplicateItem { line: usize, item_id: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub item_id: String,
    pub score: f64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScoredItemRepr {
    Object { item_id: String, score: f64 },
    Pair(String, f64),
}

impl From<ScoredItemRepr> for ScoredItem {
    fn from(r: ScoredItemRepr) -> Self {
        match r {
            ScoredItemRepr::Object { item_id, score } | ScoredItemRepr::Pair(item_id, score) => ScoredItem { item_id, score },
        }
    }
}

/// Top-k list for one session, best first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedPredictions {
    pub session_id: String,
    pub k: usize,
    pub entries: Vec<ScoredItem>,
}

#[derive(Deserialize)]
struct PredictionLine {
    #[serde(alias = "session")]
    session_id: String,
    k: usize,
    entries: Vec<ScoredItemRepr>,
}

impl RankedPredictions {
    /// Checks ordering, distinctness and the length bound. `line` only
    /// labels errors.
    pub fn validate(&self, line: usize) -> Result<(), ModelError> {
        if self.k == 0 {
            return Err(ModelError::MalformedLine { line, reason: "k must be at least 1".into() });
        }
        if self.entries.len() > self.k {
            return Err(ModelError::MalformedLine { line, reason: format!("{} entries exceed k = {}", self.entries.len(), self.k) });
        }
        if let Some(bad) = self.entries.iter().find(|e| !e.score.is_finite()) {
            return Err(ModelError::MalformedLine { line, reason: format!("score of `{}` is not finite", bad.item_id) });
        }
        if self.entries.windows(2).any(|w| w[0].score < w[1].score) {
            return Err(ModelError::UnsortedScores { line });
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.item_id.as_str()) {
                return Err(ModelError::DuplicateItem { line, item_id: e.item_id.clone() });
            }
        }
        Ok(())
    }

    pub fn item_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.item_id.as_str()).collect()
    }

    pub fn rank_of(&self, item_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.item_id == item_id).map(|p| p + 1)
    }

    pub fn truncated(&self, k: usize) -> RankedPredictions {
        RankedPredictions { session_id: self.session_id.clone(), k: k.min(self.k), entries: self.entries.iter().take(k).cloned().collect() }
    }
}

pub fn parse_predictions(text: &str) -> Result<Vec<RankedPredictions>, ModelError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parsed: PredictionLine =
            serde_json::from_str(raw).map_err(|e| ModelError::MalformedLine { line, reason: e.to_string() })?;
        let p = RankedPredictions {
            session_id: parsed.session_id,
            k: parsed.k,
            entries: parsed.entries.into_iter().map(Into::into).collect(),
        };
        p.validate(line)?;
        out.push(p);
    }
    Ok(out)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<RankedPredictions>, ModelError> {
    parse_predictions(&fs::read_to_string(path)?)
}

pub fn write_predictions(path: impl AsRef<Path>, predictions: &[RankedPredictions]) -> Result<(), ModelError> {
    let mut text = String::new();
    for p in predictions {
        text.push_str(&serde_json::to_string(p).expect("predictions encode"));
        text.push('\n');
    }
    crate::catalog::write_atomic(path.as_ref(), text.as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Popularity,
    Markov,
    Sknn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Popularity, ModelKind::Markov, ModelKind::Sknn];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Popularity => "popularity",
            ModelKind::Markov => "markov",
            ModelKind::Sknn => "sknn",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| format!("unknown model kind `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Neighbourhood size for session-kNN.
    pub neighbors: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams { neighbors: 100 }
    }
}

#[derive(Debug, Clone)]
enum State {
    Untrained,
    Popularity,
    Markov { transitions: HashMap<String, BTreeMap<String, u64>> },
    Sknn { sessions: Vec<BTreeSet<String>>, index: HashMap<String, Vec<usize>>, neighbors: usize },
}

#[derive(Debug, Clone)]
pub struct SessionModel {
    kind: ModelKind,
    trained_on: usize,
    /// Item frequencies; every kind keeps them for backoff.
    counts: BTreeMap<String, u64>,
    total: u64,
    state: State,
}

impl SessionModel {
    pub fn untrained(kind: ModelKind) -> Self {
        SessionModel { kind, trained_on: 0, counts: BTreeMap::new(), total: 0, state: State::Untrained }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn trained_on(&self) -> usize {
        self.trained_on
    }

    pub fn known_items(&self) -> usize {
        self.counts.len()
    }
}

/// Sequences used for training: each session's events followed by its
/// held-out next item when present.
pub fn train_model(kind: ModelKind, sessions: &[Session], params: &ModelParams) -> Result<SessionModel, ModelError> {
    let sequences: Vec<Vec<String>> = sessions.iter().map(Session::full_sequence).filter(|s| !s.is_empty()).collect();
    train_on_sequences(kind, &sequences, params)
}

pub fn train_on_sequences(kind: ModelKind, sequences: &[Vec<String>], params: &ModelParams) -> Result<SessionModel, ModelError> {
    if sequences.iter().all(|s| s.is_empty()) {
        return Err(ModelError::EmptyTrainingSet);
    }
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for item in sequences.iter().flatten() {
        *counts.entry(item.clone()).or_insert(0) += 1;
    }
    let total = counts.values().sum();
    let state = match kind {
        ModelKind::Popularity => State::Popularity,
        ModelKind::Markov => {
            let mut transitions: HashMap<String, BTreeMap<String, u64>> = HashMap::new();
            for seq in sequences {
                for pair in seq.windows(2) {
                    *transitions.entry(pair[0].clone()).or_default().entry(pair[1].clone()).or_insert(0) += 1;
                }
            }
            State::Markov { transitions }
        }
        ModelKind::Sknn => {
            let sessions: Vec<BTreeSet<String>> = sequences.iter().filter(|s| !s.is_empty()).map(|s| s.iter().cloned().collect()).collect();
            let mut index: HashMap<String, Vec<usize>> = HashMap::new();
            for (i, set) in sessions.iter().enumerate() {
                for item in set {
                    index.entry(item.clone()).or_default().push(i);
                }
            }
            State::Sknn { sessions, index, neighbors: params.neighbors.max(1) }
        }
    };
    Ok(SessionModel { kind, trained_on: sequences.iter().filter(|s| !s.is_empty()).count(), counts, total, state })
}

/// Highest score first, then item id ascending.
fn rank(mut scored: Vec<(String, f64)>, k: usize) -> Vec<ScoredItem> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored.into_iter().map(|(item_id, score)| ScoredItem { item_id, score }).collect()
}

impl SessionModel {
    fn popularity_share(&self, item: &str) -> f64 {
        self.counts[item] as f64 / (self.total as f64 + 1.0)
    }

    /// Primary scores live in `(1, 2]`; items without one are filled from
    /// popularity in `(0, 1)`, so backoff never outranks the model.
    fn with_backoff(&self, primary: HashMap<String, f64>, k: usize) -> Vec<ScoredItem> {
        let mut head: Vec<(String, f64)> = primary.into_iter().map(|(id, s)| (id, 1.0 + s.clamp(f64::MIN_POSITIVE, 1.0))).collect();
        if head.len() < k {
            let taken: HashSet<String> = head.iter().map(|(id, _)| id.clone()).collect();
            head.extend(self.counts.keys().filter(|id| !taken.contains(*id)).map(|id| (id.clone(), self.popularity_share(id))));
        }
        rank(head, k)
    }

    pub fn predict_topk(&self, session_id: &str, prefix: &[String], k: usize) -> Result<RankedPredictions, ModelError> {
        if prefix.is_empty() {
            return Err(ModelError::EmptyPrefix);
        }
        if k == 0 {
            return Err(ModelError::InvalidK);
        }
        let entries = match &self.state {
            State::Untrained => return Err(ModelError::UntrainedModel),
            State::Popularity => {
                rank(self.counts.keys().map(|id| (id.clone(), self.counts[id] as f64 / self.total as f64)).collect(), k)
            }
            State::Markov { transitions } => {
                let last = prefix.last().expect("nonempty prefix");
                let primary = match transitions.get(last) {
                    Some(next) => {
                        let out: u64 = next.values().sum();
                        next.iter().map(|(id, &c)| (id.clone(), c as f64 / out as f64)).collect()
                    }
                    None => HashMap::new(),
                };
                self.with_backoff(primary, k)
            }
            State::Sknn { sessions, index, neighbors } => {
                let query: BTreeSet<&String> = prefix.iter().collect();
                let mut overlap: HashMap<usize, usize> = HashMap::new();
                for item in &query {
                    for &s in index.get(*item).map(Vec::as_slice).unwrap_or_default() {
                        *overlap.entry(s).or_insert(0) += 1;
                    }
                }
                let mut sims: Vec<(usize, f64)> = overlap
                    .into_iter()
                    .map(|(s, shared)| (s, shared as f64 / ((query.len() * sessions[s].len()) as f64).sqrt()))
                    .collect();
                sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                sims.truncate(*neighbors);
                let mut raw: HashMap<String, f64> = HashMap::new();
                for &(s, sim) in &sims {
                    for item in &sessions[s] {
                        *raw.entry(item.clone()).or_insert(0.0) += sim;
                    }
                }
                // rescale into (0, 1] so the band split holds
                let top = raw.values().copied().fold(0.0, f64::max);
                let primary = raw.into_iter().map(|(id, s)| (id, s / top)).collect();
                self.with_backoff(primary, k)
            }
        };
        Ok(RankedPredictions { session_id: session_id.to_string(), k, entries })
    }
}
