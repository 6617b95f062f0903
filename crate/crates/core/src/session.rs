//! Browsing sessions, their screenshot references and the session dataset
//! loader.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::CatalogSnapshot;
use crate::screenshots::ScreenshotStore;

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("event timestamp {timestamp} is not after the previous event ({last})")]
    OutOfOrderTimestamp { timestamp: u64, last: u64 },
    #[error("session window must be at least 1")]
    InvalidWindow,
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: screenshot `{key}` not found in the screenshot store")]
    MissingScreenshotKey { line: usize, key: String },
    #[error("reading session dataset: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScreenshotKind {
    /// Capture of the visible browser viewport.
    #[default]
    FullPageViewport,
    /// Capture of the product image alone.
    ItemImageOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScreenshotRef {
    pub key: String,
    pub kind: ScreenshotKind,
    #[serde(default)]
    pub captured_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub item_id: String,
    /// Milliseconds since the epoch.
    pub timestamp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screenshot: Option<ScreenshotRef>,
}

impl InteractionEvent {
    pub fn new(item_id: impl Into<String>, timestamp: u64) -> Self {
        InteractionEvent { item_id: item_id.into(), timestamp, screenshot: None }
    }

    pub fn with_screenshot(mut self, key: impl Into<String>, kind: ScreenshotKind) -> Self {
        self.screenshot = Some(ScreenshotRef { key: key.into(), kind, captured_at: self.timestamp });
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub events: Vec<InteractionEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_next: Option<String>,
}

impl Session {
    pub fn new(session_id: impl Into<String>) -> Self {
        Session { session_id: session_id.into(), events: Vec::new(), ground_truth_next: None }
    }

    /// Appends `event`; timestamps must be strictly increasing.
    pub fn append_event(&mut self, event: InteractionEvent) -> Result<(), SessionError> {
        if let Some(last) = self.events.last() {
            if event.timestamp <= last.timestamp {
                return Err(SessionError::OutOfOrderTimestamp {
                    timestamp: event.timestamp,
                    last: last.timestamp,
                });
            }
        }
        self.events.push(event);
        Ok(())
    }

    pub fn item_ids(&self) -> Vec<String> {
        self.events.iter().map(|e| e.item_id.clone()).collect()
    }

    /// Prefix items followed by the ground truth, when present. Used for
    /// training session models.
    pub fn full_sequence(&self) -> Vec<String> {
        let mut seq = self.item_ids();
        seq.extend(self.ground_truth_next.iter().cloned());
        seq
    }

    pub fn screenshots(&self) -> impl Iterator<Item = &ScreenshotRef> {
        self.events.iter().filter_map(|e| e.screenshot.as_ref())
    }

    pub fn screenshots_of_kind(&self, kind: ScreenshotKind) -> Vec<ScreenshotRef> {
        self.screenshots().filter(|s| s.kind == kind).cloned().collect()
    }

    pub fn is_evaluable(&self) -> bool {
        !self.events.is_empty() && self.ground_truth_next.is_some()
    }

    /// Keeps the final `min(last_m, len)` events; the ground truth is untouched.
    pub fn truncate(&self, last_m: usize) -> Result<Session, SessionError> {
        if last_m == 0 {
            return Err(SessionError::InvalidWindow);
        }
        let start = self.events.len().saturating_sub(last_m);
        Ok(Session {
            session_id: self.session_id.clone(),
            events: self.events[start..].to_vec(),
            ground_truth_next: self.ground_truth_next.clone(),
        })
    }

    /// Items referenced by the session (prefix and ground truth) that the
    /// catalog does not know.
    pub fn unknown_items(&self, catalog: &CatalogSnapshot) -> Vec<String> {
        let mut seen = HashSet::new();
        self.full_sequence()
            .into_iter()
            .filter(|id| !catalog.contains(id) && seen.insert(id.clone()))
            .collect()
    }
}

#[derive(Debug, Deserialize)]
struct SessionLine {
    session_id: String,
    items: Vec<String>,
    #[serde(default)]
    screenshots: Option<Vec<Option<ScreenshotLine>>>,
    #[serde(default)]
    timestamps: Option<Vec<u64>>,
}

#[derive(Debug, Deserialize)]
struct ScreenshotLine {
    key: String,
    #[serde(default)]
    kind: ScreenshotKind,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions<'a> {
    /// Fail on screenshot keys absent from `store`.
    pub strict: bool,
    pub store: Option<&'a ScreenshotStore>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExcludedSession {
    pub line: usize,
    pub session_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedDataset {
    pub sessions: Vec<Session>,
    pub excluded: Vec<ExcludedSession>,
}

impl LoadedDataset {
    /// Warns about sessions referencing items missing from `catalog`.
    pub fn unknown_item_report(&self, catalog: &CatalogSnapshot) -> Vec<(String, Vec<String>)> {
        self.sessions
            .iter()
            .filter_map(|s| {
                let unknown = s.unknown_items(catalog);
                (!unknown.is_empty()).then(|| (s.session_id.clone(), unknown))
            })
            .collect()
    }
}

pub fn load_session_dataset(path: impl AsRef<Path>, opts: &LoadOptions<'_>) -> Result<LoadedDataset, SessionError> {
    parse_session_dataset(&fs::read_to_string(path)?, opts)
}

/// Parses the line-delimited session format. The final item of each line is
/// the ground truth and the rest becomes the event prefix; lines with fewer
/// than two items are excluded and reported.
pub fn parse_session_dataset(text: &str, opts: &LoadOptions<'_>) -> Result<LoadedDataset, SessionError> {
    let mut out = LoadedDataset::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| SessionError::MalformedLine { line, reason };
        let parsed: SessionLine = serde_json::from_str(raw).map_err(|e| malformed(e.to_string()))?;
        let n = parsed.items.len();
        if let Some(shots) = &parsed.screenshots {
            if shots.len() != n {
                return Err(malformed(format!("{} screenshots for {} items", shots.len(), n)));
            }
        }
        let timestamps = match parsed.timestamps {
            Some(ts) => {
                if ts.len() != n {
                    return Err(malformed(format!("{} timestamps for {} items", ts.len(), n)));
                }
                if ts.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(malformed("timestamps are not strictly increasing".into()));
                }
                ts
            }
            None => (0..n as u64).collect(),
        };
        if opts.strict {
            if let (Some(store), Some(shots)) = (opts.store, &parsed.screenshots) {
                for shot in shots.iter().flatten() {
                    if !store.contains(&shot.key) {
                        return Err(SessionError::MissingScreenshotKey { line, key: shot.key.clone() });
                    }
                }
            }
        }
        if n < 2 {
            out.excluded.push(ExcludedSession {
                line,
                session_id: parsed.session_id,
                reason: format!("{n} item(s); at least 2 are needed for a prefix and a ground truth"),
            });
            continue;
        }
        let mut shots = parsed.screenshots.unwrap_or_default().into_iter();
        let mut events = Vec::with_capacity(n - 1);
        let mut items = parsed.items;
        let truth = items.pop();
        for (item_id, &timestamp) in items.into_iter().zip(&timestamps) {
            if item_id.is_empty() {
                return Err(malformed("empty item_id".into()));
            }
            let screenshot = shots.next().flatten().map(|s| ScreenshotRef {
                key: s.key,
                kind: s.kind,
                captured_at: timestamp,
            });
            if let Some(s) = &screenshot {
                if s.key.is_empty() {
                    return Err(malformed("empty screenshot key".into()));
                }
            }
            events.push(InteractionEvent { item_id, timestamp, screenshot });
        }
        out.sessions.push(Session { session_id: parsed.session_id, events, ground_truth_next: truth });
    }
    Ok(out)
}
