//! Keyword summaries of screenshot batches.
//!
//! A [`PromptSpec`] is sent together with each batch of screenshots to a
//! [`SummarizerBackend`]. Raw responses are parsed into [`KeywordSummary`]
//! values and merged across batches.

mod backend;
mod parse;
mod prompt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::constraints::parse_price;
use crate::digest::json_digest;

pub use backend::{
    fixture_key, summarize_screenshots, summarize_session, BackendIdentity, MockBackend,
    RecordingBackend, SummarizeOptions, SummarizerBackend,
};
pub use parse::{is_not_available, parse_summary_text};
pub use prompt::{batch_screenshots, build_prompt, PromptSpec};

#[derive(Debug, thiserror::Error)]
pub enum SummarizerError {
    #[error("category list is empty")]
    EmptyCategoryList,
    #[error("category names must be nonempty")]
    EmptyCategoryName,
    #[error("batch size must be at least 1")]
    InvalidBatchSize,
    #[error("session has no screenshots to summarize")]
    NoScreenshots,
    #[error("summarizer backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("summarizer backend error: {0}")]
    Backend(String),
    #[error("mock fixture missing: {path}")]
    FixtureMissing { path: String },
    #[error("could not parse summary: {0}")]
    SummaryParse(String),
    #[error("batch {batch_index}: {source}")]
    Batch {
        batch_index: usize,
        #[source]
        source: Box<SummarizerError>,
    },
}

/// The eight keyword categories every summary carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    ProductCharacteristics,
    LowestPrice,
    HighestPrice,
    BrandPreference,
    ProductSpecifications,
    UserReviews,
    Comparisons,
    Promotions,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::ProductCharacteristics,
        Category::LowestPrice,
        Category::HighestPrice,
        Category::BrandPreference,
        Category::ProductSpecifications,
        Category::UserReviews,
        Category::Comparisons,
        Category::Promotions,
    ];

    pub const fn name(self) -> &'static str {
        match self {
            Category::ProductCharacteristics => "Product Characteristics",
            Category::LowestPrice => "Lowest Price",
            Category::HighestPrice => "Highest Price",
            Category::BrandPreference => "Brand Preference",
            Category::ProductSpecifications => "Product Specifications",
            Category::UserReviews => "User Reviews and Testimonials",
            Category::Comparisons => "Comparisons",
            Category::Promotions => "Promotions",
        }
    }

    /// Case-insensitive lookup of an already normalized key.
    pub fn from_name(name: &str) -> Option<Category> {
        Category::ALL.into_iter().find(|c| c.name().eq_ignore_ascii_case(name))
    }
}

pub fn default_categories() -> Vec<String> {
    Category::ALL.iter().map(|c| c.name().to_string()).collect()
}

/// Per-category preference summary. `None` marks an absent category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordSummary {
    pub entries: IndexMap<String, Option<String>>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub extras: IndexMap<String, Option<String>>,
    pub source_batch_count: usize,
    #[serde(default)]
    pub raw_texts: Vec<String>,
}

impl Default for KeywordSummary {
    fn default() -> Self {
        KeywordSummary {
            entries: Category::ALL.iter().map(|c| (c.name().to_string(), None)).collect(),
            extras: IndexMap::new(),
            source_batch_count: 0,
            raw_texts: Vec::new(),
        }
    }
}

impl KeywordSummary {
    pub fn get(&self, category: Category) -> Option<&str> {
        self.entries.get(category.name()).and_then(|v| v.as_deref())
    }

    pub fn set(&mut self, category: Category, value: Option<String>) {
        self.entries.insert(category.name().to_string(), value);
    }

    pub fn is_all_absent(&self) -> bool {
        self.entries.values().all(Option::is_none)
    }

    /// Present category values in category order joined by `". "`; the text
    /// that gets embedded for re-ranking.
    pub fn to_embedding_text(&self) -> String {
        Category::ALL
            .iter()
            .filter_map(|c| self.get(*c))
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .collect::<Vec<_>>()
            .join(". ")
    }

    pub fn digest(&self) -> String {
        json_digest(self)
    }
}

fn push_distinct(acc: &mut Vec<String>, value: &str) {
    if !acc.iter().any(|v| v == value) {
        acc.push(value.to_string());
    }
}

fn merge_text(values: &[&str]) -> Option<String> {
    let mut distinct = Vec::new();
    for v in values {
        push_distinct(&mut distinct, v);
    }
    (!distinct.is_empty()).then(|| distinct.join("; "))
}

/// Merges the price entry by numeric extreme. Ties on amount resolve to the
/// lexicographically smallest text so the result is independent of batch
/// order. Falls back to text merging when no value carries an amount.
fn merge_price(values: &[&str], pick_max: bool) -> Option<String> {
    let best = values
        .iter()
        .filter_map(|v| parse_price(v).map(|p| (p, *v)))
        .reduce(|a, b| {
            let better = if pick_max { b.0 > a.0 } else { b.0 < a.0 };
            if better || (b.0 == a.0 && b.1 < a.1) {
                b
            } else {
                a
            }
        });
    match best {
        Some((_, text)) => Some(text.to_string()),
        None => merge_text(values),
    }
}

/// Combines per-batch summaries: lowest price by minimum, highest price by
/// maximum, other categories by concatenating distinct values with `"; "`.
/// Absent values yield to any present value.
pub fn merge_summaries(parts: &[KeywordSummary]) -> KeywordSummary {
    let mut merged = KeywordSummary::default();
    for category in Category::ALL {
        let values: Vec<&str> = parts.iter().filter_map(|p| p.get(category)).collect();
        let value = match category {
            Category::LowestPrice => merge_price(&values, false),
            Category::HighestPrice => merge_price(&values, true),
            _ => merge_text(&values),
        };
        merged.set(category, value);
    }
    let mut extra_keys: Vec<&String> = Vec::new();
    for part in parts {
        for key in part.extras.keys() {
            if !extra_keys.contains(&key) {
                extra_keys.push(key);
            }
        }
    }
    for key in extra_keys {
        let values: Vec<&str> = parts
            .iter()
            .filter_map(|p| p.extras.get(key).and_then(|v| v.as_deref()))
            .collect();
        merged.extras.insert(key.clone(), merge_text(&values));
    }
    merged.source_batch_count = parts.iter().map(|p| p.source_batch_count).sum();
    merged.raw_texts = parts.iter().flat_map(|p| p.raw_texts.iter().cloned()).collect();
    merged
}
