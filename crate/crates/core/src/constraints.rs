//! Constraint decomposition: price parsing, color extraction, validation and
//! the function-call schema used by LLM-based decomposition.

use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::catalog::{CatalogSnapshot, Item};
use crate::money::Money;
use crate::summarizer::{is_not_available, Category, KeywordSummary};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lowest_price: Option<Money>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub highest_price: Option<Money>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
}

impl ConstraintSet {
    pub fn is_empty(&self) -> bool {
        self.lowest_price.is_none() && self.highest_price.is_none() && self.color.is_none()
    }

    /// Present fields of `overrides` replace the corresponding fields.
    pub fn overridden_by(&self, overrides: &ConstraintSet) -> ConstraintSet {
        ConstraintSet {
            lowest_price: overrides.lowest_price.or(self.lowest_price),
            highest_price: overrides.highest_price.or(self.highest_price),
            color: overrides.color.clone().or_else(|| self.color.clone()),
        }
    }

    /// Inclusive price band plus whole-word, case-insensitive color match.
    pub fn admits(&self, item: &Item) -> bool {
        if self.lowest_price.is_some_and(|lo| item.price < lo) {
            return false;
        }
        if self.highest_price.is_some_and(|hi| item.price > hi) {
            return false;
        }
        match &self.color {
            None => true,
            Some(color) => item.color.as_deref().is_some_and(|c| contains_phrase(c, color)),
        }
    }
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Whole-word, case-insensitive containment of `phrase` in `text`.
pub fn contains_phrase(text: &str, phrase: &str) -> bool {
    let hay = words(text);
    let needle = words(phrase);
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle.as_slice())
}

fn amount_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?P<pre>[$£€¥]\s*)?(?P<num>\d{1,3}(?:,\d{3})+(?:\.\d+)?|\d+(?:\.\d+)?|\.\d+)(?P<post>\s*[$£€¥])?")
            .expect("valid amount regex")
    })
}

/// Extracts the first monetary amount in `text`. Amounts adjacent to a
/// currency symbol take precedence over bare numbers; thousands separators
/// are dropped. `None` when there is no amount or the text is a
/// not-available marker.
pub fn parse_price(text: &str) -> Option<Money> {
    if is_not_available(text) {
        return None;
    }
    let mut first_bare = None;
    for caps in amount_regex().captures_iter(text) {
        let num = caps.name("num").expect("num group").as_str();
        if caps.name("pre").is_some() || caps.name("post").is_some() {
            return Money::parse_decimal(&num.replace(',', ""));
        }
        if first_bare.is_none() {
            first_bare = Some(num.replace(',', ""));
        }
    }
    first_bare.and_then(|n| Money::parse_decimal(&n))
}

const BASE_COLORS: &[&str] = &[
    "black", "white", "grey", "gray", "silver", "red", "maroon", "burgundy", "orange", "yellow", "gold",
    "green", "olive", "teal", "turquoise", "blue", "navy", "purple", "violet", "lilac", "pink", "brown",
    "beige", "tan", "khaki", "cream", "ivory",
];

const SYNONYMS: &[(&str, &str)] = &[
    ("teal", "green"),
    ("olive", "green"),
    ("turquoise", "blue"),
    ("navy", "blue"),
    ("maroon", "red"),
    ("burgundy", "red"),
    ("violet", "purple"),
    ("lilac", "purple"),
    ("grey", "gray"),
    ("ivory", "white"),
    ("cream", "white"),
];

/// Color terms recognized in summary text.
#[derive(Debug, Clone)]
pub struct ColorVocabulary {
    terms: Vec<Vec<String>>,
    synonyms: Option<HashMap<String, String>>,
}

impl Default for ColorVocabulary {
    fn default() -> Self {
        Self::builtin()
    }
}

impl ColorVocabulary {
    pub fn builtin() -> Self {
        let mut vocab = ColorVocabulary { terms: Vec::new(), synonyms: None };
        for c in BASE_COLORS {
            vocab.add(c);
        }
        vocab
    }

    /// Built-in colors plus every color value in `catalog`.
    pub fn for_catalog(catalog: &CatalogSnapshot) -> Self {
        let mut vocab = Self::builtin();
        for c in catalog.colors() {
            vocab.add(&c);
        }
        vocab
    }

    pub fn add(&mut self, term: &str) {
        let w = words(term);
        if !w.is_empty() && !self.terms.contains(&w) {
            self.terms.push(w);
        }
    }

    /// Maps shades onto base colors (`teal` becomes `green`). Off by default.
    pub fn with_synonyms(mut self) -> Self {
        self.synonyms = Some(SYNONYMS.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect());
        self
    }

    /// Earliest whole-word color mention in `text`; the longest term wins at
    /// a given position.
    pub fn first_match(&self, text: &str) -> Option<String> {
        let hay = words(text);
        for start in 0..hay.len() {
            let best = self
                .terms
                .iter()
                .filter(|t| hay[start..].starts_with(t))
                .max_by_key(|t| t.len());
            if let Some(term) = best {
                let term = term.join(" ");
                return Some(match &self.synonyms {
                    Some(map) => map.get(&term).cloned().unwrap_or(term),
                    None => term,
                });
            }
        }
        None
    }
}

/// Reads the price band from the price categories and the first color
/// mentioned under product characteristics.
pub fn decompose(summary: &KeywordSummary, colors: &ColorVocabulary) -> ConstraintSet {
    ConstraintSet {
        lowest_price: summary.get(Category::LowestPrice).and_then(parse_price),
        highest_price: summary.get(Category::HighestPrice).and_then(parse_price),
        color: summary.get(Category::ProductCharacteristics).and_then(|t| colors.first_match(t)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationStatus {
    Valid,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IssueCode {
    RangeViolation,
    ConsistencyViolation,
    /// Informational: the set is valid but no catalog item satisfies it.
    ZeroMatch,
}

impl fmt::Display for IssueCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            IssueCode::RangeViolation => "RangeViolation",
            IssueCode::ConsistencyViolation => "ConsistencyViolation",
            IssueCode::ZeroMatch => "ZeroMatch",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub code: IssueCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub status: ValidationStatus,
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.status == ValidationStatus::Valid
    }

    pub fn has(&self, code: IssueCode) -> bool {
        self.issues.iter().any(|i| i.code == code)
    }
}

/// Range and consistency checks. A set that no catalog item satisfies stays
/// valid but carries a `ZeroMatch` issue.
pub fn validate(constraints: &ConstraintSet, catalog: &CatalogSnapshot) -> ValidationReport {
    let mut issues = Vec::new();
    for (name, value) in [("lowest_price", constraints.lowest_price), ("highest_price", constraints.highest_price)] {
        if let Some(v) = value.filter(|v| v.is_negative()) {
            issues.push(Issue { code: IssueCode::RangeViolation, message: format!("{name} must be nonnegative, got {v}") });
        }
    }
    if constraints.color.as_deref().is_some_and(|c| words(c).is_empty()) {
        issues.push(Issue { code: IssueCode::RangeViolation, message: "color must contain at least one word".into() });
    }
    if let (Some(lo), Some(hi)) = (constraints.lowest_price, constraints.highest_price) {
        if lo > hi {
            issues.push(Issue {
                code: IssueCode::ConsistencyViolation,
                message: format!("lowest_price {lo} exceeds highest_price {hi}"),
            });
        }
    }
    let status = if issues.is_empty() { ValidationStatus::Valid } else { ValidationStatus::Rejected };
    if status == ValidationStatus::Valid && !catalog.iter().any(|item| constraints.admits(item)) {
        issues.push(Issue { code: IssueCode::ZeroMatch, message: "no catalog item satisfies the constraints".into() });
    }
    ValidationReport { status, issues }
}

pub const FUNCTION_NAME: &str = "get_user_recommendations";

/// Function-call schema offered to an LLM for decomposition.
pub fn function_schema() -> Value {
    json!({
        "name": FUNCTION_NAME,
        "description": "Generate dynamic recommendations based on the summary of user behavior",
        "parameters": {
            "type": "object",
            "properties": {
                "lowest_price": {"type": "number", "description": "get lowest price preference of user."},
                "highest_price": {"type": "number", "description": "get highest price preference of user."},
                "color": {"type": "string", "description": "get color preference of user"}
            }
        }
    })
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("function arguments are not valid JSON: {0}")]
    Json(String),
    #[error("function arguments must be a JSON object")]
    NotAnObject,
    #[error("unexpected argument `{0}`")]
    UnknownField(String),
    #[error("argument `{0}` has the wrong type")]
    WrongType(&'static str),
}

/// Checks LLM function-call arguments against the schema and converts them.
pub fn constraints_from_function_args(arguments: &str) -> Result<ConstraintSet, SchemaError> {
    let value: Value = serde_json::from_str(arguments).map_err(|e| SchemaError::Json(e.to_string()))?;
    let Value::Object(map) = value else {
        return Err(SchemaError::NotAnObject);
    };
    let mut out = ConstraintSet::default();
    for (key, v) in map {
        match key.as_str() {
            "lowest_price" | "highest_price" => {
                let field = if key == "lowest_price" { "lowest_price" } else { "highest_price" };
                let money = match v {
                    Value::Null => None,
                    Value::Number(n) => Some(n.as_f64().and_then(Money::from_f64).ok_or(SchemaError::WrongType(field))?),
                    _ => return Err(SchemaError::WrongType(field)),
                };
                if field == "lowest_price" {
                    out.lowest_price = money;
                } else {
                    out.highest_price = money;
                }
            }
            "color" => {
                out.color = match v {
                    Value::Null => None,
                    Value::String(s) if s.trim().is_empty() || is_not_available(&s) => None,
                    Value::String(s) => Some(s.trim().to_lowercase()),
                    _ => return Err(SchemaError::WrongType("color")),
                }
            }
            _ => return Err(SchemaError::UnknownField(key)),
        }
    }
    Ok(out)
}
