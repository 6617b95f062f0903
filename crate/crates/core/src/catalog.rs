//! Item universe: import, lookup, persistence and attribute text.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::money::Money;

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("line {line}: malformed catalog record: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: missing required field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: field `{field}` has the wrong type")]
    InvalidField { line: usize, field: String },
    #[error("line {line}: invalid price for item `{item_id}`")]
    InvalidPrice { line: usize, item_id: String },
    #[error("line {line}: duplicate item_id `{item_id}`")]
    DuplicateId { line: usize, item_id: String },
    #[error("catalog storage: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brand: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
    pub price: Money,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub extra_attrs: IndexMap<String, String>,
}

impl Item {
    pub fn new(item_id: impl Into<String>, title: impl Into<String>, price: Money) -> Self {
        Item {
            item_id: item_id.into(),
            title: title.into(),
            brand: None,
            color: None,
            price,
            extra_attrs: IndexMap::new(),
        }
    }

    pub fn with_brand(mut self, brand: impl Into<String>) -> Self {
        self.brand = Some(brand.into());
        self
    }

    pub fn with_color(mut self, color: impl Into<String>) -> Self {
        self.color = Some(color.into());
        self
    }

    pub fn with_attr(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.extra_attrs.insert(key.into(), value.into());
        self
    }

    /// Text used for attribute embeddings: title, brand, color, price with two
    /// decimals, then extra attribute values in map order. Absent or blank
    /// fields are skipped; fields are joined by single spaces.
    pub fn attribute_text(&self) -> String {
        let price = self.price.to_string();
        let mut parts: Vec<&str> = Vec::with_capacity(4 + self.extra_attrs.len());
        parts.push(&self.title);
        parts.extend(self.brand.as_deref());
        parts.extend(self.color.as_deref());
        parts.push(&price);
        parts.extend(self.extra_attrs.values().map(String::as_str));
        parts
            .iter()
            .map(|p| p.trim())
            .filter(|p| !p.is_empty())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One line of the catalog file, keys in canonical order.
    pub fn to_catalog_line(&self) -> String {
        let q = |s: &str| serde_json::to_string(s).expect("string encodes");
        let mut line = format!("{{\"item_id\":{},\"price\":{}", q(&self.item_id), self.price);
        if !self.title.is_empty() {
            line.push_str(&format!(",\"title\":{}", q(&self.title)));
        }
        if let Some(brand) = &self.brand {
            line.push_str(&format!(",\"brand\":{}", q(brand)));
        }
        if let Some(color) = &self.color {
            line.push_str(&format!(",\"color\":{}", q(color)));
        }
        if !self.extra_attrs.is_empty() {
            let attrs: Vec<String> = self
                .extra_attrs
                .iter()
                .map(|(k, v)| format!("{}:{}", q(k), q(v)))
                .collect();
            line.push_str(&format!(",\"attrs\":{{{}}}", attrs.join(",")));
        }
        line.push('}');
        line
    }
}

/// A decoded but not yet validated catalog line.
#[derive(Debug, Clone)]
pub struct RawItemRecord {
    pub line: usize,
    pub fields: Map<String, Value>,
}

/// Splits a line-delimited JSON catalog into raw records. Blank lines are
/// skipped; line numbers are 1-based.
pub fn decode_catalog(text: &str) -> Result<Vec<RawItemRecord>, CatalogError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line).map_err(|e| CatalogError::MalformedLine {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        match value {
            Value::Object(fields) => out.push(RawItemRecord { line: idx + 1, fields }),
            _ => {
                return Err(CatalogError::MalformedLine {
                    line: idx + 1,
                    reason: "expected a JSON object".into(),
                })
            }
        }
    }
    Ok(out)
}

fn optional_string(rec: &RawItemRecord, key: &str) -> Result<Option<String>, CatalogError> {
    match rec.fields.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(CatalogError::InvalidField { line: rec.line, field: key.into() }),
    }
}

fn item_from_record(rec: &RawItemRecord) -> Result<Item, CatalogError> {
    let item_id = match rec.fields.get("item_id") {
        Some(Value::String(s)) if !s.is_empty() => s.clone(),
        Some(Value::String(_)) | None | Some(Value::Null) => {
            return Err(CatalogError::MissingField { line: rec.line, field: "item_id" })
        }
        Some(_) => return Err(CatalogError::InvalidField { line: rec.line, field: "item_id".into() }),
    };
    let price = match rec.fields.get("price") {
        None | Some(Value::Null) => {
            return Err(CatalogError::MissingField { line: rec.line, field: "price" })
        }
        Some(Value::Number(n)) => n
            .as_f64()
            .and_then(Money::from_f64)
            .filter(|m| !m.is_negative())
            .ok_or_else(|| CatalogError::InvalidPrice { line: rec.line, item_id: item_id.clone() })?,
        Some(_) => {
            return Err(CatalogError::InvalidPrice { line: rec.line, item_id: item_id.clone() })
        }
    };
    let mut extra_attrs = IndexMap::new();
    match rec.fields.get("attrs") {
        None | Some(Value::Null) => {}
        Some(Value::Object(map)) => {
            for (k, v) in map {
                match v {
                    Value::String(s) => {
                        extra_attrs.insert(k.clone(), s.clone());
                    }
                    _ => {
                        return Err(CatalogError::InvalidField {
                            line: rec.line,
                            field: format!("attrs.{k}"),
                        })
                    }
                }
            }
        }
        Some(_) => return Err(CatalogError::InvalidField { line: rec.line, field: "attrs".into() }),
    }
    Ok(Item {
        item_id,
        title: optional_string(rec, "title")?.unwrap_or_default(),
        brand: optional_string(rec, "brand")?,
        color: optional_string(rec, "color")?,
        price,
        extra_attrs,
    })
}

/// Immutable, insertion-ordered item universe.
#[derive(Debug, Clone, Default)]
pub struct CatalogSnapshot {
    items: Vec<Item>,
    index: HashMap<String, usize>,
    version: u64,
}

impl CatalogSnapshot {
    pub fn from_items(items: Vec<Item>, version: u64) -> Result<Self, CatalogError> {
        let mut index = HashMap::with_capacity(items.len());
        for (pos, item) in items.iter().enumerate() {
            if item.item_id.is_empty() {
                return Err(CatalogError::MissingField { line: pos + 1, field: "item_id" });
            }
            if item.price.is_negative() {
                return Err(CatalogError::InvalidPrice { line: pos + 1, item_id: item.item_id.clone() });
            }
            if index.insert(item.item_id.clone(), pos).is_some() {
                return Err(CatalogError::DuplicateId { line: pos + 1, item_id: item.item_id.clone() });
            }
        }
        Ok(CatalogSnapshot { items, index, version })
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn iter(&self) -> impl Iterator<Item = &Item> {
        self.items.iter()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn get(&self, item_id: &str) -> Option<&Item> {
        self.index.get(item_id).map(|&i| &self.items[i])
    }

    pub fn position(&self, item_id: &str) -> Option<usize> {
        self.index.get(item_id).copied()
    }

    pub fn contains(&self, item_id: &str) -> bool {
        self.index.contains_key(item_id)
    }

    /// Distinct lowercase color values present in the catalog.
    pub fn colors(&self) -> BTreeSet<String> {
        self.items
            .iter()
            .filter_map(|i| i.color.as_deref())
            .map(|c| c.trim().to_lowercase())
            .filter(|c| !c.is_empty())
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for item in &self.items {
            out.push_str(&item.to_catalog_line());
            out.push('\n');
        }
        out
    }
}

/// Validates raw records into a snapshot with version `previous_version + 1`.
/// Any invalid record fails the whole import.
pub fn import_catalog(
    records: &[RawItemRecord],
    previous_version: u64,
) -> Result<CatalogSnapshot, CatalogError> {
    let mut items = Vec::with_capacity(records.len());
    let mut seen = HashMap::with_capacity(records.len());
    for rec in records {
        let item = item_from_record(rec)?;
        if seen.insert(item.item_id.clone(), rec.line).is_some() {
            return Err(CatalogError::DuplicateId { line: rec.line, item_id: item.item_id });
        }
        items.push(item);
    }
    CatalogSnapshot::from_items(items, previous_version + 1)
}

#[derive(Serialize, Deserialize)]
struct CatalogMeta {
    version: u64,
}

/// Single-writer persistent catalog. Readers get cheap `Arc` snapshots.
#[derive(Debug)]
pub struct CatalogStore {
    dir: PathBuf,
    current: RwLock<Arc<CatalogSnapshot>>,
    writer: Mutex<()>,
}

impl CatalogStore {
    const DATA_FILE: &'static str = "catalog.jsonl";
    const META_FILE: &'static str = "catalog.meta.json";

    pub fn open(dir: impl AsRef<Path>) -> Result<Self, CatalogError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let data = dir.join(Self::DATA_FILE);
        let snapshot = if data.exists() {
            let version = fs::read(dir.join(Self::META_FILE))
                .ok()
                .and_then(|b| serde_json::from_slice::<CatalogMeta>(&b).ok())
                .map(|m| m.version)
                .unwrap_or(1);
            let records = decode_catalog(&fs::read_to_string(&data)?)?;
            import_catalog(&records, version.saturating_sub(1))?
        } else {
            CatalogSnapshot::default()
        };
        Ok(CatalogStore {
            dir,
            current: RwLock::new(Arc::new(snapshot)),
            writer: Mutex::new(()),
        })
    }

    pub fn current(&self) -> Arc<CatalogSnapshot> {
        self.current.read().expect("catalog lock").clone()
    }

    pub fn import_records(&self, records: &[RawItemRecord]) -> Result<Arc<CatalogSnapshot>, CatalogError> {
        let _guard = self.writer.lock().expect("catalog writer lock");
        let previous = self.current().version();
        let snapshot = Arc::new(import_catalog(records, previous)?);
        write_atomic(&self.dir.join(Self::DATA_FILE), snapshot.to_jsonl().as_bytes())?;
        let meta = serde_json::to_vec(&CatalogMeta { version: snapshot.version() })
            .expect("meta encodes");
        write_atomic(&self.dir.join(Self::META_FILE), &meta)?;
        *self.current.write().expect("catalog lock") = snapshot.clone();
        Ok(snapshot)
    }

    pub fn import_text(&self, text: &str) -> Result<Arc<CatalogSnapshot>, CatalogError> {
        self.import_records(&decode_catalog(text)?)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}
