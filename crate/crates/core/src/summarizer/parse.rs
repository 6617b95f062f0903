use serde_json::{Map, Value};

use super::{Category, KeywordSummary, SummarizerError};

/// True for values such as `"Not Available"` or `"n/a."`.
pub fn is_not_available(text: &str) -> bool {
    let t = text
        .trim()
        .trim_matches(|c: char| c == '"' || c == '\'' || c == '.' || c == '*' || c.is_whitespace())
        .to_ascii_lowercase();
    t == "not available" || t == "n/a"
}

fn normalize_key(key: &str) -> String {
    let trimmed = key.trim_matches(|c: char| {
        c.is_whitespace() || matches!(c, '"' | '\'' | '*' | '_' | '`' | ':' | '\u{201c}' | '\u{201d}')
    });
    trimmed.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Renders a JSON value as entry text. Nested objects become `key: value`
/// pairs joined by `"; "`, arrays are joined by `", "`. Empty and
/// not-available values become `None`.
fn flatten(value: &Value) -> Option<String> {
    match value {
        Value::Null => None,
        Value::String(s) => {
            let s = s.trim();
            (!s.is_empty() && !is_not_available(s)).then(|| s.to_string())
        }
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => Some(n.to_string()),
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().filter_map(flatten).collect();
            (!parts.is_empty()).then(|| parts.join(", "))
        }
        Value::Object(map) => {
            let parts: Vec<String> = map
                .iter()
                .filter_map(|(k, v)| flatten(v).map(|v| format!("{}: {v}", normalize_key(k))))
                .collect();
            (!parts.is_empty()).then(|| parts.join("; "))
        }
    }
}

/// Finds the first `{` from which a complete JSON object parses.
fn first_json_object(raw: &str) -> Option<Map<String, Value>> {
    raw.match_indices('{').find_map(|(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => Some(map),
            _ => None,
        }
    })
}

/// Parses a raw backend response. Only the first well-formed JSON object is
/// read; surrounding prose and code fences are kept in `raw_texts` only.
pub fn parse_summary_text(raw: &str) -> Result<KeywordSummary, SummarizerError> {
    if raw.trim().is_empty() {
        return Err(SummarizerError::SummaryParse("empty response".into()));
    }
    let object = first_json_object(raw)
        .ok_or_else(|| SummarizerError::SummaryParse("no JSON object in response".into()))?;
    if object.is_empty() {
        return Err(SummarizerError::SummaryParse("JSON object is empty".into()));
    }
    let mut summary = KeywordSummary { source_batch_count: 1, raw_texts: vec![raw.to_string()], ..Default::default() };
    for (key, value) in &object {
        let key = normalize_key(key);
        let value = flatten(value);
        match Category::from_name(&key) {
            Some(category) => {
                if summary.get(category).is_none() {
                    summary.set(category, value);
                }
            }
            None => {
                let slot = summary.extras.entry(key).or_insert(None);
                if slot.is_none() {
                    *slot = value;
                }
            }
        }
    }
    Ok(summary)
}
