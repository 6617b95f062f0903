use serde::{Deserialize, Serialize};

use super::SummarizerError;
use crate::digest::sha256_hex;
use crate::session::ScreenshotRef;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub categories: Vec<String>,
    pub instruction_text: String,
}

impl PromptSpec {
    pub fn digest(&self) -> String {
        sha256_hex(&self.instruction_text)
    }
}

impl Default for PromptSpec {
    fn default() -> Self {
        build_prompt(&super::default_categories()).expect("default categories are valid")
    }
}

/// Builds the keyword prompt asking what can be inferred about the user's
/// preference in each category, with unavailable categories marked as not
/// available and the answer returned as a JSON object.
pub fn build_prompt<S: AsRef<str>>(categories: &[S]) -> Result<PromptSpec, SummarizerError> {
    if categories.is_empty() {
        return Err(SummarizerError::EmptyCategoryList);
    }
    let names: Vec<String> = categories.iter().map(|c| c.as_ref().trim().to_string()).collect();
    if names.iter().any(String::is_empty) {
        return Err(SummarizerError::EmptyCategoryName);
    }
    let instruction_text = format!(
        "What can you infer from the images below with regards to a user preference in the \
         following categories? {}. Write a response that contains the above information. \
         If any of the categorical information is unavailable, mark it as not available. \
         Return the response as a JSON object keyed by category name.",
        names.join(", ")
    );
    Ok(PromptSpec { categories: names, instruction_text })
}

/// Splits `refs` into consecutive batches of `batch_size`; only the last batch
/// may be short.
pub fn batch_screenshots(refs: &[ScreenshotRef], batch_size: usize) -> Result<Vec<Vec<ScreenshotRef>>, SummarizerError> {
    if batch_size == 0 {
        return Err(SummarizerError::InvalidBatchSize);
    }
    Ok(refs.chunks(batch_size).map(<[ScreenshotRef]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::ScreenshotKind;
    use crate::summarizer::default_categories;

    fn refs(n: usize) -> Vec<ScreenshotRef> {
        (0..n)
            .map(|i| ScreenshotRef { key: format!("k{i:02}"), kind: ScreenshotKind::FullPageViewport, captured_at: i as u64 })
            .collect()
    }

    #[test]
    fn default_prompt_mentions_every_category() {
        let p = build_prompt(&default_categories()).unwrap();
        for c in default_categories() {
            assert!(p.instruction_text.contains(&c), "missing {c}");
        }
        assert!(p.instruction_text.contains("Product Characteristics"));
        assert!(p.instruction_text.contains("Promotions"));
        assert!(p.instruction_text.contains("mark it as not available"));
        assert_eq!(p, PromptSpec::default());
    }

    #[test]
    fn custom_and_invalid_categories() {
        assert!(build_prompt(&["Color"]).unwrap().instruction_text.contains("Color"));
        let empty: [&str; 0] = [];
        assert!(matches!(build_prompt(&empty), Err(SummarizerError::EmptyCategoryList)));
        assert!(matches!(build_prompt(&["  "]), Err(SummarizerError::EmptyCategoryName)));
    }

    #[test]
    fn batch_sizes() {
        let sizes = |n, b| -> Vec<usize> { batch_screenshots(&refs(n), b).unwrap().iter().map(Vec::len).collect() };
        assert_eq!(sizes(25, 10), [10, 10, 5]);
        assert_eq!(sizes(10, 10), [10]);
        assert!(sizes(0, 10).is_empty());
        assert!(matches!(batch_screenshots(&refs(3), 0), Err(SummarizerError::InvalidBatchSize)));
        let batches = batch_screenshots(&refs(25), 10).unwrap();
        assert_eq!(batches.concat(), refs(25));
    }
}
