use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::LlmError;
use crate::corpus::{Document, LabelVocabulary};

const PLACEHOLDERS: [&str; 4] = ["entities", "example_text", "example_response", "input_text"];

/// System and user message templates with `{entities}`, `{example_text}`,
/// `{example_response}` and `{input_text}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub system: String,
    pub user: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            system: "Extract the following entities from the given clinical note in order of appearance. \
                     Use exact text for extractions. Do not paraphrase or overlap entities.\n\
                     The entities to extract are: {entities}. See the examples below for the expected format.\n\n\
                     # Clinical note example: {example_text}\n\n\
                     # Ideal response example: {example_response}"
                .to_string(),
            user: "# Clinical note: {input_text}".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

impl PromptTemplate {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Result<Self, LlmError> {
        let t = Self {
            system: system.into(),
            user: user.into(),
        };
        t.validate()?;
        Ok(t)
    }

    /// Reads `{"system": ..., "user": ...}`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        let t: Self = serde_json::from_str(&raw).map_err(|e| LlmError::Template(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    /// Every placeholder must occur exactly once across both templates.
    pub fn validate(&self) -> Result<(), LlmError> {
        for name in PLACEHOLDERS {
            let marker = format!("{{{name}}}");
            let n = self.system.matches(&marker).count() + self.user.matches(&marker).count();
            if n != 1 {
                return Err(LlmError::Template(format!(
                    "placeholder {marker} occurs {n} times, expected once"
                )));
            }
        }
        Ok(())
    }

    pub fn render(
        &self,
        vocab: &LabelVocabulary,
        example: &Document,
        example_response: &ExtractionResponse,
        input: &Document,
    ) -> Result<RenderedPrompt, LlmError> {
        self.validate()?;
        if let Some(label) = example_response.entities.keys().find(|l| !vocab.contains(l)) {
            return Err(LlmError::Template(format!(
                "example response uses unknown label `{label}`"
            )));
        }
        let entities = vocab.labels().join(", ");
        let response = example_response.canonical_json();
        let values = [
            entities.as_str(),
            example.text.as_str(),
            response.as_str(),
            input.text.as_str(),
        ];
        Ok(RenderedPrompt {
            system: substitute(&self.system, &values),
            user: substitute(&self.user, &values),
        })
    }
}

/// Single left-to-right pass; substituted text is never re-scanned, so braces
/// inside values come through literally.
fn substitute(template: &str, values: &[&str; 4]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'scan: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        for (name, value) in PLACEHOLDERS.iter().zip(values) {
            let marker_len = name.len() + 2;
            if tail.len() >= marker_len && tail[1..].starts_with(name) && tail[marker_len - 1..].starts_with('}') {
                out.push_str(value);
                rest = &tail[marker_len..];
                continue 'scan;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

/// Label → exact extraction strings, in order of appearance.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExtractionResponse {
    pub entities: IndexMap<String, Vec<String>>,
    pub raw: String,
    pub warnings: Vec<String>,
}

impl ExtractionResponse {
    /// The ideal response for an annotated document: labels in vocabulary
    /// order, each with its span texts sorted by offset. Labels without spans
    /// are left out.
    pub fn from_document(doc: &Document, vocab: &LabelVocabulary) -> Self {
        let mut entities = IndexMap::new();
        for label in vocab.labels() {
            let mut spans: Vec<_> = doc.entities.iter().filter(|e| &e.label == label).collect();
            if spans.is_empty() {
                continue;
            }
            spans.sort();
            entities.insert(
                label.clone(),
                spans.iter().map(|s| doc.slice(s.start, s.end).to_string()).collect(),
            );
        }
        let mut r = Self {
            entities,
            ..Self::default()
        };
        r.raw = r.canonical_json();
        r
    }

    /// Compact JSON object, keys in insertion order.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(&self.entities).expect("string map serializes")
    }
}
