use indexmap::IndexMap;
use log::warn;
use serde_json::Value;

use super::{ExtractionResponse, LlmError};
use crate::corpus::LabelVocabulary;

/// Body of the first fenced block, or the whole text when there is no fence.
fn strip_fences(raw: &str) -> &str {
    let Some(open) = raw.find("```") else {
        return raw;
    };
    let after = &raw[open + 3..];
    // Skip the info string (`json`, ...) up to the end of the fence line.
    let body = after.find('\n').map_or(after, |nl| &after[nl + 1..]);
    body.find("```").map_or(body, |close| &body[..close])
}

/// First JSON object in `text`, trying each `{` in turn.
fn first_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    text.match_indices('{').find_map(|(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => Some(map),
            _ => None,
        }
    })
}

fn coerce(value: Value) -> Vec<String> {
    match value {
        Value::Null => Vec::new(),
        Value::String(s) => vec![s],
        Value::Array(items) => items
            .into_iter()
            .filter_map(|v| match v {
                Value::String(s) => Some(s),
                Value::Null => None,
                other => Some(other.to_string()),
            })
            .collect(),
        other => vec![other.to_string()],
    }
}

/// Tolerant parse of a model reply into label → extractions.
///
/// Code fences are stripped and the first JSON object is used. Unknown labels
/// are dropped with a warning; scalar values become one-item lists.
pub fn parse_response(raw: &str, vocab: &LabelVocabulary) -> Result<ExtractionResponse, LlmError> {
    let object = first_object(strip_fences(raw))
        .or_else(|| first_object(raw))
        .ok_or(LlmError::NoJsonObject)?;
    let mut entities = IndexMap::new();
    let mut warnings = Vec::new();
    for (label, value) in object {
        if !vocab.contains(&label) {
            let msg = format!("dropped unknown label `{label}`");
            warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        entities.entry(label).or_insert_with(Vec::new).extend(coerce(value));
    }
    Ok(ExtractionResponse {
        entities,
        raw: raw.to_string(),
        warnings,
    })
}
