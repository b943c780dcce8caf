//! Standoff-annotated corpus: documents, label vocabulary, the reference
//! tokenizer and the IO/BIO tag-matrix codec.
//!
//! All offsets are counted in Unicode scalar values (Rust `char`s), so a
//! corpus exported by Python tooling (`text[start:end]`) loads unchanged.

mod codec;
mod tokenize;
mod vocab;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use codec::{decode, encode, project_spans, snap_spans, TagMatrix, TagMatrixRecord};
pub use tokenize::{tokenize, Token};
pub use vocab::{BioTag, LabelVocabulary, Scheme};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON at line {line}: {message}")]
    Json { line: usize, message: String },
    #[error("span start ≥ end at line {line} ({start}..{end})")]
    EmptySpan { line: usize, start: usize, end: usize },
    #[error("span {start}..{end} out of bounds for text of length {len} at line {line}")]
    OutOfBounds {
        line: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("unknown label `{label}` at line {line}")]
    UnknownLabel { line: usize, label: String },
    #[error("duplicate document id `{id}` at line {line}")]
    DuplicateId { line: usize, id: String },
    #[error("overlapping `{label}` spans {first:?} and {second:?} at line {line}")]
    SameLabelOverlap {
        line: usize,
        label: String,
        first: (usize, usize),
        second: (usize, usize),
    },
    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),
}

/// Character-offset entity annotation, `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, label: impl Into<String>) -> Self {
        Self {
            start,
            end,
            label: label.into(),
        }
    }

    pub fn overlaps(&self, start: usize, end: usize) -> bool {
        self.start < end && start < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub entities: Vec<EntitySpan>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, entities: Vec<EntitySpan>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            entities,
        }
    }

    /// Text length in characters.
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    /// Substring by character offsets. Panics when out of range.
    pub fn slice(&self, start: usize, end: usize) -> &str {
        char_slice(&self.text, start, end)
    }

    /// Distinct labels annotated in this document.
    pub fn label_set(&self) -> BTreeSet<&str> {
        self.entities.iter().map(|e| e.label.as_str()).collect()
    }

    /// Checks the document invariants. `line` is only used for error reporting.
    pub fn validate(&self, vocab: &LabelVocabulary, line: usize) -> Result<(), CorpusError> {
        let len = self.char_len();
        for span in &self.entities {
            if span.start >= span.end {
                return Err(CorpusError::EmptySpan {
                    line,
                    start: span.start,
                    end: span.end,
                });
            }
            if span.end > len {
                return Err(CorpusError::OutOfBounds {
                    line,
                    start: span.start,
                    end: span.end,
                    len,
                });
            }
            if !vocab.contains(&span.label) {
                return Err(CorpusError::UnknownLabel {
                    line,
                    label: span.label.clone(),
                });
            }
        }
        let mut by_label: HashMap<&str, Vec<(usize, usize)>> = HashMap::new();
        for span in &self.entities {
            by_label
                .entry(span.label.as_str())
                .or_default()
                .push((span.start, span.end));
        }
        for (label, mut ranges) in by_label {
            ranges.sort_unstable();
            for pair in ranges.windows(2) {
                if pair[1].0 < pair[0].1 {
                    return Err(CorpusError::SameLabelOverlap {
                        line,
                        label: label.to_string(),
                        first: pair[0],
                        second: pair[1],
                    });
                }
            }
        }
        Ok(())
    }
}

/// Substring of `text` between character offsets `start..end`.
pub fn char_slice(text: &str, start: usize, end: usize) -> &str {
    let byte = |n: usize| {
        text.char_indices()
            .map(|(b, _)| b)
            .chain(std::iter::once(text.len()))
            .nth(n)
            .expect("char offset in range")
    };
    &text[byte(start)..byte(end)]
}

/// Reads a JSONL corpus, validating each document against `vocab`.
pub fn ingest(path: impl AsRef<Path>, vocab: &LabelVocabulary) -> Result<Vec<Document>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(BufReader::new(file), vocab).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

/// Reads JSONL from any buffered reader. Blank lines are skipped; line numbers are 1-based.
pub fn parse_corpus<R: BufRead>(reader: R, vocab: &LabelVocabulary) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: String::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| CorpusError::Json {
            line: line_no,
            message: e.to_string(),
        })?;
        doc.validate(vocab, line_no)?;
        if !seen.insert(doc.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: doc.id,
            });
        }
        docs.push(doc);
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> LabelVocabulary {
        LabelVocabulary::new(["ER", "PR", "FISH/CISH/SISH"]).unwrap()
    }

    fn parse(input: &str) -> Result<Vec<Document>, CorpusError> {
        parse_corpus(input.as_bytes(), &vocab())
    }

    #[test]
    fn ingests_single_span() {
        let docs =
            parse(r#"{"id":"d1","text":"FISH negativo","entities":[{"start":0,"end":13,"label":"FISH/CISH/SISH"}]}"#)
                .unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].entities.len(), 1);
        assert_eq!(docs[0].slice(0, 13), "FISH negativo");
    }

    #[test]
    fn accepts_empty_annotations() {
        let docs = parse(r#"{"id":"d1","text":"nada","entities":[]}"#).unwrap();
        assert!(docs[0].entities.is_empty());
    }

    #[test]
    fn reversed_span_reports_line() {
        let input = concat!(
            r#"{"id":"d0","text":"ok","entities":[]}"#,
            "\n",
            r#"{"id":"d1","text":"IHQ: RE-/RP-","entities":[{"start":5,"end":3,"label":"ER"}]}"#
        );
        let err = parse(input).unwrap_err();
        assert!(matches!(err, CorpusError::EmptySpan { line: 2, .. }));
        assert!(err.to_string().contains("span start ≥ end at line 2"));
    }

    #[test]
    fn malformed_json_reports_line() {
        let input = "{\"id\":\"d0\",\"text\":\"ok\",\"entities\":[]}\n\n{not json";
        assert!(matches!(parse(input).unwrap_err(), CorpusError::Json { line: 3, .. }));
    }

    #[test]
    fn rejects_out_of_bounds_unknown_label_duplicates_and_overlap() {
        let oob = r#"{"id":"d1","text":"abc","entities":[{"start":1,"end":4,"label":"ER"}]}"#;
        assert!(matches!(parse(oob).unwrap_err(), CorpusError::OutOfBounds { .. }));

        let unknown = r#"{"id":"d1","text":"abc","entities":[{"start":0,"end":1,"label":"HER2"}]}"#;
        assert!(matches!(parse(unknown).unwrap_err(), CorpusError::UnknownLabel { .. }));

        let dup = "{\"id\":\"d1\",\"text\":\"a\"}\n{\"id\":\"d1\",\"text\":\"b\"}";
        assert!(matches!(
            parse(dup).unwrap_err(),
            CorpusError::DuplicateId { line: 2, .. }
        ));

        let overlap = r#"{"id":"d1","text":"abcdef","entities":[{"start":0,"end":3,"label":"ER"},{"start":2,"end":5,"label":"ER"}]}"#;
        assert!(matches!(
            parse(overlap).unwrap_err(),
            CorpusError::SameLabelOverlap { .. }
        ));
    }

    #[test]
    fn cross_label_overlap_allowed() {
        let input = r#"{"id":"d1","text":"abcdef","entities":[{"start":0,"end":3,"label":"ER"},{"start":2,"end":5,"label":"PR"}]}"#;
        assert_eq!(parse(input).unwrap()[0].entities.len(), 2);
    }

    #[test]
    fn offsets_count_chars_not_bytes() {
        let input = r#"{"id":"d1","text":"pré-menopausa","entities":[{"start":0,"end":13,"label":"ER"}]}"#;
        let docs = parse(input).unwrap();
        assert_eq!(docs[0].slice(0, 3), "pré");
        assert_eq!(docs[0].slice(0, 13), "pré-menopausa");
    }
}
