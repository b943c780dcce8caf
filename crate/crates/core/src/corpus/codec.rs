use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{BioTag, Document, EntitySpan, LabelVocabulary, Scheme, Token};

/// Binary token × channel matrix for one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagMatrix {
    pub doc_id: String,
    pub scheme: Scheme,
    width: usize,
    cells: Vec<bool>,
}

impl TagMatrix {
    pub fn zeros(doc_id: impl Into<String>, scheme: Scheme, rows: usize, width: usize) -> Self {
        Self {
            doc_id: doc_id.into(),
            scheme,
            width,
            cells: vec![false; rows * width],
        }
    }

    /// Builds a matrix from 0/1 rows. Returns `None` if rows are ragged or a cell is not 0/1.
    pub fn from_rows(doc_id: impl Into<String>, scheme: Scheme, width: usize, rows: &[Vec<u8>]) -> Option<Self> {
        let mut m = Self::zeros(doc_id, scheme, rows.len(), width);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != width {
                return None;
            }
            for (c, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 => m.set(r, c, true),
                    _ => return None,
                }
            }
        }
        Some(m)
    }

    pub fn rows(&self) -> usize {
        self.cells.len().checked_div(self.width).unwrap_or(0)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.cells[row * self.width + col] = value;
    }

    pub fn row(&self, row: usize) -> &[bool] {
        &self.cells[row * self.width..(row + 1) * self.width]
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.rows())
            .map(|r| self.row(r).iter().map(|&b| u8::from(b)).collect())
            .collect()
    }

    /// JSONL export record.
    pub fn to_record(&self, tokens: &[Token], vocab: &LabelVocabulary) -> TagMatrixRecord {
        TagMatrixRecord {
            id: self.doc_id.clone(),
            tokens: tokens.to_vec(),
            channels: vocab.channel_names(self.scheme),
            rows: self.to_rows(),
            vocab_hash: Some(vocab.hash()),
        }
    }
}

/// One line of the tag-matrix JSONL export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagMatrixRecord {
    pub id: String,
    pub tokens: Vec<Token>,
    pub channels: Vec<String>,
    pub rows: Vec<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_hash: Option<String>,
}

/// Indices of tokens overlapping `[start, end)`. Tokens must be sorted and disjoint.
fn overlapping(tokens: &[Token], start: usize, end: usize) -> std::ops::Range<usize> {
    let first = tokens.partition_point(|t| t.end <= start);
    let last = tokens.partition_point(|t| t.start < end);
    first..last.max(first)
}

/// Labels carried by each token under the any-overlap rule.
pub fn project_spans<'a>(doc: &'a Document, tokens: &[Token]) -> Vec<BTreeSet<&'a str>> {
    let mut sets = vec![BTreeSet::new(); tokens.len()];
    for span in &doc.entities {
        for i in overlapping(tokens, span.start, span.end) {
            sets[i].insert(span.label.as_str());
        }
    }
    sets
}

/// Gold spans widened to the boundaries of the tokens they overlap.
/// Spans touching no token are dropped. Sorted and deduplicated.
pub fn snap_spans(doc: &Document, tokens: &[Token]) -> Vec<EntitySpan> {
    let snapped: BTreeSet<EntitySpan> = doc
        .entities
        .iter()
        .filter_map(|span| {
            let range = overlapping(tokens, span.start, span.end);
            (!range.is_empty())
                .then(|| EntitySpan::new(tokens[range.start].start, tokens[range.end - 1].end, span.label.clone()))
        })
        .collect();
    snapped.into_iter().collect()
}

/// Encodes gold spans as a tag matrix. Under BIO a `B` cell wins over an `I`
/// cell of the same label on a shared token.
pub fn encode(doc: &Document, tokens: &[Token], vocab: &LabelVocabulary, scheme: Scheme) -> TagMatrix {
    let mut m = TagMatrix::zeros(doc.id.clone(), scheme, tokens.len(), vocab.channel_count(scheme));
    let mut begins = Vec::new();
    for span in &doc.entities {
        let Some(pos) = vocab.position(&span.label) else {
            continue;
        };
        let range = overlapping(tokens, span.start, span.end);
        match scheme {
            Scheme::Io => {
                for i in range {
                    m.set(i, pos, true);
                }
            }
            Scheme::Bio => {
                if range.is_empty() {
                    continue;
                }
                begins.push((range.start, pos));
                for i in range.start + 1..range.end {
                    m.set(i, vocab.channel(scheme, pos, BioTag::Inside), true);
                }
            }
        }
    }
    for (row, pos) in begins {
        m.set(row, vocab.channel(scheme, pos, BioTag::Begin), true);
        m.set(row, vocab.channel(scheme, pos, BioTag::Inside), false);
    }
    m
}

/// Decodes a tag matrix back to spans, sorted by `(start, end, label)`.
///
/// IO: each maximal run of set cells in a channel is one span. BIO: `B`
/// opens a span, `I` extends the open span or opens one if none is open.
pub fn decode(matrix: &TagMatrix, tokens: &[Token], vocab: &LabelVocabulary) -> Vec<EntitySpan> {
    assert_eq!(matrix.rows(), tokens.len(), "matrix rows must match tokens");
    let mut spans = Vec::new();
    for (pos, label) in vocab.labels().iter().enumerate() {
        let mut open: Option<(usize, usize)> = None;
        let mut close = |open: &mut Option<(usize, usize)>| {
            if let Some((a, b)) = open.take() {
                spans.push(EntitySpan::new(tokens[a].start, tokens[b].end, label.clone()));
            }
        };
        for row in 0..tokens.len() {
            match matrix.scheme {
                Scheme::Io => {
                    if matrix.get(row, pos) {
                        open = Some((open.map_or(row, |(a, _)| a), row));
                    } else {
                        close(&mut open);
                    }
                }
                Scheme::Bio => {
                    let b = matrix.get(row, vocab.channel(Scheme::Bio, pos, BioTag::Begin));
                    let i = matrix.get(row, vocab.channel(Scheme::Bio, pos, BioTag::Inside));
                    if b {
                        close(&mut open);
                        open = Some((row, row));
                    } else if i {
                        open = Some((open.map_or(row, |(a, _)| a), row));
                    } else {
                        close(&mut open);
                    }
                }
            }
        }
        close(&mut open);
    }
    spans.sort();
    spans
}
