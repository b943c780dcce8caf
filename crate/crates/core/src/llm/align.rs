use serde::{Deserialize, Serialize};

use super::ExtractionResponse;
use crate::corpus::{Document, EntitySpan};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hallucination {
    pub label: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub accepted: usize,
    /// Accepted through the search from the start of the text.
    pub fallback_matches: usize,
    /// Extractions not found verbatim anywhere in the text.
    pub hallucinations: Vec<Hallucination>,
    /// Extractions whose every occurrence overlaps an accepted span of the same label.
    pub overlaps_rejected: usize,
}

/// Byte offset → char offset for every char boundary of `text`.
struct CharOffsets(Vec<usize>);

impl CharOffsets {
    fn new(text: &str) -> Self {
        let mut map = vec![usize::MAX; text.len() + 1];
        for (ci, (bi, _)) in text.char_indices().enumerate() {
            map[bi] = ci;
        }
        map[text.len()] = text.chars().count();
        Self(map)
    }

    fn chars(&self, byte: usize) -> usize {
        self.0[byte]
    }
}

/// Every start offset of `needle` in `haystack`, overlapping occurrences included.
fn occurrences<'a>(haystack: &'a str, needle: &'a str) -> impl Iterator<Item = usize> + 'a {
    let mut from = 0;
    std::iter::from_fn(move || {
        let hit = from + haystack.get(from..)?.find(needle)?;
        from = hit + haystack[hit..].chars().next().map_or(1, char::len_utf8);
        Some(hit)
    })
}

/// Maps extraction strings onto exact character spans of `doc.text`.
///
/// Per label, a cursor walks forward: each extraction is searched at or after
/// the cursor and the cursor moves to the end of the hit. On a miss, one
/// search from the start of the text accepts the first occurrence that does
/// not overlap an accepted span of the same label; that path leaves the
/// cursor in place. Spans are returned grouped by label, in acceptance order.
pub fn align(doc: &Document, resp: &ExtractionResponse) -> (Vec<EntitySpan>, AlignmentReport) {
    let text = doc.text.as_str();
    let offsets = CharOffsets::new(text);
    let mut spans = Vec::new();
    let mut report = AlignmentReport::default();

    for (label, extractions) in &resp.entities {
        let mut accepted: Vec<(usize, usize)> = Vec::new();
        let mut cursor = 0;
        let free = |accepted: &[(usize, usize)], a: usize, b: usize| accepted.iter().all(|&(s, e)| b <= s || e <= a);
        for needle in extractions {
            if needle.is_empty() {
                report.hallucinations.push(Hallucination {
                    label: label.clone(),
                    text: needle.clone(),
                });
                continue;
            }
            let len = needle.len();
            let forward = text[cursor..].find(needle.as_str()).map(|i| cursor + i);
            let hit = match forward {
                Some(start) if free(&accepted, start, start + len) => {
                    cursor = start + len;
                    Some(start)
                }
                _ => {
                    let hit = occurrences(text, needle).find(|&s| free(&accepted, s, s + len));
                    if hit.is_some() {
                        report.fallback_matches += 1;
                    }
                    hit
                }
            };
            match hit {
                Some(start) => {
                    accepted.push((start, start + len));
                    spans.push(EntitySpan::new(
                        offsets.chars(start),
                        offsets.chars(start + len),
                        label.clone(),
                    ));
                    report.accepted += 1;
                }
                None if text.contains(needle.as_str()) => report.overlaps_rejected += 1,
                None => report.hallucinations.push(Hallucination {
                    label: label.clone(),
                    text: needle.clone(),
                }),
            }
        }
    }
    (spans, report)
}
