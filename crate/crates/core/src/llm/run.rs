use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{
    align, parse_response, AlignmentReport, ChatBackend, ExtractionResponse, LlmError, PromptTemplate, UsageRecord,
};
use crate::corpus::{encode, tokenize, Document, EntitySpan, LabelVocabulary, Scheme};
use crate::metrics::PredictionSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocStatus {
    Processed,
    /// The model answered but no JSON object could be recovered.
    ParseFailed,
    /// No answer after retries; the document is unprocessed.
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocOutcome {
    pub id: String,
    pub status: DocStatus,
    pub raw: Option<String>,
    pub error: Option<String>,
    pub retries: u32,
    pub usage: Option<UsageRecord>,
    pub response: Option<ExtractionResponse>,
    pub spans: Vec<EntitySpan>,
    pub alignment: AlignmentReport,
}

/// One line of the raw-response audit JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResponseRecord {
    pub id: String,
    pub status: DocStatus,
    pub retries: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl DocOutcome {
    pub fn raw_record(&self) -> RawResponseRecord {
        RawResponseRecord {
            id: self.id.clone(),
            status: self.status,
            retries: self.retries,
            raw: self.raw.clone(),
            error: self.error.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub documents: usize,
    pub processed: usize,
    pub parse_failures: usize,
    pub failed: usize,
    pub retries: u64,
    pub accepted_spans: usize,
    pub fallback_matches: usize,
    pub hallucinations: usize,
    pub overlaps_rejected: usize,
    pub parse_warnings: usize,
}

impl RunSummary {
    pub fn from_outcomes(outcomes: &[DocOutcome]) -> Self {
        let mut s = Self {
            documents: outcomes.len(),
            ..Self::default()
        };
        for o in outcomes {
            match o.status {
                DocStatus::Processed => s.processed += 1,
                DocStatus::ParseFailed => s.parse_failures += 1,
                DocStatus::Failed => s.failed += 1,
            }
            s.retries += u64::from(o.retries);
            s.accepted_spans += o.alignment.accepted;
            s.fallback_matches += o.alignment.fallback_matches;
            s.hallucinations += o.alignment.hallucinations.len();
            s.overlaps_rejected += o.alignment.overlaps_rejected;
            s.parse_warnings += o.response.as_ref().map_or(0, |r| r.warnings.len());
        }
        s
    }
}

fn process<B: ChatBackend + ?Sized>(
    backend: &B,
    template: &PromptTemplate,
    vocab: &LabelVocabulary,
    example: (&Document, &ExtractionResponse),
    doc: &Document,
) -> DocOutcome {
    let mut outcome = DocOutcome {
        id: doc.id.clone(),
        status: DocStatus::Failed,
        raw: None,
        error: None,
        retries: 0,
        usage: None,
        response: None,
        spans: Vec::new(),
        alignment: AlignmentReport::default(),
    };
    let completion = template
        .render(vocab, example.0, example.1, doc)
        .and_then(|prompt| backend.complete(&prompt));
    let completion = match completion {
        Ok(c) => c,
        Err(e) => {
            warn!("document `{}` unprocessed: {e}", doc.id);
            if let LlmError::Exhausted { attempts, .. } = &e {
                outcome.retries = attempts.saturating_sub(1);
            }
            outcome.error = Some(e.to_string());
            return outcome;
        }
    };
    outcome.retries = completion.retries;
    outcome.usage = Some(completion.usage);
    match parse_response(&completion.content, vocab) {
        Ok(response) => {
            let (spans, report) = align(doc, &response);
            outcome.status = DocStatus::Processed;
            outcome.spans = spans;
            outcome.alignment = report;
            outcome.response = Some(response);
        }
        Err(e) => {
            warn!("document `{}`: {e}", doc.id);
            outcome.status = DocStatus::ParseFailed;
            outcome.error = Some(e.to_string());
        }
    }
    outcome.raw = Some(completion.content);
    outcome
}

/// Prompts the model once per document with at most `parallelism` requests
/// in flight. Outcomes come back in input order.
pub fn run_extraction<B: ChatBackend + ?Sized>(
    backend: &B,
    parallelism: usize,
    template: &PromptTemplate,
    vocab: &LabelVocabulary,
    example: &Document,
    docs: &[&Document],
) -> Result<Vec<DocOutcome>, LlmError> {
    template.validate()?;
    let example_response = ExtractionResponse::from_document(example, vocab);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<DocOutcome>>> = Mutex::new(vec![None; docs.len()]);
    let workers = parallelism.max(1).min(docs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(doc) = docs.get(i) else { break };
                let outcome = process(backend, template, vocab, (example, &example_response), doc);
                results.lock().expect("results lock")[i] = Some(outcome);
            });
        }
    });
    Ok(results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|o| o.expect("every document processed"))
        .collect())
}

/// Hard 0/1 predictions from aligned spans: set cells 1.0, all others 0.0.
pub fn to_predictions(
    docs: &[&Document],
    spans: &[Vec<EntitySpan>],
    vocab: &LabelVocabulary,
    scheme: Scheme,
) -> PredictionSet {
    let encoded: Vec<_> = docs
        .iter()
        .zip(spans)
        .map(|(doc, spans)| {
            let predicted = Document::new(doc.id.clone(), doc.text.clone(), spans.clone());
            let tokens = tokenize(&predicted.text);
            let matrix = encode(&predicted, &tokens, vocab, scheme);
            (matrix, tokens)
        })
        .collect();
    PredictionSet::from_matrices(encoded.iter().map(|(m, t)| (m, t.as_slice())), vocab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{Completion, RenderedPrompt};
    use std::sync::atomic::AtomicUsize;

    /// Answers with the gold spans of whatever note is in the user message.
    struct Echo<'a> {
        docs: &'a [Document],
        vocab: &'a LabelVocabulary,
        in_flight: AtomicUsize,
        peak: AtomicUsize,
    }

    impl ChatBackend for Echo<'_> {
        fn complete(&self, prompt: &RenderedPrompt) -> Result<Completion, LlmError> {
            let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(std::time::Duration::from_millis(5));
            let text = prompt.user.trim_start_matches("# Clinical note: ");
            let doc = self.docs.iter().find(|d| d.text == text);
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            let content = match doc {
                Some(d) if d.id == "broken" => "no json here".to_string(),
                Some(d) => ExtractionResponse::from_document(d, self.vocab).canonical_json(),
                None => return Err(LlmError::Transport("unknown note".into())),
            };
            Ok(Completion {
                content,
                usage: UsageRecord::new(
                    "echo",
                    "none",
                    0.0,
                    10,
                    5,
                    crate::llm::Prices {
                        prompt_per_million: 1.0,
                        completion_per_million: 1.0,
                    },
                ),
                retries: 0,
            })
        }
    }

    fn corpus() -> (LabelVocabulary, Vec<Document>) {
        let vocab = LabelVocabulary::new(["ER", "PR"]).unwrap();
        let mut docs: Vec<Document> = (0..12)
            .map(|i| {
                let text = format!("nota {i:02}: RE-/RP- e RE-");
                Document::new(
                    format!("d{i}"),
                    text,
                    vec![
                        EntitySpan::new(9, 12, "ER"),
                        EntitySpan::new(13, 16, "PR"),
                        EntitySpan::new(19, 22, "ER"),
                    ],
                )
            })
            .collect();
        docs.push(Document::new("broken", "sem json", vec![]));
        (vocab, docs)
    }

    #[test]
    fn bounded_parallel_run_keeps_order() {
        let (vocab, docs) = corpus();
        let echo = Echo {
            docs: &docs,
            vocab: &vocab,
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        };
        let refs: Vec<&Document> = docs.iter().collect();
        let outcomes = run_extraction(&echo, 3, &PromptTemplate::default(), &vocab, &docs[0], &refs).unwrap();
        assert!(echo.peak.load(Ordering::SeqCst) <= 3);
        assert_eq!(
            outcomes.iter().map(|o| o.id.as_str()).collect::<Vec<_>>(),
            refs.iter().map(|d| d.id.as_str()).collect::<Vec<_>>()
        );
        for (o, d) in outcomes.iter().zip(&docs).take(12) {
            assert_eq!(o.status, DocStatus::Processed);
            let mut got = o.spans.clone();
            got.sort();
            let mut want = d.entities.clone();
            want.sort();
            assert_eq!(got, want);
        }
        let last = outcomes.last().unwrap();
        assert_eq!(last.status, DocStatus::ParseFailed);
        let summary = RunSummary::from_outcomes(&outcomes);
        assert_eq!((summary.processed, summary.parse_failures, summary.failed), (12, 1, 0));
        assert_eq!(summary.accepted_spans, 36);
    }

    #[test]
    fn predictions_are_hard() {
        let vocab = LabelVocabulary::new(["ER", "PR"]).unwrap();
        let doc = Document::new("d", "Her2 3+ RE", vec![]);
        let spans = vec![vec![EntitySpan::new(0, 7, "ER"), EntitySpan::new(5, 7, "PR")]];
        let p = to_predictions(&[&doc], &spans, &vocab, Scheme::Io);
        assert_eq!(
            p.docs[0].probs,
            vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 1.0], vec![0.0, 0.0]]
        );

        let none = to_predictions(&[&doc], &[vec![]], &vocab, Scheme::Io);
        assert!(none.docs[0].probs.iter().flatten().all(|&p| p == 0.0));
    }
}
