//! Few-shot LLM entity extraction.
//!
//! A prompt built from one annotated example goes to a chat-completions
//! endpoint. The JSON reply (label → exact strings) is aligned back onto
//! character spans and turned into hard 0/1 predictions, so the metrics
//! module can score LLMs and fine-tuned encoders the same way.

mod align;
mod client;
pub mod mock;
mod parse;
mod prompt;
mod run;
mod usage;

use thiserror::Error;

pub use align::{align, AlignmentReport, Hallucination};
pub use client::{ChatBackend, ChatClient, Completion, ProviderConfig};
pub use parse::parse_response;
pub use prompt::{ExtractionResponse, PromptTemplate, RenderedPrompt};
pub use run::{run_extraction, to_predictions, DocOutcome, DocStatus, RawResponseRecord, RunSummary};
pub use usage::{usage_summary, write_summary_csv, write_usage_csv, Prices, UsageRecord, UsageSummary};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("environment variable `{0}` with the API key is not set")]
    MissingApiKey(String),
    #[error("prompt template: {0}")]
    Template(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("unexpected response shape: {0}")]
    ResponseFormat(String),
    #[error("no JSON object in model response")]
    NoJsonObject,
}
