use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::corpus::{encode, tokenize, Document, LabelVocabulary, Scheme, TagMatrix, Token};

/// One line of a prediction JSONL file: a dense token × channel probability matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocPrediction {
    pub id: String,
    pub tokens: Vec<Token>,
    pub channels: Vec<String>,
    pub probs: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_hash: Option<String>,
}

impl DocPrediction {
    fn validate(&self) -> Result<(), MetricsError> {
        if self.probs.len() != self.tokens.len() {
            return Err(MetricsError::DimensionMismatch {
                doc: self.id.clone(),
                detail: format!("{} probability rows for {} tokens", self.probs.len(), self.tokens.len()),
            });
        }
        for (r, row) in self.probs.iter().enumerate() {
            if row.len() != self.channels.len() {
                return Err(MetricsError::DimensionMismatch {
                    doc: self.id.clone(),
                    detail: format!("row {r} has {} cells for {} channels", row.len(), self.channels.len()),
                });
            }
            if let Some((c, &p)) = row.iter().enumerate().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
                return Err(MetricsError::InvalidProbability {
                    doc: self.id.clone(),
                    row: r,
                    col: c,
                    value: p,
                });
            }
        }
        Ok(())
    }
}

/// Model output for a set of documents, all sharing one channel layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionSet {
    pub channels: Vec<String>,
    pub docs: Vec<DocPrediction>,
}

impl PredictionSet {
    pub fn from_docs(docs: Vec<DocPrediction>) -> Result<Self, MetricsError> {
        let channels = docs.first().map(|d| d.channels.clone()).unwrap_or_default();
        for doc in &docs {
            if doc.channels != channels {
                return Err(MetricsError::ChannelMismatch(format!(
                    "document `{}` lists channels {:?}, expected {:?}",
                    doc.id, doc.channels, channels
                )));
            }
            doc.validate()?;
        }
        Ok(Self { channels, docs })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MetricsError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| MetricsError::Io(format!("{}: {e}", path.display())))?;
        Self::read(BufReader::new(file))
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, MetricsError> {
        let mut docs = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| MetricsError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let doc: DocPrediction = serde_json::from_str(&line).map_err(|e| MetricsError::Json {
                line: i + 1,
                message: e.to_string(),
            })?;
            docs.push(doc);
        }
        Self::from_docs(docs)
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for doc in &self.docs {
            serde_json::to_writer(&mut out, doc)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Fails unless the channel layout is the one `vocab` defines for `scheme`
    /// and every embedded vocabulary hash matches.
    pub fn check_vocabulary(&self, vocab: &LabelVocabulary, scheme: Scheme) -> Result<(), MetricsError> {
        let expected = vocab.channel_names(scheme);
        if !self.docs.is_empty() && self.channels != expected {
            return Err(MetricsError::ChannelMismatch(format!(
                "predictions list channels {:?}, vocabulary defines {:?} for {scheme}",
                self.channels, expected
            )));
        }
        let hash = vocab.hash();
        if let Some(doc) = self
            .docs
            .iter()
            .find(|d| d.vocab_hash.as_ref().is_some_and(|h| *h != hash))
        {
            return Err(MetricsError::VocabularyHash { doc: doc.id.clone() });
        }
        Ok(())
    }

    /// Hard 0/1 predictions from a tag matrix.
    pub fn from_matrices<'a, I>(matrices: I, vocab: &LabelVocabulary) -> Self
    where
        I: IntoIterator<Item = (&'a TagMatrix, &'a [Token])>,
    {
        let mut set = PredictionSet::default();
        for (m, tokens) in matrices {
            let channels = vocab.channel_names(m.scheme);
            set.channels.clone_from(&channels);
            set.docs.push(DocPrediction {
                id: m.doc_id.clone(),
                tokens: tokens.to_vec(),
                channels,
                probs: (0..m.rows())
                    .map(|r| m.row(r).iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
                    .collect(),
                vocab_hash: Some(vocab.hash()),
            });
        }
        set
    }
}

/// Reference-tokenized, encoded gold matrix for one document.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldDoc {
    pub tokens: Vec<Token>,
    pub matrix: TagMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoldStandard {
    pub channels: Vec<String>,
    pub docs: Vec<GoldDoc>,
}

impl GoldStandard {
    pub fn from_documents<'a, I>(docs: I, vocab: &LabelVocabulary, scheme: Scheme) -> Self
    where
        I: IntoIterator<Item = &'a Document>,
    {
        Self {
            channels: vocab.channel_names(scheme),
            docs: docs
                .into_iter()
                .map(|d| {
                    let tokens = tokenize(&d.text);
                    let matrix = encode(d, &tokens, vocab, scheme);
                    GoldDoc { tokens, matrix }
                })
                .collect(),
        }
    }
}
