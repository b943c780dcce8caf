use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CorpusError;

/// Tagging scheme of a [`TagMatrix`](super::TagMatrix).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// One channel per label: the token is inside an entity of that label.
    #[default]
    Io,
    /// Two channels per label: `B-` opens an entity, `I-` continues it.
    Bio,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Io => f.write_str("io"),
            Scheme::Bio => f.write_str("bio"),
        }
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "io" => Ok(Scheme::Io),
            "bio" | "iob2" => Ok(Scheme::Bio),
            other => Err(format!("unknown scheme `{other}` (expected io or bio)")),
        }
    }
}

/// BIO channel role.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BioTag {
    Begin,
    Inside,
}

/// Ordered label set. Label position defines the channel layout of every matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVocabulary {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelVocabulary {
    pub fn new<I, S>(labels: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(labels.len());
        for (i, label) in labels.iter().enumerate() {
            if label.is_empty() {
                return Err(CorpusError::Vocabulary("empty label name".into()));
            }
            if index.insert(label.clone(), i).is_some() {
                return Err(CorpusError::Vocabulary(format!("duplicate label `{label}`")));
            }
        }
        if labels.is_empty() {
            return Err(CorpusError::Vocabulary("vocabulary has no labels".into()));
        }
        Ok(Self { labels, index })
    }

    /// Reads a JSON array of label strings.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&raw)
    }

    pub fn from_json(raw: &str) -> Result<Self, CorpusError> {
        let labels: Vec<String> = serde_json::from_str(raw)
            .map_err(|e| CorpusError::Vocabulary(format!("expected a JSON array of strings: {e}")))?;
        Self::new(labels)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index.contains_key(label)
    }

    pub fn channel_count(&self, scheme: Scheme) -> usize {
        match scheme {
            Scheme::Io => self.labels.len(),
            Scheme::Bio => 2 * self.labels.len(),
        }
    }

    /// Channel index of a label position. For IO the tag is ignored.
    pub fn channel(&self, scheme: Scheme, position: usize, tag: BioTag) -> usize {
        match scheme {
            Scheme::Io => position,
            Scheme::Bio => {
                2 * position
                    + match tag {
                        BioTag::Begin => 0,
                        BioTag::Inside => 1,
                    }
            }
        }
    }

    /// Channel names: the labels for IO, `B-label`/`I-label` pairs for BIO.
    pub fn channel_names(&self, scheme: Scheme) -> Vec<String> {
        match scheme {
            Scheme::Io => self.labels.clone(),
            Scheme::Bio => self
                .labels
                .iter()
                .flat_map(|l| [format!("B-{l}"), format!("I-{l}")])
                .collect(),
        }
    }

    /// Hex SHA-256 of the canonical JSON encoding of the label list.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(&self.labels).expect("string list serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}
