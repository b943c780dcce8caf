//! Class weights and oversampling for imbalanced multilabel training sets.
//!
//! Both work on document-level label presence: a document "contains" a class
//! when it has at least one span of that class.

use std::borrow::Borrow;

use indexmap::IndexMap;
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::Provenance;
use crate::corpus::{Document, LabelVocabulary};

pub const DEFAULT_CAP: f64 = 3.0;

#[derive(Debug, Error, PartialEq)]
pub enum ImbalanceError {
    #[error("label `{0}` occurs in no training document; its weight is undefined")]
    AbsentLabel(String),
    #[error("oversampling cap must be a finite number ≥ 1, got {0}")]
    InvalidCap(f64),
    #[error("cannot oversample an empty training set")]
    EmptyTrainingSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCount {
    pub label: String,
    /// Documents with at least one span of the label.
    pub containing: u64,
    pub not_containing: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelStats {
    pub total: u64,
    /// In vocabulary order.
    pub labels: Vec<LabelCount>,
}

impl LabelStats {
    pub fn get(&self, label: &str) -> Option<&LabelCount> {
        self.labels.iter().find(|c| c.label == label)
    }
}

pub fn label_stats<D: Borrow<Document>>(docs: &[D], vocab: &LabelVocabulary) -> LabelStats {
    let mut containing = vec![0u64; vocab.len()];
    for doc in docs {
        for label in doc.borrow().label_set() {
            if let Some(pos) = vocab.position(label) {
                containing[pos] += 1;
            }
        }
    }
    let total = docs.len() as u64;
    LabelStats {
        total,
        labels: vocab
            .labels()
            .iter()
            .zip(containing)
            .map(|(label, n)| LabelCount {
                label: label.clone(),
                containing: n,
                not_containing: total - n,
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassWeights {
    pub clamped: bool,
    /// Exact weights in vocabulary order.
    pub weights: Vec<(String, Ratio<u64>)>,
}

impl ClassWeights {
    pub fn get(&self, label: &str) -> Option<Ratio<u64>> {
        self.weights.iter().find(|(l, _)| l == label).map(|(_, w)| *w)
    }

    pub fn to_f64(&self) -> IndexMap<String, f64> {
        self.weights
            .iter()
            .map(|(l, w)| (l.clone(), *w.numer() as f64 / *w.denom() as f64))
            .collect()
    }

    pub fn to_file(&self, vocab_hash: Option<String>, provenance: Option<Provenance>) -> WeightsFile {
        WeightsFile {
            clamped: self.clamped,
            weights: self.to_f64(),
            vocab_hash,
            provenance,
        }
    }
}

/// Weights file JSON consumed by training code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub clamped: bool,
    pub weights: IndexMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// `w_c = N_c' / N_c`; with `clamp`, `max(w_c, 1)`.
pub fn class_weights(stats: &LabelStats, clamp: bool) -> Result<ClassWeights, ImbalanceError> {
    let one = Ratio::from_integer(1);
    let weights = stats
        .labels
        .iter()
        .map(|c| {
            if c.containing == 0 {
                return Err(ImbalanceError::AbsentLabel(c.label.clone()));
            }
            let w = Ratio::new(c.not_containing, c.containing);
            Ok((c.label.clone(), if clamp { w.max(one) } else { w }))
        })
        .collect::<Result<_, _>>()?;
    Ok(ClassWeights {
        clamped: clamp,
        weights,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub id: String,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OversamplePlan {
    /// Mean initial document frequency over labels present in the training set.
    pub target: f64,
    pub cap: f64,
    pub seed: u64,
    /// Input order, every document with count ≥ 1.
    pub entries: Vec<PlanEntry>,
    /// Label → document count after replication, vocabulary order.
    pub label_counts: IndexMap<String, u64>,
}

impl OversamplePlan {
    pub fn size(&self) -> u64 {
        self.entries.iter().map(|e| u64::from(e.count)).sum()
    }

    /// Document ids with replication applied, each id repeated `count` times.
    pub fn expand(&self) -> Vec<&str> {
        self.entries
            .iter()
            .flat_map(|e| std::iter::repeat_n(e.id.as_str(), e.count as usize))
            .collect()
    }

    pub fn to_file(&self, vocab_hash: Option<String>, provenance: Option<Provenance>) -> OversampleFile {
        OversampleFile {
            target: self.target,
            cap: self.cap,
            seed: self.seed,
            plan: self.entries.clone(),
            label_counts: self.label_counts.clone(),
            vocab_hash,
            provenance,
        }
    }
}

/// Oversample plan JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OversampleFile {
    pub target: f64,
    pub cap: f64,
    pub seed: u64,
    pub plan: Vec<PlanEntry>,
    #[serde(default)]
    pub label_counts: IndexMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// Replicates documents of the rarest label until every label reaches the
/// initial mean frequency or the plan grows to `cap · |docs|` entries.
///
/// Each step takes the label with the lowest current count (ties in
/// vocabulary order) and replicates its least-replicated document (ties
/// broken by the seeded generator). Labels absent from the training set can
/// never be raised and are left out of both the target and the loop.
pub fn oversample<D: Borrow<Document>>(
    docs: &[D],
    vocab: &LabelVocabulary,
    seed: u64,
    cap: f64,
) -> Result<OversamplePlan, ImbalanceError> {
    if !cap.is_finite() || cap < 1.0 {
        return Err(ImbalanceError::InvalidCap(cap));
    }
    if docs.is_empty() {
        return Err(ImbalanceError::EmptyTrainingSet);
    }

    let doc_labels: Vec<Vec<usize>> = docs
        .iter()
        .map(|d| {
            d.borrow()
                .label_set()
                .into_iter()
                .filter_map(|l| vocab.position(l))
                .collect()
        })
        .collect();
    let mut counts = vec![0u64; vocab.len()];
    for labels in &doc_labels {
        for &l in labels {
            counts[l] += 1;
        }
    }
    let present: Vec<usize> = (0..vocab.len()).filter(|&l| counts[l] > 0).collect();
    let target = if present.is_empty() {
        0.0
    } else {
        present.iter().map(|&l| counts[l] as f64).sum::<f64>() / present.len() as f64
    };
    let holders: Vec<Vec<usize>> = (0..vocab.len())
        .map(|l| (0..docs.len()).filter(|&d| doc_labels[d].contains(&l)).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut replication = vec![1u32; docs.len()];
    let limit = cap * docs.len() as f64;
    let mut size = docs.len() as u64;

    while (size as f64) < limit {
        let Some(&label) = present
            .iter()
            .filter(|&&l| (counts[l] as f64) < target)
            .min_by_key(|&&l| (counts[l], l))
        else {
            break;
        };
        let fewest = holders[label]
            .iter()
            .map(|&d| replication[d])
            .min()
            .expect("present label has holders");
        let tied: Vec<usize> = holders[label]
            .iter()
            .copied()
            .filter(|&d| replication[d] == fewest)
            .collect();
        let chosen = if tied.len() == 1 {
            tied[0]
        } else {
            tied[rng.random_range(0..tied.len())]
        };
        replication[chosen] += 1;
        size += 1;
        for &l in &doc_labels[chosen] {
            counts[l] += 1;
        }
    }

    Ok(OversamplePlan {
        target,
        cap,
        seed,
        entries: docs
            .iter()
            .zip(&replication)
            .map(|(d, &count)| PlanEntry {
                id: d.borrow().id.clone(),
                count,
            })
            .collect(),
        label_counts: vocab.labels().iter().cloned().zip(counts).collect(),
    })
}
