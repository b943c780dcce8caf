//! Token-channel multilabel evaluation.
//!
//! Every (token, channel) cell of every document is one binary decision. A
//! cell is predicted positive when its probability is at or above the
//! threshold. Entity channels only: there is no "outside" channel.

mod curve;
mod predictions;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use curve::{candidate_thresholds, pr_curve, sweep_threshold, PrCurve, PrPoint, SweepResult};
pub use predictions::{DocPrediction, GoldDoc, GoldStandard, PredictionSet};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{0}")]
    Io(String),
    #[error("malformed prediction JSON at line {line}: {message}")]
    Json { line: usize, message: String },
    #[error("dimension mismatch in document `{doc}`: {detail}")]
    DimensionMismatch { doc: String, detail: String },
    #[error("probability {value} outside [0, 1] in document `{doc}` at row {row}, channel {col}")]
    InvalidProbability {
        doc: String,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("channel mismatch: {0}")]
    ChannelMismatch(String),
    #[error("document `{doc}` was produced with a different label vocabulary")]
    VocabularyHash { doc: String },
    #[error("no prediction for gold document `{0}`")]
    MissingPrediction(String),
    #[error("prediction for `{0}` has no gold document")]
    UnexpectedPrediction(String),
    #[error("unknown channel `{0}`")]
    UnknownLabel(String),
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("prediction set is empty")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn add(&mut self, other: Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2TP / (2TP + FP + FN)`, the harmonic mean of precision and recall.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-channel counts at one threshold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub channels: Vec<String>,
    pub per_channel: Vec<Confusion>,
    /// Number of cells evaluated.
    pub cells: u64,
}

impl ConfusionCounts {
    pub fn micro(&self) -> Confusion {
        let mut total = Confusion::default();
        for c in &self.per_channel {
            total.add(*c);
        }
        total
    }

    pub fn predicted_positive(&self) -> u64 {
        self.per_channel.iter().map(|c| c.tp + c.fp).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub threshold: Option<f64>,
    pub labels: Vec<LabelMetrics>,
    pub micro: Averages,
    #[serde(rename = "macro")]
    pub macro_: Averages,
    /// Set when every cell, or no cell, was predicted positive.
    pub degenerate: bool,
}

/// Pairs every gold document with its prediction, checking shapes and token offsets.
pub(crate) fn align<'a>(
    gold: &'a GoldStandard,
    pred: &'a PredictionSet,
) -> Result<Vec<(&'a GoldDoc, &'a DocPrediction)>, MetricsError> {
    if !pred.docs.is_empty() && pred.channels != gold.channels {
        return Err(MetricsError::ChannelMismatch(format!(
            "predictions list {:?}, gold has {:?}",
            pred.channels, gold.channels
        )));
    }
    let by_id: HashMap<&str, &DocPrediction> = pred.docs.iter().map(|d| (d.id.as_str(), d)).collect();
    if by_id.len() != pred.docs.len() {
        let mut seen = std::collections::HashSet::new();
        let dup = pred
            .docs
            .iter()
            .find(|d| !seen.insert(d.id.as_str()))
            .expect("duplicate exists");
        return Err(MetricsError::UnexpectedPrediction(format!("{} (duplicate)", dup.id)));
    }
    let mut pairs = Vec::with_capacity(gold.docs.len());
    for g in &gold.docs {
        let id = &g.matrix.doc_id;
        let p = by_id
            .get(id.as_str())
            .ok_or_else(|| MetricsError::MissingPrediction(id.clone()))?;
        if p.probs.len() != g.matrix.rows() || g.matrix.width() != gold.channels.len() {
            return Err(MetricsError::DimensionMismatch {
                doc: id.clone(),
                detail: format!("{} prediction rows, {} gold rows", p.probs.len(), g.matrix.rows()),
            });
        }
        if p.tokens != g.tokens {
            return Err(MetricsError::DimensionMismatch {
                doc: id.clone(),
                detail: "token offsets differ from the reference tokenization".into(),
            });
        }
        pairs.push((g, *p));
    }
    if pairs.len() != pred.docs.len() {
        let gold_ids: std::collections::HashSet<&str> = gold.docs.iter().map(|g| g.matrix.doc_id.as_str()).collect();
        let extra = pred
            .docs
            .iter()
            .find(|d| !gold_ids.contains(d.id.as_str()))
            .expect("extra exists");
        return Err(MetricsError::UnexpectedPrediction(extra.id.clone()));
    }
    Ok(pairs)
}

/// TP/FP/FN per channel over all cells at `threshold` (positive iff `p ≥ threshold`).
pub fn confusion(gold: &GoldStandard, pred: &PredictionSet, threshold: f64) -> Result<ConfusionCounts, MetricsError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(MetricsError::InvalidThreshold(threshold));
    }
    let pairs = align(gold, pred)?;
    let width = gold.channels.len();
    let per_channel = pairs
        .par_iter()
        .map(|(g, p)| {
            let mut local = vec![Confusion::default(); width];
            for (r, row) in p.probs.iter().enumerate() {
                for (c, &prob) in row.iter().enumerate() {
                    let truth = g.matrix.get(r, c);
                    let positive = prob >= threshold;
                    match (truth, positive) {
                        (true, true) => local[c].tp += 1,
                        (false, true) => local[c].fp += 1,
                        (true, false) => local[c].fn_ += 1,
                        (false, false) => {}
                    }
                }
            }
            local
        })
        .reduce(
            || vec![Confusion::default(); width],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    x.add(y);
                }
                a
            },
        );
    let cells = pairs.iter().map(|(g, _)| (g.matrix.rows() * width) as u64).sum();
    Ok(ConfusionCounts {
        channels: gold.channels.clone(),
        per_channel,
        cells,
    })
}

/// Per-label, micro and macro precision/recall/F1. Zero denominators give 0.
pub fn score(counts: &ConfusionCounts) -> MetricsReport {
    let labels: Vec<LabelMetrics> = counts
        .channels
        .iter()
        .zip(&counts.per_channel)
        .map(|(label, c)| LabelMetrics {
            label: label.clone(),
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
        })
        .collect();
    let micro = counts.micro();
    let n = labels.len().max(1) as f64;
    let mean = |f: fn(&LabelMetrics) -> f64| labels.iter().map(f).sum::<f64>() / n;
    let predicted = counts.predicted_positive();
    MetricsReport {
        threshold: None,
        micro: Averages {
            precision: micro.precision(),
            recall: micro.recall(),
            f1: micro.f1(),
        },
        macro_: Averages {
            precision: mean(|l| l.precision),
            recall: mean(|l| l.recall),
            f1: mean(|l| l.f1),
        },
        labels,
        degenerate: predicted == 0 || predicted == counts.cells,
    }
}

/// `confusion` followed by `score`, with the threshold recorded.
pub fn evaluate(gold: &GoldStandard, pred: &PredictionSet, threshold: f64) -> Result<MetricsReport, MetricsError> {
    let mut report = score(&confusion(gold, pred, threshold)?);
    report.threshold = Some(threshold);
    Ok(report)
}
