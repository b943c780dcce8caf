//! Train/validation/test partitioning.
//!
//! Two methods are provided: a seeded shuffle cut at cumulative ratio
//! boundaries, and first-order iterative stratification, which walks labels
//! from rarest to most common and sends each document to the subset that
//! still needs that label the most.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::Provenance;
use crate::corpus::Document;

/// Demands closer than this are treated as tied.
const DEMAND_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum StratifyError {
    #[error("{docs} documents cannot fill {subsets} subsets")]
    TooFewDocuments { docs: usize, subsets: usize },
    #[error("invalid ratios: {0}")]
    InvalidRatios(String),
    #[error("split method is {actual}, expected {expected}")]
    MethodMismatch { expected: SplitMethod, actual: SplitMethod },
    #[error("split does not partition the corpus: {0}")]
    NotAPartition(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMethod {
    Random,
    Iterative,
}

impl fmt::Display for SplitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitMethod::Random => "random",
            SplitMethod::Iterative => "iterative",
        })
    }
}

impl FromStr for SplitMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(SplitMethod::Random),
            "iterative" => Ok(SplitMethod::Iterative),
            other => Err(format!("unknown split method `{other}` (expected random or iterative)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: Vec<f64>,
    pub method: SplitMethod,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(ratios: Vec<f64>, method: SplitMethod, seed: u64) -> Result<Self, StratifyError> {
        let spec = Self { ratios, method, seed };
        spec.validate()?;
        Ok(spec)
    }

    /// 60/20/20.
    pub fn standard(method: SplitMethod, seed: u64) -> Self {
        Self {
            ratios: vec![0.6, 0.2, 0.2],
            method,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), StratifyError> {
        if self.ratios.is_empty() {
            return Err(StratifyError::InvalidRatios("no ratios".into()));
        }
        if let Some(r) = self.ratios.iter().find(|r| !r.is_finite() || **r <= 0.0) {
            return Err(StratifyError::InvalidRatios(format!("ratio {r} is not positive")));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(StratifyError::InvalidRatios(format!("ratios sum to {sum}, not 1")));
        }
        Ok(())
    }

    pub fn subset_names(&self) -> Vec<String> {
        subset_names(self.ratios.len())
    }
}

/// `train`/`validation`/`test` for three subsets, `train`/`test` for two,
/// `subset0..` otherwise.
pub fn subset_names(n: usize) -> Vec<String> {
    match n {
        1 => vec!["train".into()],
        2 => vec!["train".into(), "test".into()],
        3 => vec!["train".into(), "validation".into(), "test".into()],
        _ => (0..n).map(|i| format!("subset{i}")).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    /// Subset name → document ids, in subset order.
    pub subsets: IndexMap<String, Vec<String>>,
    pub spec: SplitSpec,
}

impl SplitAssignment {
    pub fn subset(&self, name: &str) -> Option<&[String]> {
        self.subsets.get(name).map(Vec::as_slice)
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.subsets.values().map(Vec::len).collect()
    }

    /// Documents of `name`, in corpus order.
    pub fn select<'a>(&self, name: &str, docs: &'a [Document]) -> Option<Vec<&'a Document>> {
        let ids: HashSet<&str> = self.subsets.get(name)?.iter().map(String::as_str).collect();
        Some(docs.iter().filter(|d| ids.contains(d.id.as_str())).collect())
    }

    /// Checks that subsets are disjoint and cover exactly `docs`.
    pub fn check_partition(&self, docs: &[Document]) -> Result<(), StratifyError> {
        let mut seen = HashSet::new();
        for id in self.subsets.values().flatten() {
            if !seen.insert(id.as_str()) {
                return Err(StratifyError::NotAPartition(format!("`{id}` appears twice")));
            }
        }
        let expected: HashSet<&str> = docs.iter().map(|d| d.id.as_str()).collect();
        if let Some(id) = seen.difference(&expected).next() {
            return Err(StratifyError::NotAPartition(format!("`{id}` is not in the corpus")));
        }
        if let Some(id) = expected.difference(&seen).next() {
            return Err(StratifyError::NotAPartition(format!("`{id}` is unassigned")));
        }
        Ok(())
    }

    pub fn to_file(&self, vocab_hash: Option<String>, provenance: Option<Provenance>) -> SplitFile {
        SplitFile {
            method: self.spec.method,
            seed: self.spec.seed,
            ratios: self.spec.ratios.clone(),
            subsets: self.subsets.clone(),
            vocab_hash,
            provenance,
        }
    }
}

/// Split file JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub method: SplitMethod,
    pub seed: u64,
    pub ratios: Vec<f64>,
    pub subsets: IndexMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl SplitFile {
    pub fn into_assignment(self) -> Result<SplitAssignment, StratifyError> {
        let spec = SplitSpec::new(self.ratios, self.method, self.seed)?;
        if spec.ratios.len() != self.subsets.len() {
            return Err(StratifyError::InvalidRatios(format!(
                "{} ratios for {} subsets",
                spec.ratios.len(),
                self.subsets.len()
            )));
        }
        Ok(SplitAssignment {
            subsets: self.subsets,
            spec,
        })
    }
}

pub fn split(docs: &[Document], spec: &SplitSpec) -> Result<SplitAssignment, StratifyError> {
    match spec.method {
        SplitMethod::Random => split_random(docs, spec),
        SplitMethod::Iterative => split_iterative(docs, spec),
    }
}

fn check_preconditions(docs: &[Document], spec: &SplitSpec, method: SplitMethod) -> Result<(), StratifyError> {
    spec.validate()?;
    if spec.method != method {
        return Err(StratifyError::MethodMismatch {
            expected: method,
            actual: spec.method,
        });
    }
    if docs.len() < spec.ratios.len() {
        return Err(StratifyError::TooFewDocuments {
            docs: docs.len(),
            subsets: spec.ratios.len(),
        });
    }
    Ok(())
}

/// Subset sizes: floor of `ratio · n`, leftover documents go to the earliest subsets.
pub fn allocate_sizes(n: usize, ratios: &[f64]) -> Vec<usize> {
    let mut sizes: Vec<usize> = ratios
        .iter()
        .map(|r| (r * n as f64 + DEMAND_EPS).floor() as usize)
        .collect();
    let leftover = n.saturating_sub(sizes.iter().sum());
    let k = sizes.len();
    for i in 0..leftover {
        sizes[i % k] += 1;
    }
    sizes
}

fn assemble(spec: &SplitSpec, buckets: Vec<Vec<String>>) -> SplitAssignment {
    SplitAssignment {
        subsets: spec.subset_names().into_iter().zip(buckets).collect(),
        spec: spec.clone(),
    }
}

pub fn split_random(docs: &[Document], spec: &SplitSpec) -> Result<SplitAssignment, StratifyError> {
    check_preconditions(docs, spec, SplitMethod::Random)?;
    let mut ids: Vec<String> = docs.iter().map(|d| d.id.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    ids.shuffle(&mut rng);
    let mut rest = ids.into_iter();
    let buckets = allocate_sizes(docs.len(), &spec.ratios)
        .into_iter()
        .map(|size| rest.by_ref().take(size).collect())
        .collect();
    Ok(assemble(spec, buckets))
}

/// Picks the subset with the greatest `primary` demand, then greatest
/// `secondary` demand, then uniformly at random.
fn pick_subset(primary: &[f64], secondary: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let best = primary.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = (0..primary.len())
        .filter(|&j| primary[j] >= best - DEMAND_EPS)
        .collect();
    let best = tied.iter().map(|&j| secondary[j]).fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = tied
        .into_iter()
        .filter(|&j| secondary[j] >= best - DEMAND_EPS)
        .collect();
    if tied.len() == 1 {
        tied[0]
    } else {
        tied[rng.random_range(0..tied.len())]
    }
}

pub fn split_iterative(docs: &[Document], spec: &SplitSpec) -> Result<SplitAssignment, StratifyError> {
    check_preconditions(docs, spec, SplitMethod::Iterative)?;
    let k = spec.ratios.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Labels in name order; index → label.
    let labels: Vec<&str> = docs
        .iter()
        .flat_map(|d| d.entities.iter().map(|e| e.label.as_str()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let label_index: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (*l, i)).collect();
    let doc_labels: Vec<Vec<usize>> = docs
        .iter()
        .map(|d| d.label_set().into_iter().map(|l| label_index[l]).collect())
        .collect();

    let mut remaining = vec![0usize; labels.len()];
    for set in &doc_labels {
        for &l in set {
            remaining[l] += 1;
        }
    }
    let mut total_demand: Vec<f64> = spec.ratios.iter().map(|r| r * docs.len() as f64).collect();
    let mut label_demand: Vec<Vec<f64>> = remaining
        .iter()
        .map(|&count| spec.ratios.iter().map(|r| r * count as f64).collect())
        .collect();

    let mut assigned: Vec<Option<usize>> = vec![None; docs.len()];
    let place = |doc: usize,
                 subset: usize,
                 assigned: &mut Vec<Option<usize>>,
                 remaining: &mut Vec<usize>,
                 label_demand: &mut Vec<Vec<f64>>,
                 total_demand: &mut Vec<f64>| {
        assigned[doc] = Some(subset);
        total_demand[subset] -= 1.0;
        for &l in &doc_labels[doc] {
            label_demand[l][subset] -= 1.0;
            remaining[l] -= 1;
        }
    };

    // Rarest label with unassigned documents first; ties in name order.
    while let Some(label) = (0..labels.len())
        .filter(|&l| remaining[l] > 0)
        .min_by_key(|&l| (remaining[l], l))
    {
        for doc in 0..docs.len() {
            if assigned[doc].is_some() || !doc_labels[doc].contains(&label) {
                continue;
            }
            let subset = pick_subset(&label_demand[label], &total_demand, &mut rng);
            place(
                doc,
                subset,
                &mut assigned,
                &mut remaining,
                &mut label_demand,
                &mut total_demand,
            );
        }
    }

    for doc in 0..docs.len() {
        if assigned[doc].is_none() {
            let subset = pick_subset(&total_demand, &total_demand, &mut rng);
            place(
                doc,
                subset,
                &mut assigned,
                &mut remaining,
                &mut label_demand,
                &mut total_demand,
            );
        }
    }

    let mut buckets = vec![Vec::new(); k];
    for (doc, subset) in assigned.into_iter().enumerate() {
        buckets[subset.expect("every document assigned")].push(docs[doc].id.clone());
    }
    Ok(assemble(spec, buckets))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetLabelCount {
    pub subset: String,
    pub count: usize,
    pub fraction: f64,
    pub target: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelQuality {
    pub label: String,
    pub documents: usize,
    pub subsets: Vec<SubsetLabelCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitQualityReport {
    pub labels: Vec<LabelQuality>,
    pub max_deviation: f64,
    pub mean_deviation: f64,
}

impl SplitQualityReport {
    pub fn label(&self, label: &str) -> Option<&LabelQuality> {
        self.labels.iter().find(|l| l.label == label)
    }
}

/// Per-label document counts per subset and their deviation from the target ratio.
/// Labels that occur in no document are omitted.
pub fn split_quality(docs: &[Document], assignment: &SplitAssignment, spec: &SplitSpec) -> SplitQualityReport {
    let subset_of: BTreeMap<&str, usize> = assignment
        .subsets
        .values()
        .enumerate()
        .flat_map(|(j, ids)| ids.iter().map(move |id| (id.as_str(), j)))
        .collect();
    let k = assignment.subsets.len();
    let mut counts: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for doc in docs {
        let Some(&j) = subset_of.get(doc.id.as_str()) else {
            continue;
        };
        for label in doc.label_set() {
            counts.entry(label).or_insert_with(|| vec![0; k])[j] += 1;
        }
    }

    let names: Vec<&String> = assignment.subsets.keys().collect();
    let mut deviations = Vec::new();
    let labels = counts
        .into_iter()
        .map(|(label, per_subset)| {
            let total: usize = per_subset.iter().sum();
            let subsets = per_subset
                .iter()
                .enumerate()
                .map(|(j, &count)| {
                    let fraction = count as f64 / total as f64;
                    let target = spec.ratios.get(j).copied().unwrap_or(0.0);
                    let deviation = (fraction - target).abs();
                    deviations.push(deviation);
                    SubsetLabelCount {
                        subset: names[j].clone(),
                        count,
                        fraction,
                        target,
                        deviation,
                    }
                })
                .collect();
            LabelQuality {
                label: label.to_string(),
                documents: total,
                subsets,
            }
        })
        .collect();

    let max_deviation = deviations.iter().copied().fold(0.0, f64::max);
    let mean_deviation = if deviations.is_empty() {
        0.0
    } else {
        deviations.iter().sum::<f64>() / deviations.len() as f64
    };
    SplitQualityReport {
        labels,
        max_deviation,
        mean_deviation,
    }
}
