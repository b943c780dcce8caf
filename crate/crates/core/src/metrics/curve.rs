use std::io::Write;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{align, evaluate, Confusion, GoldStandard, MetricsError, MetricsReport, PredictionSet};

const GRID_STEPS: u32 = 1000;
/// Observed probabilities join the grid only when there are at most this many distinct values.
const MAX_OBSERVED_CANDIDATES: usize = 10_000;

/// The 0.001-step grid on `[0, 1]`, plus the distinct observed values when
/// there are at most 10,000 of them. Sorted, strictly increasing.
pub fn candidate_thresholds<I: IntoIterator<Item = f64>>(observed: I) -> Vec<f64> {
    let mut seen: Vec<f64> = observed.into_iter().collect();
    seen.sort_by(f64::total_cmp);
    seen.dedup();
    let mut candidates: Vec<f64> = (0..=GRID_STEPS).map(|i| f64::from(i) / f64::from(GRID_STEPS)).collect();
    if seen.len() <= MAX_OBSERVED_CANDIDATES {
        candidates.extend(seen);
        candidates.sort_by(f64::total_cmp);
        candidates.dedup();
    }
    candidates
}

/// Probabilities of one channel split by gold truth, each sorted ascending.
#[derive(Debug, Default)]
struct ChannelCells {
    positives: Vec<f64>,
    negatives: Vec<f64>,
}

impl ChannelCells {
    fn at_or_above(sorted: &[f64], t: f64) -> u64 {
        (sorted.len() - sorted.partition_point(|&p| p < t)) as u64
    }

    fn confusion(&self, t: f64) -> Confusion {
        let tp = Self::at_or_above(&self.positives, t);
        Confusion {
            tp,
            fp: Self::at_or_above(&self.negatives, t),
            fn_: self.positives.len() as u64 - tp,
        }
    }
}

fn channel_cells(gold: &GoldStandard, pred: &PredictionSet) -> Result<Vec<ChannelCells>, MetricsError> {
    let pairs = align(gold, pred)?;
    let mut cells: Vec<ChannelCells> = (0..gold.channels.len()).map(|_| ChannelCells::default()).collect();
    for (g, p) in pairs {
        for (r, row) in p.probs.iter().enumerate() {
            for (c, &prob) in row.iter().enumerate() {
                if g.matrix.get(r, c) {
                    cells[c].positives.push(prob);
                } else {
                    cells[c].negatives.push(prob);
                }
            }
        }
    }
    for c in &mut cells {
        c.positives.sort_by(f64::total_cmp);
        c.negatives.sort_by(f64::total_cmp);
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub threshold: f64,
    pub candidates: usize,
    pub report: MetricsReport,
}

/// Shared threshold maximizing micro F1 over all channels; ties go to the lowest threshold.
pub fn sweep_threshold(gold: &GoldStandard, pred: &PredictionSet) -> Result<SweepResult, MetricsError> {
    if pred.docs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let cells = channel_cells(gold, pred)?;
    let candidates = candidate_thresholds(
        cells
            .iter()
            .flat_map(|c| c.positives.iter().chain(&c.negatives).copied()),
    );
    let f1s: Vec<f64> = candidates
        .par_iter()
        .map(|&t| {
            let mut micro = Confusion::default();
            for c in &cells {
                micro.add(c.confusion(t));
            }
            micro.f1()
        })
        .collect();
    let mut best = 0;
    for (i, &f1) in f1s.iter().enumerate() {
        if f1 > f1s[best] {
            best = i;
        }
    }
    let threshold = candidates[best];
    Ok(SweepResult {
        threshold,
        candidates: candidates.len(),
        report: evaluate(gold, pred, threshold)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub label: String,
    pub points: Vec<PrPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl PrCurve {
    /// CSV with header `threshold,precision,recall`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["threshold", "precision", "recall"])?;
        for p in &self.points {
            w.write_record([p.threshold.to_string(), p.precision.to_string(), p.recall.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Precision and recall of one channel at every candidate threshold. The
/// candidates are the grid plus this channel's observed probabilities.
pub fn pr_curve(gold: &GoldStandard, pred: &PredictionSet, label: &str) -> Result<PrCurve, MetricsError> {
    let channel = gold
        .channels
        .iter()
        .position(|c| c == label)
        .ok_or_else(|| MetricsError::UnknownLabel(label.to_string()))?;
    let cells = channel_cells(gold, pred)?.swap_remove(channel);
    let candidates = candidate_thresholds(cells.positives.iter().chain(&cells.negatives).copied());
    let points = candidates
        .into_iter()
        .map(|t| {
            let c = cells.confusion(t);
            PrPoint {
                threshold: t,
                precision: c.precision(),
                recall: c.recall(),
            }
        })
        .collect();
    let warning = cells.positives.is_empty().then(|| {
        let msg = format!("channel `{label}` has no gold positives; recall is 0 everywhere");
        warn!("{msg}");
        msg
    });
    Ok(PrCurve {
        label: label.to_string(),
        points,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::confusion;
    use crate::metrics::tests::{fixture, RawDoc};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_and_observed_values() {
        let c = candidate_thresholds([0.1234, 0.5]);
        assert_eq!(c.len(), 1002);
        assert_eq!(c[0], 0.0);
        assert_eq!(*c.last().unwrap(), 1.0);
        assert!(c.contains(&0.1234));
        assert!(c.windows(2).all(|w| w[0] < w[1]));

        let many: Vec<f64> = (0..10_001).map(|i| f64::from(i) / 10_001.0 + 1e-7).collect();
        assert_eq!(candidate_thresholds(many).len(), 1001);
    }

    /// Exhaustive grid check: F1 is 1.0 exactly on (0.1, 0.9], so the first
    /// winning candidate is 0.101.
    #[test]
    fn separated_probabilities() {
        let (g, p) = fixture(
            &[(
                vec![vec![1], vec![0], vec![1], vec![0]],
                vec![vec![0.9], vec![0.1], vec![0.9], vec![0.1]],
            )],
            1,
        );
        let winners: Vec<f64> = candidate_thresholds([0.1, 0.9])
            .into_iter()
            .filter(|&t| score_at(&g, &p, t) == 1.0)
            .collect();
        assert_eq!(winners.first(), Some(&0.101));
        assert_eq!(winners.last(), Some(&0.9));

        let s = sweep_threshold(&g, &p).unwrap();
        assert_eq!(s.threshold, 0.101);
        assert_eq!(s.report.micro.f1, 1.0);
        assert!(!s.report.degenerate);
    }

    fn score_at(g: &GoldStandard, p: &PredictionSet, t: f64) -> f64 {
        super::super::score(&confusion(g, p, t).unwrap()).micro.f1
    }

    #[test]
    fn all_zero_probabilities_pick_zero() {
        let (g, p) = fixture(
            &[(vec![vec![1], vec![0], vec![1]], vec![vec![0.0], vec![0.0], vec![0.0]])],
            1,
        );
        let s = sweep_threshold(&g, &p).unwrap();
        assert_eq!(s.threshold, 0.0);
        assert_eq!(s.report.micro.f1, 0.8);
        assert!(s.report.degenerate);
    }

    #[test]
    fn certain_single_cell_ties_to_zero() {
        let (g, p) = fixture(&[(vec![vec![1]], vec![vec![1.0]])], 1);
        let s = sweep_threshold(&g, &p).unwrap();
        assert_eq!(s.threshold, 0.0);
        assert_eq!(s.report.micro.f1, 1.0);
    }

    #[test]
    fn empty_prediction_set() {
        let (g, _) = fixture(&[], 1);
        assert_eq!(
            sweep_threshold(&g, &PredictionSet::default()).unwrap_err(),
            MetricsError::Empty
        );
    }

    #[test]
    fn curve_reaches_perfect_point() {
        let (g, p) = fixture(&[(vec![vec![1], vec![0]], vec![vec![0.9], vec![0.1]])], 1);
        let curve = pr_curve(&g, &p, "C0").unwrap();
        assert!(curve.points.iter().any(|pt| pt.precision == 1.0 && pt.recall == 1.0));
        assert!(curve.warning.is_none());
        assert_eq!(
            pr_curve(&g, &p, "X").unwrap_err(),
            MetricsError::UnknownLabel("X".into())
        );
    }

    #[test]
    fn curve_without_positives_warns() {
        let (g, p) = fixture(&[(vec![vec![0], vec![0]], vec![vec![0.7], vec![0.1]])], 1);
        let curve = pr_curve(&g, &p, "C0").unwrap();
        assert!(curve.points.iter().all(|pt| pt.recall == 0.0));
        assert!(curve.warning.is_some());
    }

    #[test]
    fn csv_header() {
        let (g, p) = fixture(&[(vec![vec![1]], vec![vec![0.5]])], 1);
        let mut buf = Vec::new();
        pr_curve(&g, &p, "C0").unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("threshold,precision,recall\n0,1,1\n"));
    }

    /// Monte-Carlo: uniform scores carry no signal, so precision sits at the
    /// prevalence for any low threshold.
    #[test]
    fn uniform_scores_give_prevalence_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let prevalence = 0.3;
        let rows: Vec<(u8, f64)> = (0..10_000)
            .map(|_| (u8::from(rng.random_bool(prevalence)), rng.random::<f64>()))
            .collect();
        let (g, p) = fixture(
            &[(
                rows.iter().map(|r| vec![r.0]).collect(),
                rows.iter().map(|r| vec![r.1]).collect(),
            )],
            1,
        );
        let curve = pr_curve(&g, &p, "C0").unwrap();
        for pt in curve.points.iter().filter(|pt| pt.threshold <= 0.2) {
            assert!((pt.precision - prevalence).abs() < 0.05, "{pt:?}");
        }
    }

    fn instance() -> impl Strategy<Value = (Vec<RawDoc>, usize)> {
        (1usize..=3).prop_flat_map(|width| {
            let doc = (1usize..=6).prop_flat_map(move |rows| {
                (
                    prop::collection::vec(prop::collection::vec(0u8..=1, width), rows),
                    prop::collection::vec(
                        prop::collection::vec(prop::sample::select(vec![0.0, 0.05, 0.3, 0.3, 0.5, 0.77, 1.0]), width),
                        rows,
                    ),
                )
            });
            (prop::collection::vec(doc, 1..=4), Just(width))
        })
    }

    proptest! {
        #[test]
        fn sweep_beats_every_candidate((docs, width) in instance()) {
            let (g, p) = fixture(&docs, width);
            let s = sweep_threshold(&g, &p).unwrap();
            let observed = p.docs.iter().flat_map(|d| d.probs.iter().flatten().copied());
            for t in candidate_thresholds(observed) {
                let f1 = score_at(&g, &p, t);
                prop_assert!(s.report.micro.f1 >= f1);
                if t < s.threshold {
                    prop_assert!(f1 < s.report.micro.f1);
                }
            }
        }

        #[test]
        fn recall_never_increases((docs, width) in instance()) {
            let (g, p) = fixture(&docs, width);
            for label in g.channels.clone() {
                let curve = pr_curve(&g, &p, &label).unwrap();
                prop_assert!(curve.points.windows(2).all(|w| w[0].threshold < w[1].threshold));
                prop_assert!(curve.points.windows(2).all(|w| w[1].recall <= w[0].recall));
            }
        }

        #[test]
        fn document_order_is_irrelevant((docs, width) in instance(), rotate in 0usize..4) {
            let (g, p) = fixture(&docs, width);
            let mut g2 = g.clone();
            let mut p2 = p.clone();
            let k = rotate % g2.docs.len();
            g2.docs.rotate_left(k);
            p2.docs.reverse();
            prop_assert_eq!(evaluate(&g, &p, 0.3).unwrap(), evaluate(&g2, &p2, 0.3).unwrap());
            prop_assert_eq!(sweep_threshold(&g, &p).unwrap(), sweep_threshold(&g2, &p2).unwrap());
        }
    }
}
