//! Coverage and width metrics, the Agresti–Coull validity test, conditional
//! coverage bins and the training-burden ledger.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::interval::PredictionInterval;
use crate::learners::{Learner, LearnerError, Regressor};
use crate::stats;

/// Significance level of the validity test unless overridden.
pub const DEFAULT_ALPHA_TEST: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum EvaluationError {
    #[error("no outcomes to summarize")]
    Empty,
    #[error("hits {hits} outside [0, {n}]")]
    HitsOutOfRange { hits: u64, n: u64 },
    #[error("binomial test needs n > 0")]
    ZeroTrials,
    #[error("test level must lie in (0, 1), got {0}")]
    BadTestLevel(f64),
    #[error("{keys} keys for {outcomes} outcomes")]
    KeyCount { keys: usize, outcomes: usize },
    #[error("bin edges must be finite and strictly increasing")]
    BadEdges,
    #[error("key {0} is not a finite number")]
    NonFiniteKey(f64),
}

/// One interval scored against the target it was meant to cover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiOutcome {
    pub interval: PredictionInterval,
    pub true_target: f64,
    /// `lower <= y <= upper` on a non-empty interval.
    pub hit: bool,
    /// Zero for an empty interval.
    pub width: f64,
}

impl PiOutcome {
    pub fn new(interval: PredictionInterval, true_target: f64) -> Self {
        let hit = interval.contains(true_target);
        let width = interval.width();
        Self { interval, true_target, hit, width }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub coverage: f64,
    pub mean_width: f64,
    pub se_coverage: f64,
    pub se_width: f64,
    pub count: usize,
    pub hits: usize,
    pub empty_count: usize,
}

/// Hit rate and mean width, each with `sd / sqrt(count)` standard errors.
/// Empty intervals count as misses of width zero.
pub fn coverage_and_width(outcomes: &[PiOutcome]) -> Result<CoverageSummary, EvaluationError> {
    if outcomes.is_empty() {
        return Err(EvaluationError::Empty);
    }
    let hits: Vec<f64> = outcomes.iter().map(|o| if o.hit { 1.0 } else { 0.0 }).collect();
    let widths: Vec<f64> = outcomes.iter().map(|o| o.width).collect();
    Ok(CoverageSummary {
        coverage: stats::mean(&hits),
        mean_width: stats::mean(&widths),
        se_coverage: stats::standard_error(&hits),
        se_width: stats::standard_error(&widths),
        count: outcomes.len(),
        hits: outcomes.iter().filter(|o| o.hit).count(),
        empty_count: outcomes.iter().filter(|o| o.interval.empty).count(),
    })
}

/// Mean over replicates, with standard errors taken across the replicate
/// means rather than over the pooled observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateAggregate {
    pub replicates: usize,
    pub coverage: f64,
    pub mean_width: f64,
    pub se_coverage: f64,
    pub se_width: f64,
    pub total_hits: usize,
    pub total_points: usize,
    pub empty_count: usize,
}

pub fn aggregate_replicates(rows: &[CoverageSummary]) -> Result<ReplicateAggregate, EvaluationError> {
    if rows.is_empty() {
        return Err(EvaluationError::Empty);
    }
    let cov: Vec<f64> = rows.iter().map(|r| r.coverage).collect();
    let width: Vec<f64> = rows.iter().map(|r| r.mean_width).collect();
    Ok(ReplicateAggregate {
        replicates: rows.len(),
        coverage: stats::mean(&cov),
        mean_width: stats::mean(&width),
        se_coverage: stats::standard_error(&cov),
        se_width: stats::standard_error(&width),
        total_hits: rows.iter().map(|r| r.hits).sum(),
        total_points: rows.iter().map(|r| r.count).sum(),
        empty_count: rows.iter().map(|r| r.empty_count).sum(),
    })
}

/// Outcome of the Agresti–Coull test of an observed coverage against its
/// nominal level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgrestiCoull {
    pub valid: bool,
    /// Adjusted proportion `(hits + z^2/2) / (n + z^2)`.
    pub center: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Adjusted Wald interval for a binomial proportion; `valid` when the
/// nominal coverage lies inside it.
///
/// The raw interval can poke outside `[0, 1]` near the boundary. Reported
/// endpoints are clipped to the unit interval, and a nominal level of exactly
/// 0 or 1 is never declared valid.
pub fn agresti_coull_valid(
    hits: u64,
    n: u64,
    nominal: f64,
    alpha_test: f64,
) -> Result<AgrestiCoull, EvaluationError> {
    if n == 0 {
        return Err(EvaluationError::ZeroTrials);
    }
    if hits > n {
        return Err(EvaluationError::HitsOutOfRange { hits, n });
    }
    if !(alpha_test > 0.0 && alpha_test < 1.0) {
        return Err(EvaluationError::BadTestLevel(alpha_test));
    }
    let z = stats::normal_quantile(1.0 - alpha_test / 2.0);
    let z2 = z * z;
    let n_adj = n as f64 + z2;
    let center = (hits as f64 + z2 / 2.0) / n_adj;
    let half = z * (center * (1.0 - center) / n_adj).sqrt();
    let (lo, hi) = (center - half, center + half);
    let valid = nominal > 0.0 && nominal < 1.0 && lo <= nominal && nominal <= hi;
    Ok(AgrestiCoull { valid, center, ci_low: lo.max(0.0), ci_high: hi.min(1.0) })
}

/// Coverage restricted to one bin of a feature or of the predicted target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub label: String,
    pub count: usize,
    pub hits: usize,
    /// Absent for an empty bin.
    pub coverage: Option<f64>,
    pub mean_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalBinReport {
    pub bins: Vec<BinStats>,
}

impl ConditionalBinReport {
    pub fn total_count(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// Count-weighted coverage over all bins.
    pub fn pooled_coverage(&self) -> Option<f64> {
        let n = self.total_count();
        (n > 0).then(|| self.bins.iter().map(|b| b.hits).sum::<usize>() as f64 / n as f64)
    }
}

fn fill_bins(labels: Vec<String>, slot: impl Iterator<Item = usize>, outcomes: &[PiOutcome]) -> ConditionalBinReport {
    let mut count = vec![0usize; labels.len()];
    let mut hits = vec![0usize; labels.len()];
    let mut width = vec![0.0; labels.len()];
    for (b, o) in slot.zip(outcomes) {
        count[b] += 1;
        hits[b] += o.hit as usize;
        width[b] += o.width;
    }
    let bins = labels
        .into_iter()
        .enumerate()
        .map(|(b, label)| BinStats {
            label,
            count: count[b],
            hits: hits[b],
            coverage: (count[b] > 0).then(|| hits[b] as f64 / count[b] as f64),
            mean_width: (count[b] > 0).then(|| width[b] / count[b] as f64),
        })
        .collect();
    ConditionalBinReport { bins }
}

/// Bins on a numeric key. Edges `e_1 < ... < e_k` give `k + 1` bins:
/// `(-inf, e_1)`, `[e_1, e_2)`, ..., `[e_k, inf)`.
pub fn binned_coverage(
    outcomes: &[PiOutcome],
    keys: &[f64],
    edges: &[f64],
) -> Result<ConditionalBinReport, EvaluationError> {
    if keys.len() != outcomes.len() {
        return Err(EvaluationError::KeyCount { keys: keys.len(), outcomes: outcomes.len() });
    }
    if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvaluationError::BadEdges);
    }
    if let Some(&bad) = keys.iter().find(|k| !k.is_finite()) {
        return Err(EvaluationError::NonFiniteKey(bad));
    }
    let mut labels = Vec::with_capacity(edges.len() + 1);
    match edges {
        [] => labels.push("all".to_string()),
        [first, .., last] | [first @ last] => {
            labels.push(format!("<{first}"));
            labels.extend(edges.windows(2).map(|w| format!("{}-{}", w[0], w[1])));
            labels.push(format!(">={last}"));
        }
    }
    let slot = keys.iter().map(|k| edges.partition_point(|e| e <= k));
    Ok(fill_bins(labels, slot, outcomes))
}

/// Bins on a categorical key. Keys outside `categories` land in a trailing
/// `other` bin, which is always reported.
pub fn categorical_coverage(
    outcomes: &[PiOutcome],
    keys: &[String],
    categories: &[String],
) -> Result<ConditionalBinReport, EvaluationError> {
    if keys.len() != outcomes.len() {
        return Err(EvaluationError::KeyCount { keys: keys.len(), outcomes: outcomes.len() });
    }
    let mut labels = categories.to_vec();
    labels.push("other".to_string());
    let slot = keys
        .iter()
        .map(|k| categories.iter().position(|c| c == k).unwrap_or(categories.len()));
    Ok(fill_bins(labels, slot, outcomes))
}

/// Number of learner fits charged to each method label.
#[derive(Debug, Default)]
pub struct BurdenLedger {
    counts: Mutex<BTreeMap<String, u64>>,
}

impl BurdenLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn charge(&self, label: &str, trainings: u64) {
        let mut counts = self.counts.lock().expect("ledger lock poisoned");
        *counts.entry(label.to_string()).or_default() += trainings;
    }

    pub fn trainings(&self, label: &str) -> u64 {
        self.counts.lock().expect("ledger lock poisoned").get(label).copied().unwrap_or(0)
    }

    pub fn snapshot(&self) -> BTreeMap<String, u64> {
        self.counts.lock().expect("ledger lock poisoned").clone()
    }
}

/// Wraps a learner and counts every call to `fit`, failed ones included.
pub struct CountingLearner<'a> {
    inner: &'a dyn Learner,
    fits: AtomicU64,
}

impl<'a> CountingLearner<'a> {
    pub fn new(inner: &'a dyn Learner) -> Self {
        Self { inner, fits: AtomicU64::new(0) }
    }

    pub fn fits(&self) -> u64 {
        self.fits.load(Ordering::SeqCst)
    }
}

impl Learner for CountingLearner<'_> {
    fn fit(&self, train: &Dataset, seed: u64) -> Result<Box<dyn Regressor>, LearnerError> {
        self.fits.fetch_add(1, Ordering::SeqCst);
        self.inner.fit(train, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(lower: f64, upper: f64, y: f64) -> PiOutcome {
        PiOutcome::new(PredictionInterval::new(lower, upper, 0.9), y)
    }

    fn empty(y: f64) -> PiOutcome {
        PiOutcome::new(PredictionInterval::from_accepted(vec![], 0.9), y)
    }

    #[test]
    fn fractions() {
        let o = vec![outcome(0.0, 2.0, 1.0), outcome(0.0, 2.0, 2.0), outcome(-1.0, 1.0, 0.0), outcome(0.0, 2.0, 3.0)];
        let s = coverage_and_width(&o).unwrap();
        assert_eq!(s.coverage, 0.75);
        assert_eq!(s.mean_width, 2.0);
        assert_eq!(s.se_width, 0.0);
        assert!((s.se_coverage - 0.25).abs() < 1e-15);
        assert_eq!(coverage_and_width(&[]), Err(EvaluationError::Empty));
    }

    #[test]
    fn empty_intervals_are_zero_width_misses() {
        let s = coverage_and_width(&[empty(0.0), empty(1.0)]).unwrap();
        assert_eq!((s.coverage, s.mean_width, s.empty_count), (0.0, 0.0, 2));
    }

    #[test]
    fn replicate_means() {
        let mut rows = Vec::new();
        for r in 0..10 {
            let o: Vec<_> = (0..7).map(|i| outcome(0.0, 1.0 + r as f64, (i * r % 5) as f64)).collect();
            rows.push(coverage_and_width(&o).unwrap());
        }
        let agg = aggregate_replicates(&rows).unwrap();
        let mut c = 0.0;
        let mut w = 0.0;
        for r in &rows {
            c += r.coverage;
            w += r.mean_width;
        }
        assert!((agg.coverage - c / 10.0).abs() < 1e-12);
        assert!((agg.mean_width - w / 10.0).abs() < 1e-12);
        assert_eq!(agg.total_points, 70);
    }

    #[test]
    fn agresti_coull_arithmetic() {
        let ac = agresti_coull_valid(475, 500, 0.95, 0.05).unwrap();
        let z: f64 = 1.959_963_984_540_054;
        let n = 500.0 + z * z;
        let p = (475.0 + z * z / 2.0) / n;
        let h = z * (p * (1.0 - p) / n).sqrt();
        assert!((ac.ci_low - (p - h)).abs() < 1e-12 && (ac.ci_high - (p + h)).abs() < 1e-12);
        assert!((ac.ci_low - 0.9269).abs() < 1e-4 && (ac.ci_high - 0.9662).abs() < 1e-4);
        assert!(ac.valid);
        assert!(!agresti_coull_valid(250, 500, 0.95, 0.05).unwrap().valid);
    }

    #[test]
    fn agresti_coull_boundary() {
        let ac = agresti_coull_valid(500, 500, 1.0, 0.05).unwrap();
        assert!(ac.center < 1.0);
        assert!(!ac.valid);
        assert!(ac.ci_high <= 1.0 && ac.ci_low > 0.0);
        assert!(agresti_coull_valid(0, 500, 0.0, 0.05).unwrap().ci_low >= 0.0);
        assert!(agresti_coull_valid(6, 5, 0.9, 0.05).is_err());
        assert!(agresti_coull_valid(0, 0, 0.9, 0.05).is_err());
    }

    #[test]
    fn categorical_singletons() {
        let o = vec![outcome(0.0, 1.0, 0.5), outcome(0.0, 1.0, 5.0)];
        let keys = vec!["a".to_string(), "b".to_string()];
        let r = categorical_coverage(&o, &keys, &keys).unwrap();
        assert_eq!(r.bins[0].coverage, Some(1.0));
        assert_eq!(r.bins[1].coverage, Some(0.0));
        assert_eq!(r.bins[2].count, 0);
        assert_eq!(r.bins[2].coverage, None);
    }

    #[test]
    fn edge_bins() {
        let keys = [5.0, 10.0, 15.0, 25.0, 39.9, 40.0, 100.0];
        let o: Vec<_> = keys.iter().map(|_| outcome(0.0, 1.0, 0.5)).collect();
        let r = binned_coverage(&o, &keys, &[10.0, 20.0, 30.0, 40.0]).unwrap();
        let labels: Vec<_> = r.bins.iter().map(|b| b.label.as_str()).collect();
        assert_eq!(labels, ["<10", "10-20", "20-30", "30-40", ">=40"]);
        let counts: Vec<_> = r.bins.iter().map(|b| b.count).collect();
        assert_eq!(counts, [1, 2, 1, 1, 2]);
        assert!(binned_coverage(&o, &keys, &[2.0, 1.0]).is_err());
    }

    #[test]
    fn single_bin_equals_marginal() {
        let o: Vec<_> = (0..9).map(|i| outcome(0.0, 1.0, i as f64 * 0.2)).collect();
        let keys = vec![1.0; 9];
        let r = binned_coverage(&o, &keys, &[]).unwrap();
        assert_eq!(r.bins.len(), 1);
        assert_eq!(r.bins[0].coverage, Some(coverage_and_width(&o).unwrap().coverage));
    }

    #[test]
    fn ledger_accumulates() {
        let l = BurdenLedger::new();
        l.charge("split", 1);
        l.charge("split", 1);
        l.charge("cross", 5);
        assert_eq!(l.trainings("split"), 2);
        assert_eq!(l.trainings("none"), 0);
        assert_eq!(l.snapshot().len(), 2);
    }

    #[test]
    fn counting_learner_counts_fits() {
        let spec = crate::learners::LearnerSpec::ridge(1.0);
        let c = CountingLearner::new(&spec);
        let d = Dataset::new(vec![vec![0.0], vec![1.0]], vec![0.0, 1.0]).unwrap();
        c.fit(&d, 0).unwrap();
        c.fit(&d, 1).unwrap();
        assert_eq!(c.fits(), 2);
    }
}
