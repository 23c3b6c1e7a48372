//! Conformal prediction intervals over a candidate grid.
//!
//! A candidate `q` for the unknown target is kept when its conformal p-value
//! reaches `alpha`. The p-value compares the conformity score of `(x, q)`
//! with a reference set of scores; the four methods differ only in where
//! that reference set comes from:
//!
//! * [`SplitConformal`]: one model, scores from a held-out half.
//! * [`AggregatedConformal::cross`]: `K` folds, p-values averaged.
//! * [`AggregatedConformal::bootstrap`]: `B` resamples scored on their
//!   out-of-bag rows, p-values averaged.
//! * [`FullConformal`]: a refit per candidate on the augmented training set.

mod full;
mod inductive;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::interval::PredictionInterval;
use crate::kde::{Bandwidth, KdeError, KdeModel};
use crate::learners::{Learner, LearnerError, Regressor};

pub use full::FullConformal;
pub use inductive::{AggregatedConformal, CalibratedSource, SourceKind, SplitConformal};

/// Grid size used for full conformal unless overridden.
pub const FULL_GRID_POINTS: usize = 100;
/// Grid size used by the inductive methods unless overridden.
pub const INDUCTIVE_GRID_POINTS: usize = 1000;

#[derive(Debug, Error)]
pub enum ConformalError {
    #[error("alpha must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("reference score set is empty")]
    EmptyReference,
    #[error("grid half-width must be positive and finite, got {0}")]
    BadHalfWidth(f64),
    #[error("grid needs at least 2 points, got {0}")]
    TooFewGridPoints(usize),
    #[error("need at least {min} training rows, got {got}")]
    TooFewRows { min: usize, got: usize },
    #[error("fold count {k} must lie in [2, n/2] for n = {n}")]
    FoldCount { k: usize, n: usize },
    #[error("need at least 2 bootstrap resamples, got {0}")]
    TooFewResamples(usize),
    #[error("KDE conformity measure used before a density was fitted")]
    UnfittedKde,
    #[error("{kind} {index}: {source}")]
    Source {
        kind: SourceKind,
        index: usize,
        #[source]
        source: Box<ConformalError>,
    },
    #[error("candidate {index}: {source}")]
    Candidate {
        index: usize,
        #[source]
        source: Box<ConformalError>,
    },
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Kde(#[from] KdeError),
}

/// Which conformity measure to calibrate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConformityKind {
    /// `|prediction - target|`.
    #[default]
    AbsoluteResidual,
    /// `-ln p(target - prediction)` under a Gaussian KDE of the signed
    /// calibration residuals.
    KdeNegLogDensity {
        #[serde(default)]
        bandwidth: Bandwidth,
    },
}

impl ConformityKind {
    pub fn kde_auto() -> Self {
        ConformityKind::KdeNegLogDensity { bandwidth: Bandwidth::Auto }
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            ConformityKind::AbsoluteResidual => "abs",
            ConformityKind::KdeNegLogDensity { .. } => "kde",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureKind {
    AbsoluteResidual,
    KdeNegLogDensity,
}

/// A calibrated conformity measure; larger scores are stranger.
#[derive(Debug, Clone)]
pub struct ConformityMeasure {
    kind: MeasureKind,
    kde: Option<KdeModel>,
}

impl ConformityMeasure {
    pub fn new(kind: MeasureKind, kde: Option<KdeModel>) -> Self {
        Self { kind, kde }
    }

    pub fn absolute_residual() -> Self {
        Self { kind: MeasureKind::AbsoluteResidual, kde: None }
    }

    pub fn kde(model: KdeModel) -> Self {
        Self { kind: MeasureKind::KdeNegLogDensity, kde: Some(model) }
    }

    /// Builds the measure from signed calibration residuals `y - f(x)`.
    pub fn calibrate(kind: &ConformityKind, residuals: &[f64]) -> Result<Self, ConformalError> {
        Ok(match kind {
            ConformityKind::AbsoluteResidual => Self::absolute_residual(),
            ConformityKind::KdeNegLogDensity { bandwidth } => {
                Self::kde(KdeModel::fit(residuals, bandwidth)?)
            }
        })
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    pub fn kde_model(&self) -> Option<&KdeModel> {
        self.kde.as_ref()
    }

    pub fn score(&self, prediction: f64, target: f64) -> Result<f64, ConformalError> {
        match self.kind {
            MeasureKind::AbsoluteResidual => Ok((prediction - target).abs()),
            MeasureKind::KdeNegLogDensity => {
                let kde = self.kde.as_ref().ok_or(ConformalError::UnfittedKde)?;
                Ok(-kde.ln_density(target - prediction))
            }
        }
    }
}

/// How the p-value counts the reference set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueConvention {
    /// `#{R_i > R_test} / (l + 1)`.
    #[default]
    Strict,
    /// `(#{R_i >= R_test} + 1) / (l + 1)`.
    Inclusive,
}

/// Conformal p-value of `test_score` against `reference`.
pub fn p_value(reference: &[f64], test_score: f64) -> Result<f64, ConformalError> {
    p_value_with(reference, test_score, PValueConvention::Strict)
}

pub fn p_value_with(
    reference: &[f64],
    test_score: f64,
    convention: PValueConvention,
) -> Result<f64, ConformalError> {
    if reference.is_empty() {
        return Err(ConformalError::EmptyReference);
    }
    let l = reference.len() as f64;
    Ok(match convention {
        PValueConvention::Strict => {
            reference.iter().filter(|&&r| r > test_score).count() as f64 / (l + 1.0)
        }
        PValueConvention::Inclusive => {
            (reference.iter().filter(|&&r| r >= test_score).count() as f64 + 1.0) / (l + 1.0)
        }
    })
}

/// Reference scores kept sorted so each p-value is a binary search.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedScores(Vec<f64>);

impl SortedScores {
    pub fn new(mut scores: Vec<f64>) -> Result<Self, ConformalError> {
        if scores.is_empty() {
            return Err(ConformalError::EmptyReference);
        }
        scores.sort_by(f64::total_cmp);
        Ok(Self(scores))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn p_value(&self, test_score: f64, convention: PValueConvention) -> f64 {
        let l = self.0.len();
        match convention {
            PValueConvention::Strict => {
                let greater = l - self.0.partition_point(|&s| s <= test_score);
                greater as f64 / (l + 1) as f64
            }
            PValueConvention::Inclusive => {
                let at_least = l - self.0.partition_point(|&s| s < test_score);
                (at_least + 1) as f64 / (l + 1) as f64
            }
        }
    }
}

/// Evenly spaced candidate targets `center +/- half_width`.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGrid {
    pub values: Vec<f64>,
    pub center: f64,
    pub half_width: f64,
}

impl CandidateGrid {
    pub fn build(center: f64, half_width: f64, points: usize) -> Result<Self, ConformalError> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(ConformalError::BadHalfWidth(half_width));
        }
        if points < 2 {
            return Err(ConformalError::TooFewGridPoints(points));
        }
        let lo = center - half_width;
        let step = 2.0 * half_width / (points - 1) as f64;
        let mut values: Vec<f64> = (0..points).map(|i| lo + i as f64 * step).collect();
        values[points - 1] = center + half_width;
        Ok(Self { values, center, half_width })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn step(&self) -> f64 {
        2.0 * self.half_width / (self.values.len() - 1) as f64
    }
}

/// Placement of the candidate grid: half-width `W` and number of points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub half_width: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn around(&self, center: f64) -> Result<CandidateGrid, ConformalError> {
        CandidateGrid::build(center, self.half_width, self.points)
    }
}

/// p-values over a grid, plus the per-source matrix for aggregated methods.
#[derive(Debug, Clone, PartialEq)]
pub struct PValueTable {
    pub candidates: Vec<f64>,
    pub p_values: Vec<f64>,
    /// `per_source[k][j]` is source `k`'s p-value for candidate `j`.
    pub per_source: Option<Vec<Vec<f64>>>,
}

impl PValueTable {
    pub fn accepted(&self, alpha: f64) -> Vec<f64> {
        self.candidates
            .iter()
            .zip(&self.p_values)
            .filter(|(_, &p)| p >= alpha)
            .map(|(&q, _)| q)
            .collect()
    }

    pub fn interval(&self, alpha: f64) -> PredictionInterval {
        PredictionInterval::from_accepted(self.accepted(alpha), 1.0 - alpha)
    }

    /// Writes `candidate,source,p_value` rows: one block per source, then
    /// the aggregate under source `agg`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["candidate", "source", "p_value"])?;
        if let Some(sources) = &self.per_source {
            for (k, row) in sources.iter().enumerate() {
                for (q, p) in self.candidates.iter().zip(row) {
                    w.write_record([q.to_string(), k.to_string(), p.to_string()])?;
                }
            }
        }
        for (q, p) in self.candidates.iter().zip(&self.p_values) {
            w.write_record([q.to_string(), "agg".to_string(), p.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<(), ConformalError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(ConformalError::BadAlpha(alpha))
    }
}

/// Common interface of the four conformal methods once calibrated.
pub trait ConformalPredictor: Sync {
    /// Point prediction the candidate grid is centred on.
    fn center(&self, x: &[f64]) -> Result<f64, ConformalError>;

    fn p_values(&self, x: &[f64], grid: &CandidateGrid) -> Result<PValueTable, ConformalError>;

    /// `{q in grid : p(q) >= alpha}` on a grid placed around [`Self::center`].
    fn interval(
        &self,
        x: &[f64],
        grid: &GridSpec,
        alpha: f64,
    ) -> Result<(PredictionInterval, PValueTable), ConformalError> {
        check_alpha(alpha)?;
        let grid = grid.around(self.center(x)?)?;
        let table = self.p_values(x, &grid)?;
        Ok((table.interval(alpha), table))
    }
}

/// Single-shot split conformal: calibrate, then one interval at `x`.
pub fn split_conformal_pi(
    learner: &dyn Learner,
    train: &Dataset,
    x: &[f64],
    grid: &GridSpec,
    alpha: f64,
    kind: &ConformityKind,
    seed: u64,
) -> Result<(PredictionInterval, PValueTable), ConformalError> {
    SplitConformal::calibrate(learner, train, kind, seed)?.interval(x, grid, alpha)
}

#[allow(clippy::too_many_arguments)]
pub fn cross_conformal_pi(
    learner: &dyn Learner,
    train: &Dataset,
    x: &[f64],
    grid: &GridSpec,
    alpha: f64,
    folds: usize,
    kind: &ConformityKind,
    seed: u64,
) -> Result<(PredictionInterval, PValueTable), ConformalError> {
    AggregatedConformal::cross(learner, train, folds, kind, seed)?.interval(x, grid, alpha)
}

#[allow(clippy::too_many_arguments)]
pub fn bootstrap_conformal_pi(
    learner: &dyn Learner,
    train: &Dataset,
    x: &[f64],
    grid: &GridSpec,
    alpha: f64,
    resamples: usize,
    kind: &ConformityKind,
    seed: u64,
) -> Result<(PredictionInterval, PValueTable), ConformalError> {
    AggregatedConformal::bootstrap(learner, train, resamples, kind, seed)?.interval(x, grid, alpha)
}

pub fn full_conformal_pi(
    learner: &dyn Learner,
    train: &Dataset,
    x: &[f64],
    grid: &GridSpec,
    alpha: f64,
    kind: &ConformityKind,
    seed: u64,
) -> Result<(PredictionInterval, PValueTable), ConformalError> {
    FullConformal::new(learner, train, kind.clone(), seed)?.interval(x, grid, alpha)
}

/// Predictions of `model` on `rows` of `data` and the signed residuals.
fn residuals(
    model: &dyn Regressor,
    data: &Dataset,
    rows: impl Iterator<Item = usize>,
) -> Result<(Vec<f64>, Vec<f64>), ConformalError> {
    let mut preds = Vec::new();
    let mut res = Vec::new();
    for i in rows {
        let p = model.predict(data.row(i))?;
        preds.push(p);
        res.push(data.target(i) - p);
    }
    Ok((preds, res))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn absolute_residual_scores() {
        let m = ConformityMeasure::absolute_residual();
        assert_eq!(m.score(3.0, 5.0).unwrap(), 2.0);
        assert_eq!(m.score(4.0, 4.0).unwrap(), 0.0);
    }

    #[test]
    fn kde_score_grows_away_from_mode() {
        let kind = ConformityKind::KdeNegLogDensity { bandwidth: Bandwidth::Fixed(1.0) };
        let m = ConformityMeasure::calibrate(&kind, &[-1.0, 0.0, 1.0]).unwrap();
        // oracle: direct three-term Gaussian sums
        let phi = |u: f64| (-(u * u) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let p0 = (phi(1.0) + phi(0.0) + phi(-1.0)) / 3.0;
        let p3 = (phi(4.0) + phi(3.0) + phi(2.0)) / 3.0;
        let s0 = m.score(10.0, 10.0).unwrap();
        let s3 = m.score(10.0, 13.0).unwrap();
        assert!((s0 + p0.ln()).abs() < 1e-12);
        assert!((s3 + p3.ln()).abs() < 1e-12);
        assert!(s0 < s3);
    }

    #[test]
    fn unfitted_kde_is_an_error() {
        let m = ConformityMeasure::new(MeasureKind::KdeNegLogDensity, None);
        assert!(matches!(m.score(0.0, 1.0), Err(ConformalError::UnfittedKde)));
    }

    #[test]
    fn p_value_counts() {
        let c = [0.5, 1.0, 2.0, 3.0];
        assert_eq!(p_value(&c, 1.5).unwrap(), 0.4);
        assert_eq!(p_value(&c, 10.0).unwrap(), 0.0);
        assert_eq!(p_value(&c, 0.0).unwrap(), 0.8);
        assert!(matches!(p_value(&[], 0.0), Err(ConformalError::EmptyReference)));
        assert_eq!(p_value_with(&c, 1.0, PValueConvention::Inclusive).unwrap(), 4.0 / 5.0);
    }

    #[test]
    fn grids() {
        assert_eq!(CandidateGrid::build(0.0, 1.0, 3).unwrap().values, vec![-1.0, 0.0, 1.0]);
        assert_eq!(CandidateGrid::build(5.0, 2.0, 5).unwrap().values, vec![3.0, 4.0, 5.0, 6.0, 7.0]);
        let g = CandidateGrid::build(22.5, 13.135, 1000).unwrap();
        assert_eq!(g.len(), 1000);
        assert_eq!(g.values[0], 22.5 - 13.135);
        assert_eq!(g.values[999], 22.5 + 13.135);
        assert!((g.step() - 2.0 * 13.135 / 999.0).abs() < 1e-15);
        assert!(CandidateGrid::build(0.0, 0.0, 10).is_err());
        assert!(CandidateGrid::build(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn table_csv_layout() {
        let t = PValueTable {
            candidates: vec![0.0, 1.0],
            p_values: vec![0.5, 0.25],
            per_source: Some(vec![vec![0.5, 0.0], vec![0.5, 0.5]]),
        };
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "candidate,source,p_value");
        assert_eq!(lines[1], "0,0,0.5");
        assert_eq!(lines[4], "1,1,0.5");
        assert_eq!(lines[6], "1,agg,0.25");
        assert_eq!(lines.len(), 7);
    }

    proptest! {
        #[test]
        fn sorted_scores_match_linear_count(scores in prop::collection::vec(-5.0f64..5.0, 1..60),
                                            t in -6.0f64..6.0, pick in 0usize..60) {
            let s = SortedScores::new(scores.clone()).unwrap();
            // also probe exact ties
            let probe = if pick < scores.len() { scores[pick] } else { t };
            for conv in [PValueConvention::Strict, PValueConvention::Inclusive] {
                prop_assert_eq!(s.p_value(probe, conv), p_value_with(&scores, probe, conv).unwrap());
            }
        }

        #[test]
        fn p_value_on_lattice(scores in prop::collection::vec(-5.0f64..5.0, 1..60), t in -6.0f64..6.0) {
            let l = scores.len() as f64;
            let p = p_value(&scores, t).unwrap();
            let k = p * (l + 1.0);
            prop_assert!((k - k.round()).abs() < 1e-9);
            prop_assert!((0.0..=l / (l + 1.0)).contains(&p));
        }

        #[test]
        fn grid_invariants(center in -1e3f64..1e3, hw in 1e-3f64..1e3, m in 2usize..3000) {
            let g = CandidateGrid::build(center, hw, m).unwrap();
            prop_assert_eq!(g.values.len(), m);
            prop_assert!(g.values.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(g.values[0], center - hw);
            prop_assert_eq!(g.values[m - 1], center + hw);
        }
    }
}
