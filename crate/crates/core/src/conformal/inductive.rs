use std::fmt;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{
    residuals, CandidateGrid, ConformalError, ConformalPredictor, ConformityKind, ConformityMeasure,
    PValueConvention, PValueTable, SortedScores,
};
use crate::bootstrap::member_seeds;
use crate::data::{self, Dataset};
use crate::learners::{Learner, Regressor};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    Split,
    Fold,
    Resample,
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceKind::Split => "split",
            SourceKind::Fold => "fold",
            SourceKind::Resample => "resample",
        })
    }
}

/// One fitted model with conformity scores from rows it never saw.
pub struct CalibratedSource {
    pub model: Box<dyn Regressor>,
    pub measure: ConformityMeasure,
    pub scores: SortedScores,
}

impl CalibratedSource {
    /// Fits on `proper` rows and scores the `calibration` rows of `data`.
    /// A KDE measure is fitted to this source's own calibration residuals.
    pub fn fit(
        learner: &dyn Learner,
        data: &Dataset,
        proper: &[usize],
        calibration: &[usize],
        kind: &ConformityKind,
        fit_seed: u64,
    ) -> Result<Self, ConformalError> {
        let model = learner.fit(&data.subset(proper)?, fit_seed)?;
        let (preds, res) = residuals(model.as_ref(), data, calibration.iter().copied())?;
        let measure = ConformityMeasure::calibrate(kind, &res)?;
        let scores = preds
            .iter()
            .zip(calibration)
            .map(|(&p, &i)| measure.score(p, data.target(i)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { model, measure, scores: SortedScores::new(scores)? })
    }

    fn p_values(
        &self,
        x: &[f64],
        grid: &CandidateGrid,
        convention: PValueConvention,
    ) -> Result<Vec<f64>, ConformalError> {
        let pred = self.model.predict(x)?;
        grid.values
            .iter()
            .map(|&q| Ok(self.scores.p_value(self.measure.score(pred, q)?, convention)))
            .collect()
    }
}

/// Split conformal: half the rows train the model, the other half calibrate.
pub struct SplitConformal {
    source: CalibratedSource,
    convention: PValueConvention,
}

impl SplitConformal {
    /// Random even split (proper half gets `floor(n/2)` rows); one training.
    pub fn calibrate(
        learner: &dyn Learner,
        train: &Dataset,
        kind: &ConformityKind,
        seed: u64,
    ) -> Result<Self, ConformalError> {
        let n = train.n_rows();
        if n < 4 {
            return Err(ConformalError::TooFewRows { min: 4, got: n });
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(seed, 0));
        let (proper, calibration) = order.split_at(n / 2);
        let source =
            CalibratedSource::fit(learner, train, proper, calibration, kind, rng::substream_seed(seed, 1))
                .map_err(|e| ConformalError::Source {
                    kind: SourceKind::Split,
                    index: 0,
                    source: Box::new(e),
                })?;
        Ok(Self { source, convention: PValueConvention::Strict })
    }

    pub fn with_convention(mut self, convention: PValueConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn source(&self) -> &CalibratedSource {
        &self.source
    }

    /// Calibration scores, ascending.
    pub fn calibration_scores(&self) -> &[f64] {
        self.source.scores.as_slice()
    }
}

impl ConformalPredictor for SplitConformal {
    fn center(&self, x: &[f64]) -> Result<f64, ConformalError> {
        Ok(self.source.model.predict(x)?)
    }

    fn p_values(&self, x: &[f64], grid: &CandidateGrid) -> Result<PValueTable, ConformalError> {
        Ok(PValueTable {
            candidates: grid.values.clone(),
            p_values: self.source.p_values(x, grid, self.convention)?,
            per_source: None,
        })
    }
}

/// Aggregated conformal predictor: per-source p-values averaged over
/// folds (cross-conformal) or bootstrap resamples.
pub struct AggregatedConformal {
    sources: Vec<CalibratedSource>,
    kind: SourceKind,
    convention: PValueConvention,
}

impl AggregatedConformal {
    /// `k` trainings, one per held-out fold; requires `2 <= k <= n/2`.
    pub fn cross(
        learner: &dyn Learner,
        train: &Dataset,
        k: usize,
        kind: &ConformityKind,
        seed: u64,
    ) -> Result<Self, ConformalError> {
        let n = train.n_rows();
        if k < 2 || k > n / 2 {
            return Err(ConformalError::FoldCount { k, n });
        }
        let folds = data::kfold_split(n, k, rng::substream_seed(seed, 0))?;
        let sources = (0..k)
            .into_par_iter()
            .map(|fold| {
                let fit_seed = rng::substream_seed(seed, fold as u64 + 1);
                CalibratedSource::fit(
                    learner,
                    train,
                    &folds.complement(fold),
                    &folds.fold(fold),
                    kind,
                    fit_seed,
                )
                .map_err(|e| ConformalError::Source { kind: SourceKind::Fold, index: fold, source: Box::new(e) })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { sources, kind: SourceKind::Fold, convention: PValueConvention::Strict })
    }

    /// `b` trainings on bootstrap resamples, each calibrated on its own
    /// out-of-bag rows. Resamples use the same seeding as
    /// [`crate::bootstrap::train_ensemble`].
    pub fn bootstrap(
        learner: &dyn Learner,
        train: &Dataset,
        b: usize,
        kind: &ConformityKind,
        seed: u64,
    ) -> Result<Self, ConformalError> {
        if b < 2 {
            return Err(ConformalError::TooFewResamples(b));
        }
        let n = train.n_rows();
        let sources = (0..b)
            .into_par_iter()
            .map(|member| {
                let (resample_seed, fit_seed) = member_seeds(seed, member);
                let wrap = |e| ConformalError::Source {
                    kind: SourceKind::Resample,
                    index: member,
                    source: Box::new(e),
                };
                let r = data::bootstrap_resample(n, resample_seed).map_err(|e| wrap(e.into()))?;
                CalibratedSource::fit(learner, train, &r.in_bag, &r.out_of_bag, kind, fit_seed).map_err(wrap)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { sources, kind: SourceKind::Resample, convention: PValueConvention::Strict })
    }

    /// Aggregates already calibrated sources.
    pub fn from_sources(sources: Vec<CalibratedSource>, kind: SourceKind) -> Result<Self, ConformalError> {
        if sources.is_empty() {
            return Err(ConformalError::EmptyReference);
        }
        Ok(Self { sources, kind, convention: PValueConvention::Strict })
    }

    pub fn with_convention(mut self, convention: PValueConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn sources(&self) -> &[CalibratedSource] {
        &self.sources
    }

    pub fn source_kind(&self) -> SourceKind {
        self.kind
    }
}

impl ConformalPredictor for AggregatedConformal {
    /// Mean of the source models' predictions.
    fn center(&self, x: &[f64]) -> Result<f64, ConformalError> {
        let mut total = 0.0;
        for s in &self.sources {
            total += s.model.predict(x)?;
        }
        Ok(total / self.sources.len() as f64)
    }

    fn p_values(&self, x: &[f64], grid: &CandidateGrid) -> Result<PValueTable, ConformalError> {
        let per_source = self
            .sources
            .iter()
            .map(|s| s.p_values(x, grid, self.convention))
            .collect::<Result<Vec<_>, _>>()?;
        let k = per_source.len() as f64;
        let p_values = (0..grid.len())
            .map(|j| per_source.iter().map(|row| row[j]).sum::<f64>() / k)
            .collect();
        Ok(PValueTable { candidates: grid.values.clone(), p_values, per_source: Some(per_source) })
    }
}
