//! Pivot and percentile bootstrap prediction intervals.
//!
//! Both methods share one [`BootstrapEnsemble`]: `B` regressors, each trained
//! on its own bootstrap resample, with the out-of-bag residuals of every
//! member kept for error estimation. Once trained, intervals for any number
//! of test points cost no further training.

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::data::{self, BootstrapResample, DataError, Dataset};
use crate::interval::PredictionInterval;
use crate::learners::{Learner, LearnerError, Regressor};
use crate::rng;
use crate::stats;

/// Smallest ensemble accepted by the percentile method.
pub const PERCENTILE_MIN_B: usize = 20;
/// Below this the percentile method still runs but logs a warning.
pub const PERCENTILE_RECOMMENDED_B: usize = 1000;

#[derive(Debug, Error)]
pub enum BootstrapError {
    #[error("ensemble needs at least {min} members, got {got}")]
    TooFewMembers { min: usize, got: usize },
    #[error("training set needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("member {member}: {source}")]
    Member {
        member: usize,
        #[source]
        source: MemberError,
    },
    #[error("member {member} has {size} out-of-bag rows, need at least {min}")]
    SmallOutOfBag { member: usize, size: usize, min: usize },
    #[error("alpha must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error(transparent)]
    Learner(#[from] LearnerError),
}

#[derive(Debug, Error)]
pub enum MemberError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
}

pub struct EnsembleMember {
    pub resample: BootstrapResample,
    pub model: Box<dyn Regressor>,
    /// `y - f_b(x)` over this member's out-of-bag rows, in row order.
    pub oob_residuals: Vec<f64>,
}

pub struct BootstrapEnsemble {
    members: Vec<EnsembleMember>,
}

/// Seeds for member `b`: (resample seed, fit seed).
pub fn member_seeds(seed: u64, member: usize) -> (u64, u64) {
    let base = rng::substream_seed(seed, member as u64);
    (rng::substream_seed(base, 0), rng::substream_seed(base, 1))
}

/// Trains `b` members on bootstrap resamples of `train`. Members are trained
/// in parallel; each is a pure function of `(seed, member index)`.
pub fn train_ensemble(
    learner: &dyn Learner,
    train: &Dataset,
    b: usize,
    seed: u64,
) -> Result<BootstrapEnsemble, BootstrapError> {
    if b < 2 {
        return Err(BootstrapError::TooFewMembers { min: 2, got: b });
    }
    if train.n_rows() < 2 {
        return Err(BootstrapError::TooFewRows(train.n_rows()));
    }
    let members = (0..b)
        .into_par_iter()
        .map(|member| {
            let wrap = |source: MemberError| BootstrapError::Member { member, source };
            let (resample_seed, fit_seed) = member_seeds(seed, member);
            let resample = data::bootstrap_resample(train.n_rows(), resample_seed)
                .map_err(|e| wrap(e.into()))?;
            let in_bag = train.subset(&resample.in_bag).map_err(|e| wrap(e.into()))?;
            let model = learner.fit(&in_bag, fit_seed).map_err(|e| wrap(e.into()))?;
            let oob_residuals = resample
                .out_of_bag
                .iter()
                .map(|&i| model.predict(train.row(i)).map(|p| train.target(i) - p))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| wrap(e.into()))?;
            Ok(EnsembleMember { resample, model, oob_residuals })
        })
        .collect::<Result<Vec<_>, BootstrapError>>()?;
    Ok(BootstrapEnsemble { members })
}

/// Per-member out-of-bag error `sum r^2 / (n_oob - 1)`, averaged over members.
///
/// The out-of-bag residuals are used here. The pivot pseudocode also lists an
/// in-bag evaluation `f_b(X*_b)`; that line is read as a typo since the
/// variance formula sums over the out-of-bag set.
pub fn irreducible_error_from_residuals<R: AsRef<[f64]>>(residuals: &[R]) -> Result<f64, BootstrapError> {
    let mut total = 0.0;
    for (member, r) in residuals.iter().enumerate() {
        let r = r.as_ref();
        if r.len() < 2 {
            return Err(BootstrapError::SmallOutOfBag { member, size: r.len(), min: 2 });
        }
        total += r.iter().map(|e| e * e).sum::<f64>() / (r.len() - 1) as f64;
    }
    Ok(total / residuals.len() as f64)
}

/// Components of a pivot interval, kept for inspection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PivotComponents {
    pub bagged_prediction: f64,
    pub prediction_variance: f64,
    pub irreducible_error: f64,
    pub z_critical: f64,
}

impl PivotComponents {
    pub fn half_width(&self) -> f64 {
        self.z_critical * (self.prediction_variance + self.irreducible_error).sqrt()
    }

    pub fn interval(&self, alpha: f64) -> PredictionInterval {
        let h = self.half_width();
        PredictionInterval::new(self.bagged_prediction - h, self.bagged_prediction + h, 1.0 - alpha)
    }
}

/// `z_{1 - alpha/2}` of the standard normal.
pub fn z_critical(alpha: f64) -> f64 {
    stats::normal_quantile(1.0 - alpha / 2.0)
}

/// Residual-adjusted member predictions `g_b = f_b(x) + e_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedPredictionSample {
    pub values: Vec<f64>,
    pub sampled_errors: Vec<f64>,
}

/// `[G_(alpha/2), G_(1 - alpha/2)]` from the empirical distribution of
/// `values`, using the `ceil(p * B)`-th order statistic.
pub fn percentile_interval(values: &[f64], alpha: f64) -> PredictionInterval {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    PredictionInterval::new(
        stats::ecdf_quantile(&sorted, alpha / 2.0),
        stats::ecdf_quantile(&sorted, 1.0 - alpha / 2.0),
        1.0 - alpha,
    )
}

fn check_alpha(alpha: f64) -> Result<(), BootstrapError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(BootstrapError::BadAlpha(alpha))
    }
}

impl BootstrapEnsemble {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[EnsembleMember] {
        &self.members
    }

    pub fn member_predictions(&self, x: &[f64]) -> Result<Vec<f64>, BootstrapError> {
        self.members.iter().map(|m| m.model.predict(x).map_err(Into::into)).collect()
    }

    /// Mean of the member predictions.
    pub fn bagged_prediction(&self, x: &[f64]) -> Result<f64, BootstrapError> {
        Ok(stats::mean(&self.member_predictions(x)?))
    }

    /// Spread of member predictions around the bagged prediction, divisor `B - 1`.
    pub fn prediction_variance(&self, x: &[f64]) -> Result<f64, BootstrapError> {
        let p = self.member_predictions(x)?;
        stats::sample_variance(&p).ok_or(BootstrapError::TooFewMembers { min: 2, got: p.len() })
    }

    pub fn irreducible_error(&self) -> Result<f64, BootstrapError> {
        let r: Vec<&[f64]> = self.members.iter().map(|m| m.oob_residuals.as_slice()).collect();
        irreducible_error_from_residuals(&r)
    }

    pub fn pivot_components(&self, x: &[f64], alpha: f64) -> Result<PivotComponents, BootstrapError> {
        check_alpha(alpha)?;
        let p = self.member_predictions(x)?;
        Ok(PivotComponents {
            bagged_prediction: stats::mean(&p),
            prediction_variance: stats::sample_variance(&p)
                .ok_or(BootstrapError::TooFewMembers { min: 2, got: p.len() })?,
            irreducible_error: self.irreducible_error()?,
            z_critical: z_critical(alpha),
        })
    }

    /// Normal-theory interval centred at the bagged prediction with half-width
    /// `z * sqrt(prediction variance + irreducible error)`.
    pub fn pivot_pi(
        &self,
        x: &[f64],
        alpha: f64,
    ) -> Result<(PredictionInterval, PivotComponents), BootstrapError> {
        let c = self.pivot_components(x, alpha)?;
        Ok((c.interval(alpha), c))
    }

    /// Draws one out-of-bag residual per member (uniformly, from `seed`) and
    /// adds it to that member's prediction.
    pub fn adjusted_predictions(
        &self,
        x: &[f64],
        seed: u64,
    ) -> Result<AdjustedPredictionSample, BootstrapError> {
        let mut rng = rng::seeded(seed);
        let mut values = Vec::with_capacity(self.members.len());
        let mut sampled_errors = Vec::with_capacity(self.members.len());
        for (member, m) in self.members.iter().enumerate() {
            if m.oob_residuals.is_empty() {
                return Err(BootstrapError::SmallOutOfBag { member, size: 0, min: 1 });
            }
            let e = m.oob_residuals[rng.random_range(0..m.oob_residuals.len())];
            values.push(m.model.predict(x)? + e);
            sampled_errors.push(e);
        }
        Ok(AdjustedPredictionSample { values, sampled_errors })
    }

    pub fn percentile_pi(
        &self,
        x: &[f64],
        alpha: f64,
        seed: u64,
    ) -> Result<(PredictionInterval, AdjustedPredictionSample), BootstrapError> {
        check_alpha(alpha)?;
        if self.members.len() < PERCENTILE_MIN_B {
            return Err(BootstrapError::TooFewMembers { min: PERCENTILE_MIN_B, got: self.members.len() });
        }
        if self.members.len() < PERCENTILE_RECOMMENDED_B {
            log::debug!(
                "percentile bootstrap with B = {} < {}; tail quantiles will be noisy",
                self.members.len(),
                PERCENTILE_RECOMMENDED_B
            );
        }
        let sample = self.adjusted_predictions(x, seed)?;
        Ok((percentile_interval(&sample.values, alpha), sample))
    }
}
