use rayon::prelude::*;

use super::{
    residuals, CandidateGrid, ConformalError, ConformalPredictor, ConformityKind, ConformityMeasure,
    PValueConvention, PValueTable, INDUCTIVE_GRID_POINTS,
};
use crate::data::Dataset;
use crate::learners::{Learner, Regressor};
use crate::rng;

/// Full (transductive) conformal prediction.
///
/// Every candidate `q` refits the learner on the training set augmented with
/// `(x, q)` and compares the test score against the scores of all augmented
/// rows, the test row included. Construction performs one extra fit on the
/// plain training set, used only to centre candidate grids.
pub struct FullConformal<'a> {
    learner: &'a dyn Learner,
    train: &'a Dataset,
    kind: ConformityKind,
    center_model: Box<dyn Regressor>,
    fit_seed: u64,
    convention: PValueConvention,
}

impl<'a> FullConformal<'a> {
    pub fn new(
        learner: &'a dyn Learner,
        train: &'a Dataset,
        kind: ConformityKind,
        seed: u64,
    ) -> Result<Self, ConformalError> {
        let center_model = learner.fit(train, rng::substream_seed(seed, 0))?;
        Ok(Self {
            learner,
            train,
            kind,
            center_model,
            fit_seed: rng::substream_seed(seed, 1),
            convention: PValueConvention::Strict,
        })
    }

    /// Under the inclusive convention the test row is left out of the
    /// reference set and counted through the `+1` instead.
    pub fn with_convention(mut self, convention: PValueConvention) -> Self {
        self.convention = convention;
        self
    }

    /// p-value of a single candidate. All candidates share one fit seed, so
    /// equal candidates get equal p-values.
    pub fn candidate_p_value(&self, x: &[f64], q: f64) -> Result<f64, ConformalError> {
        let augmented = self.train.augmented(x, q)?;
        let model = self.learner.fit(&augmented, self.fit_seed)?;
        let n = augmented.n_rows();
        let (preds, res) = residuals(model.as_ref(), &augmented, 0..n)?;
        let measure = ConformityMeasure::calibrate(&self.kind, &res)?;
        let scores = preds
            .iter()
            .zip(augmented.targets())
            .map(|(&p, &y)| measure.score(p, y))
            .collect::<Result<Vec<_>, _>>()?;
        let test = scores[n - 1];
        let p = match self.convention {
            PValueConvention::Strict => {
                scores.iter().filter(|&&s| s > test).count() as f64 / (n + 1) as f64
            }
            PValueConvention::Inclusive => {
                (scores[..n - 1].iter().filter(|&&s| s >= test).count() + 1) as f64 / n as f64
            }
        };
        Ok(p)
    }
}

impl ConformalPredictor for FullConformal<'_> {
    fn center(&self, x: &[f64]) -> Result<f64, ConformalError> {
        Ok(self.center_model.predict(x)?)
    }

    fn p_values(&self, x: &[f64], grid: &CandidateGrid) -> Result<PValueTable, ConformalError> {
        if grid.len() > INDUCTIVE_GRID_POINTS {
            log::warn!(
                "full conformal over {} candidates means {} refits per test point",
                grid.len(),
                grid.len()
            );
        }
        let p_values = grid
            .values
            .par_iter()
            .enumerate()
            .map(|(index, &q)| {
                self.candidate_p_value(x, q)
                    .map_err(|e| ConformalError::Candidate { index, source: Box::new(e) })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PValueTable { candidates: grid.values.clone(), p_values, per_source: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::GridSpec;
    use crate::learners::LearnerSpec;

    #[test]
    fn one_nearest_neighbour_single_row_is_empty() {
        let d = Dataset::new(vec![vec![0.0]], vec![0.0]).unwrap();
        let spec = LearnerSpec::knn(1);
        let full = FullConformal::new(&spec, &d, ConformityKind::AbsoluteResidual, 0).unwrap();
        let grid = CandidateGrid::build(0.0, 2.0, 9).unwrap();
        let t = full.p_values(&[0.0], &grid).unwrap();
        assert!(t.p_values.iter().all(|&p| p == 0.0));
        for alpha in [0.01, 0.1, 0.5] {
            assert!(full.interval(&[0.0], &GridSpec { half_width: 2.0, points: 9 }, alpha).unwrap().0.empty);
        }
    }

    #[test]
    fn duplicate_candidates_agree() {
        let rows = (0..12).map(|i| vec![i as f64]).collect();
        let ys = (0..12).map(|i| (i as f64).sin()).collect();
        let d = Dataset::new(rows, ys).unwrap();
        let spec = LearnerSpec::ridge(0.3);
        let full = FullConformal::new(&spec, &d, ConformityKind::AbsoluteResidual, 4).unwrap();
        let grid = CandidateGrid { values: vec![0.3, 0.3, -1.0, -1.0], center: 0.0, half_width: 1.0 };
        let t = full.p_values(&[2.5], &grid).unwrap();
        assert_eq!(t.p_values[0], t.p_values[1]);
        assert_eq!(t.p_values[2], t.p_values[3]);
        // denominator n + 2 with the test row inside the reference set
        for p in &t.p_values {
            let k = p * 14.0;
            assert!((k - k.round()).abs() < 1e-9);
        }
    }
}
