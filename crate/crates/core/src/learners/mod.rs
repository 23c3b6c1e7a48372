//! Learning algorithms.
//!
//! Every interval method is written against the [`Learner`] trait and only
//! ever sees trained models through [`Regressor`], so any point predictor can
//! be plugged in. [`LearnerSpec`] is the serializable description of the three
//! built-in learners.

mod knn;
pub mod mlp;
mod ridge;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;

pub use knn::KnnModel;
pub use mlp::{Activation, Adam, MlpModel, Network};
pub use ridge::RidgeModel;

/// Node counts and depths of the tabular MLP design space.
pub const DESIGN_LAYERS: [usize; 3] = [1, 2, 3];
pub const DESIGN_NODES: [usize; 6] = [5, 10, 25, 50, 75, 100];

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("invalid learner spec: {0}")]
    InvalidSpec(String),
    #[error("k = {k} exceeds the {n} training rows")]
    KTooLarge { k: usize, n: usize },
    #[error("training loss became non-finite in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("expected {expected} features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("linear system could not be solved")]
    Singular,
}

/// A trained point predictor.
pub trait Regressor: Send + Sync {
    fn n_features(&self) -> usize;

    /// Prediction without the dimension check.
    fn predict_unchecked(&self, x: &[f64]) -> f64;

    fn predict(&self, x: &[f64]) -> Result<f64, LearnerError> {
        if x.len() != self.n_features() {
            return Err(LearnerError::DimensionMismatch {
                expected: self.n_features(),
                found: x.len(),
            });
        }
        Ok(self.predict_unchecked(x))
    }

    fn predict_rows(&self, data: &Dataset, rows: &[usize]) -> Result<Vec<f64>, LearnerError> {
        rows.iter().map(|&i| self.predict(data.row(i))).collect()
    }
}

/// A learning algorithm `L`: turns a training set into a [`Regressor`].
///
/// `seed` identifies the training task; learners with internal randomness
/// must be a pure function of `(self, train, seed)`.
pub trait Learner: Send + Sync {
    fn fit(&self, train: &Dataset, seed: u64) -> Result<Box<dyn Regressor>, LearnerError>;
}

impl<L: Learner + ?Sized> Learner for &L {
    fn fit(&self, train: &Dataset, seed: u64) -> Result<Box<dyn Regressor>, LearnerError> {
        (**self).fit(train, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Ridge,
    Knn,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RidgeParams {
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnnParams {
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpParams {
    pub layers: usize,
    pub nodes_per_layer: usize,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

/// Serializable learner configuration. Exactly the block named by `kind`
/// is populated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ridge: Option<RidgeParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knn: Option<KnnParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlp: Option<MlpParams>,
}

impl LearnerSpec {
    pub fn ridge(lambda: f64) -> Self {
        Self { kind: LearnerKind::Ridge, ridge: Some(RidgeParams { lambda }), knn: None, mlp: None }
    }

    pub fn knn(k: usize) -> Self {
        Self { kind: LearnerKind::Knn, ridge: None, knn: Some(KnnParams { k }), mlp: None }
    }

    pub fn mlp(params: MlpParams) -> Self {
        Self { kind: LearnerKind::Mlp, ridge: None, knn: None, mlp: Some(params) }
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        let populated = [self.ridge.is_some(), self.knn.is_some(), self.mlp.is_some()]
            .iter()
            .filter(|b| **b)
            .count();
        if populated != 1 {
            return Err(LearnerError::InvalidSpec(format!(
                "exactly one parameter block must be set, found {populated}"
            )));
        }
        match self.kind {
            LearnerKind::Ridge => {
                let p = self.ridge.ok_or_else(|| missing("ridge"))?;
                if !(p.lambda >= 0.0 && p.lambda.is_finite()) {
                    return Err(LearnerError::InvalidSpec("lambda must be finite and >= 0".into()));
                }
            }
            LearnerKind::Knn => {
                let p = self.knn.ok_or_else(|| missing("knn"))?;
                if p.k == 0 {
                    return Err(LearnerError::InvalidSpec("k must be positive".into()));
                }
            }
            LearnerKind::Mlp => {
                let p = self.mlp.ok_or_else(|| missing("mlp"))?;
                if p.layers == 0 || p.nodes_per_layer == 0 || p.epochs == 0 || p.batch_size == 0 {
                    return Err(LearnerError::InvalidSpec(
                        "layers, nodes_per_layer, epochs and batch_size must be positive".into(),
                    ));
                }
                if !(p.learning_rate > 0.0 && p.learning_rate.is_finite()) {
                    return Err(LearnerError::InvalidSpec("learning_rate must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Whether an MLP spec sits inside the tabular design grid
    /// (depth in {1, 2, 3}, width in {5, 10, 25, 50, 75, 100}).
    pub fn in_design_space(&self) -> bool {
        match &self.mlp {
            Some(p) => DESIGN_LAYERS.contains(&p.layers) && DESIGN_NODES.contains(&p.nodes_per_layer),
            None => false,
        }
    }

    /// Short label for reports, e.g. `mlp-relu-2x50`.
    pub fn label(&self) -> String {
        match (self.kind, &self.ridge, &self.knn, &self.mlp) {
            (LearnerKind::Ridge, Some(p), _, _) => format!("ridge-{}", p.lambda),
            (LearnerKind::Knn, _, Some(p), _) => format!("knn-{}", p.k),
            (LearnerKind::Mlp, _, _, Some(p)) => {
                format!("mlp-{}-{}x{}", p.activation.name(), p.layers, p.nodes_per_layer)
            }
            _ => "invalid".into(),
        }
    }

    /// Fits the concrete model.
    pub fn fit_model(&self, train: &Dataset, seed: u64) -> Result<FittedModel, LearnerError> {
        self.validate()?;
        let state = match self.kind {
            LearnerKind::Ridge => FittedState::Ridge(RidgeModel::fit(train, self.ridge.unwrap().lambda)?),
            LearnerKind::Knn => FittedState::Knn(KnnModel::fit(train, self.knn.unwrap().k)?),
            LearnerKind::Mlp => FittedState::Mlp(MlpModel::fit(train, &self.mlp.unwrap(), seed)?),
        };
        Ok(FittedModel { spec: self.clone(), training_row_count: train.n_rows(), state })
    }
}

fn missing(block: &str) -> LearnerError {
    LearnerError::InvalidSpec(format!("kind {block} requires the {block} block"))
}

impl Learner for LearnerSpec {
    fn fit(&self, train: &Dataset, seed: u64) -> Result<Box<dyn Regressor>, LearnerError> {
        Ok(Box::new(self.fit_model(train, seed)?))
    }
}

#[derive(Debug, Clone)]
pub enum FittedState {
    Ridge(RidgeModel),
    Knn(KnnModel),
    Mlp(MlpModel),
}

/// A model produced by one of the built-in learners.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub spec: LearnerSpec,
    pub training_row_count: usize,
    pub state: FittedState,
}

impl Regressor for FittedModel {
    fn n_features(&self) -> usize {
        match &self.state {
            FittedState::Ridge(m) => m.n_features(),
            FittedState::Knn(m) => m.n_features(),
            FittedState::Mlp(m) => m.n_features(),
        }
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        match &self.state {
            FittedState::Ridge(m) => m.predict(x),
            FittedState::Knn(m) => m.predict(x),
            FittedState::Mlp(m) => m.predict(x),
        }
    }
}
