//! Synthetic regression data with a known mean function.
//!
//! Rows are drawn i.i.d., so every generated set is exchangeable.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::rng;

pub const MIN_ROWS: usize = 10;
/// Features used by the Friedman-like surface.
pub const FRIEDMAN_FEATURES: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum SyntheticError {
    #[error("need at least {MIN_ROWS} rows, got {0}")]
    TooFewRows(usize),
    #[error("need at least {min} features for {kind}, got {got}")]
    TooFewFeatures { kind: &'static str, min: usize, got: usize },
    #[error("noise parameter {name} must be finite and non-negative, got {value}")]
    BadNoise { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    /// `1 + sum_j b_j x_j` with `x ~ N(0, I)` and `b_j = (-1)^j (1 + j/2)`.
    Linear,
    /// `2 sin(pi x_0) + 0.5 sum_{j>0} x_j` with `x ~ U(-1, 1)^d`.
    Sinusoid,
    /// `10 sin(pi x_0 x_1) + 20 (x_2 - 0.5)^2 + 10 x_3 + 5 x_4` with
    /// `x ~ U(0, 1)^d`; extra features are pure noise.
    FriedmanLike,
}

impl GeneratorKind {
    pub fn name(self) -> &'static str {
        match self {
            GeneratorKind::Linear => "linear",
            GeneratorKind::Sinusoid => "sinusoid",
            GeneratorKind::FriedmanLike => "friedman-like",
        }
    }
}

fn default_bimodal_sigma() -> f64 {
    0.5
}

/// Additive noise, always centred at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Noise {
    Gaussian { sigma: f64 },
    /// `scale * (E - 1)` with `E ~ Exp(1)`: right-skewed, mean zero.
    Skewed { scale: f64 },
    /// Equal mixture of `N(-gap/2, sigma^2)` and `N(gap/2, sigma^2)`.
    Bimodal {
        gap: f64,
        #[serde(default = "default_bimodal_sigma")]
        sigma: f64,
    },
}

impl Noise {
    fn check(&self) -> Result<(), SyntheticError> {
        let params: &[(&'static str, f64)] = match self {
            Noise::Gaussian { sigma } => &[("sigma", *sigma)],
            Noise::Skewed { scale } => &[("scale", *scale)],
            Noise::Bimodal { gap, sigma } => &[("gap", *gap), ("sigma", *sigma)],
        };
        for &(name, value) in params {
            if !(value.is_finite() && value >= 0.0) {
                return Err(SyntheticError::BadNoise { name, value });
            }
        }
        Ok(())
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            Noise::Gaussian { sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                sigma * z
            }
            Noise::Skewed { scale } => {
                let e: f64 = Exp1.sample(rng);
                scale * (e - 1.0)
            }
            Noise::Bimodal { gap, sigma } => {
                let side = if rng.random::<bool>() { 0.5 } else { -0.5 };
                let z: f64 = StandardNormal.sample(rng);
                side * gap + sigma * z
            }
        }
    }

    /// Variance of one noise draw.
    pub fn variance(&self) -> f64 {
        match *self {
            Noise::Gaussian { sigma } => sigma * sigma,
            Noise::Skewed { scale } => scale * scale,
            Noise::Bimodal { gap, sigma } => gap * gap / 4.0 + sigma * sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub n: usize,
    pub d: usize,
    pub noise: Noise,
    pub seed: u64,
}

/// A generated dataset with the noiseless mean and noise draw of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub mean_values: Vec<f64>,
    pub noise: Vec<f64>,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        if self.n < MIN_ROWS {
            return Err(SyntheticError::TooFewRows(self.n));
        }
        let min = match self.kind {
            GeneratorKind::FriedmanLike => FRIEDMAN_FEATURES,
            _ => 1,
        };
        if self.d < min {
            return Err(SyntheticError::TooFewFeatures { kind: self.kind.name(), min, got: self.d });
        }
        self.noise.check()
    }

    /// The regression function `E[y | x]`.
    pub fn mean_function(&self, x: &[f64]) -> f64 {
        match self.kind {
            GeneratorKind::Linear => {
                1.0 + x
                    .iter()
                    .enumerate()
                    .map(|(j, v)| {
                        let b = 1.0 + j as f64 / 2.0;
                        if j % 2 == 0 { b * v } else { -b * v }
                    })
                    .sum::<f64>()
            }
            GeneratorKind::Sinusoid => {
                2.0 * (std::f64::consts::PI * x[0]).sin() + 0.5 * x[1..].iter().sum::<f64>()
            }
            GeneratorKind::FriedmanLike => {
                10.0 * (std::f64::consts::PI * x[0] * x[1]).sin()
                    + 20.0 * (x[2] - 0.5).powi(2)
                    + 10.0 * x[3]
                    + 5.0 * x[4]
            }
        }
    }

    fn draw_features<R: Rng>(&self, rng: &mut R, row: &mut [f64]) {
        for v in row {
            *v = match self.kind {
                GeneratorKind::Linear => StandardNormal.sample(rng),
                GeneratorKind::Sinusoid => rng.random_range(-1.0..1.0),
                GeneratorKind::FriedmanLike => rng.random::<f64>(),
            };
        }
    }

    pub fn generate(&self) -> Result<SyntheticData, SyntheticError> {
        self.validate()?;
        let mut rng = rng::seeded(self.seed);
        let mut features = vec![0.0; self.n * self.d];
        let mut targets = Vec::with_capacity(self.n);
        let mut mean_values = Vec::with_capacity(self.n);
        let mut noise = Vec::with_capacity(self.n);
        for row in features.chunks_mut(self.d) {
            self.draw_features(&mut rng, row);
            let m = self.mean_function(row);
            let e = self.noise.draw(&mut rng);
            mean_values.push(m);
            noise.push(e);
            targets.push(m + e);
        }
        let dataset = Dataset::from_flat(features, self.n, self.d, targets)
            .expect("generator produces consistent shapes");
        Ok(SyntheticData { dataset, mean_values, noise })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: GeneratorKind, n: usize, d: usize, noise: Noise) -> GeneratorSpec {
        GeneratorSpec { kind, n, d, noise, seed: 11 }
    }

    #[test]
    fn zero_noise_reproduces_mean() {
        let s = spec(GeneratorKind::Linear, 20, 3, Noise::Gaussian { sigma: 0.0 });
        let g = s.generate().unwrap();
        for (i, row) in g.dataset.rows().enumerate() {
            let expected = 1.0 + row[0] - 1.5 * row[1] + 2.0 * row[2];
            assert!((g.dataset.target(i) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_noise_variance() {
        let s = spec(GeneratorKind::Sinusoid, 100_000, 2, Noise::Gaussian { sigma: 1.0 });
        let g = s.generate().unwrap();
        let resid: Vec<f64> =
            g.dataset.targets().iter().zip(&g.mean_values).map(|(y, m)| y - m).collect();
        let v = crate::stats::sample_variance(&resid).unwrap();
        assert!((v - 1.0).abs() < 0.03, "{v}");
    }

    #[test]
    fn noise_shapes_are_centred() {
        for noise in [Noise::Skewed { scale: 2.0 }, Noise::Bimodal { gap: 4.0, sigma: 0.5 }] {
            let g = spec(GeneratorKind::FriedmanLike, 50_000, 6, noise).generate().unwrap();
            let m = crate::stats::mean(&g.noise);
            let v = crate::stats::sample_variance(&g.noise).unwrap();
            assert!(m.abs() < 0.05, "{noise:?} mean {m}");
            assert!((v / noise.variance() - 1.0).abs() < 0.05, "{noise:?} var {v}");
        }
    }

    #[test]
    fn deterministic() {
        let s = spec(GeneratorKind::FriedmanLike, 30, 5, Noise::Skewed { scale: 1.0 });
        assert_eq!(s.generate().unwrap(), s.generate().unwrap());
        let other = GeneratorSpec { seed: 12, ..s.clone() };
        assert_ne!(s.generate().unwrap().dataset, other.generate().unwrap().dataset);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(spec(GeneratorKind::Linear, 9, 1, Noise::Gaussian { sigma: 1.0 }).generate().is_err());
        assert!(spec(GeneratorKind::FriedmanLike, 20, 4, Noise::Gaussian { sigma: 1.0 }).generate().is_err());
        assert!(spec(GeneratorKind::Linear, 20, 1, Noise::Gaussian { sigma: -1.0 }).generate().is_err());
    }

    #[test]
    fn json_shape() {
        let s: GeneratorSpec = serde_json::from_str(
            r#"{"kind":"friedman-like","n":100,"d":5,"noise":{"bimodal":{"gap":3}},"seed":1}"#,
        )
        .unwrap();
        assert_eq!(s.noise, Noise::Bimodal { gap: 3.0, sigma: 0.5 });
    }
}
