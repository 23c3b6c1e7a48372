//! Gaussian kernel density estimation over scalar samples.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats;

#[derive(Debug, Error, PartialEq)]
pub enum KdeError {
    #[error("cannot fit a density to an empty sample")]
    Empty,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("bandwidth must be positive and finite, got {0}")]
    BadBandwidth(f64),
    #[error("automatic bandwidth needs at least 2 samples")]
    TooFewForAuto,
}

/// Bandwidth selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Silverman's rule of thumb.
    #[default]
    Auto,
    Fixed(f64),
    /// Pick the candidate maximizing the leave-one-out log likelihood.
    Grid(Vec<f64>),
}

/// Fitted density `p(u) = (1/m) sum_i phi((u - z_i) / h) / h`.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeModel {
    samples: Vec<f64>,
    bandwidth: f64,
    /// Set when the automatic rule met a zero-spread sample and fell back to
    /// `1e-3 * max(1, |mean|)`.
    pub bandwidth_fallback: bool,
}

impl KdeModel {
    pub fn fit(samples: &[f64], bandwidth: &Bandwidth) -> Result<Self, KdeError> {
        if samples.is_empty() {
            return Err(KdeError::Empty);
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(KdeError::NonFinite);
        }
        let mut fallback = false;
        let h = match bandwidth {
            Bandwidth::Fixed(h) => *h,
            Bandwidth::Auto => {
                if samples.len() < 2 {
                    return Err(KdeError::TooFewForAuto);
                }
                match silverman_bandwidth(samples) {
                    Some(h) => h,
                    None => {
                        fallback = true;
                        let h = 1e-3 * stats::mean(samples).abs().max(1.0);
                        log::warn!("zero-spread KDE sample; bandwidth falls back to {h}");
                        h
                    }
                }
            }
            Bandwidth::Grid(grid) => {
                if samples.len() < 2 {
                    return Err(KdeError::TooFewForAuto);
                }
                if let Some(bad) = grid.iter().find(|h| !(**h > 0.0 && h.is_finite())) {
                    return Err(KdeError::BadBandwidth(*bad));
                }
                select_bandwidth_loo(samples, grid).ok_or(KdeError::Empty)?
            }
        };
        if !(h > 0.0 && h.is_finite()) {
            return Err(KdeError::BadBandwidth(h));
        }
        Ok(Self { samples: samples.to_vec(), bandwidth: h, bandwidth_fallback: fallback })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn density(&self, u: f64) -> f64 {
        let h = self.bandwidth;
        self.samples.iter().map(|z| stats::normal_pdf((u - z) / h)).sum::<f64>()
            / (self.samples.len() as f64 * h)
    }

    /// `ln p(u)` evaluated with log-sum-exp, so it stays finite far in the
    /// tails where `density` underflows to zero.
    pub fn ln_density(&self, u: f64) -> f64 {
        let h = self.bandwidth;
        let terms = self.samples.iter().map(|z| stats::normal_ln_pdf((u - z) / h));
        let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = terms.map(|t| (t - max).exp()).sum();
        max + sum.ln() - (self.samples.len() as f64 * h).ln()
    }
}

/// `1.06 * min(sd, IQR / 1.34) * m^(-1/5)`; `None` when the sample has no
/// spread at all. A zero IQR with positive sd uses the sd alone.
pub fn silverman_bandwidth(samples: &[f64]) -> Option<f64> {
    let sd = stats::sample_variance(samples)?.sqrt();
    if sd <= 0.0 {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = stats::sorted_quantile(&sorted, 0.75) - stats::sorted_quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    Some(1.06 * spread * (samples.len() as f64).powf(-0.2))
}

/// Leave-one-out log-likelihood selection over a bandwidth grid. Ties keep
/// the first candidate.
pub fn select_bandwidth_loo(samples: &[f64], grid: &[f64]) -> Option<f64> {
    let m = samples.len();
    let mut best: Option<(f64, f64)> = None;
    for &h in grid {
        let mut ll = 0.0;
        for (i, zi) in samples.iter().enumerate() {
            let terms: Vec<f64> = samples
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, zj)| stats::normal_ln_pdf((zi - zj) / h))
                .collect();
            let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = terms.iter().map(|t| (t - max).exp()).sum();
            ll += max + s.ln() - ((m - 1) as f64 * h).ln();
        }
        if best.is_none_or(|(_, b)| ll > b) {
            best = Some((h, ll));
        }
    }
    best.map(|(h, _)| h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn phi(x: f64) -> f64 {
        (-(x * x) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, points: usize) -> f64 {
        let step = (b - a) / (points - 1) as f64;
        let inner: f64 = (1..points - 1).map(|i| f(a + i as f64 * step)).sum();
        step * (inner + 0.5 * (f(a) + f(b)))
    }

    #[test]
    fn single_sample_peak() {
        let k = KdeModel::fit(&[0.0], &Bandwidth::Fixed(1.0)).unwrap();
        assert!((k.density(0.0) - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn two_point_sum() {
        let k = KdeModel::fit(&[-1.0, 1.0], &Bandwidth::Fixed(1.0)).unwrap();
        assert!((k.density(0.0) - phi(1.0)).abs() < 1e-15);
        assert!((k.density(0.0) - 0.241_970_724_519_143_37).abs() < 1e-12);
    }

    #[test]
    fn far_tail_underflows_gracefully() {
        let k = KdeModel::fit(&[0.0, 0.5], &Bandwidth::Fixed(1.0)).unwrap();
        for u in [1e6, -1e6] {
            let p = k.density(u);
            assert!(p >= 0.0 && p.is_finite());
            assert!(k.ln_density(u).is_finite());
        }
    }

    #[test]
    fn ln_density_matches_density() {
        let k = KdeModel::fit(&[-1.0, 0.2, 3.0], &Bandwidth::Fixed(0.7)).unwrap();
        for u in [-2.0, 0.0, 0.5, 4.0] {
            assert!((k.ln_density(u) - k.density(u).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(KdeModel::fit(&[], &Bandwidth::Auto), Err(KdeError::Empty));
        assert_eq!(KdeModel::fit(&[1.0], &Bandwidth::Fixed(0.0)), Err(KdeError::BadBandwidth(0.0)));
        assert_eq!(KdeModel::fit(&[1.0], &Bandwidth::Auto), Err(KdeError::TooFewForAuto));
        assert_eq!(KdeModel::fit(&[f64::NAN], &Bandwidth::Fixed(1.0)), Err(KdeError::NonFinite));
    }

    #[test]
    fn zero_spread_falls_back() {
        let k = KdeModel::fit(&[5.0, 5.0, 5.0], &Bandwidth::Auto).unwrap();
        assert!(k.bandwidth_fallback);
        assert!((k.bandwidth() - 5e-3).abs() < 1e-15);
        let k = KdeModel::fit(&[0.1, 0.1], &Bandwidth::Auto).unwrap();
        assert!((k.bandwidth() - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn silverman_on_standard_normal() {
        let mut r = rng::seeded(99);
        let z: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut r)).collect();
        let k = KdeModel::fit(&z, &Bandwidth::Auto).unwrap();
        // oracle: the rule evaluated directly on this sample
        let m = z.iter().sum::<f64>() / 1000.0;
        let sd = (z.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 999.0).sqrt();
        let mut s = z.clone();
        s.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * 999.0;
            let lo = pos.floor() as usize;
            s[lo] + (pos - lo as f64) * (s[lo + 1] - s[lo])
        };
        let expected = 1.06 * sd.min((q(0.75) - q(0.25)) / 1.34) * 1000f64.powf(-0.2);
        assert!((k.bandwidth() - expected).abs() < 1e-12);
        assert!((0.15..=0.40).contains(&k.bandwidth()));
    }

    #[test]
    fn normalizes_on_wide_window() {
        let k = KdeModel::fit(&[0.0], &Bandwidth::Fixed(1.0)).unwrap();
        let area = trapezoid(|u| k.density(u), -10.0, 10.0, 10_001);
        assert!((area - 1.0).abs() < 1e-4);
    }

    #[test]
    fn loo_grid_prefers_sensible_bandwidth() {
        let mut r = rng::seeded(5);
        let z: Vec<f64> = (0..200).map(|_| StandardNormal.sample(&mut r)).collect();
        let h = select_bandwidth_loo(&z, &[0.001, 0.3, 50.0]).unwrap();
        assert_eq!(h, 0.3);
        let k = KdeModel::fit(&z, &Bandwidth::Grid(vec![0.001, 0.3, 50.0])).unwrap();
        assert_eq!(k.bandwidth(), 0.3);
    }

    fn local_maxima(k: &KdeModel, lo: f64, hi: f64) -> usize {
        let ys: Vec<f64> = (0..2001).map(|i| k.density(lo + (hi - lo) * i as f64 / 2000.0)).collect();
        ys.windows(3).filter(|w| w[1] > w[0] && w[1] > w[2]).count()
    }

    #[test]
    fn wider_bandwidth_is_smoother() {
        let samples = [-3.0, -2.8, -3.1, -2.9, 3.0, 3.2, 2.9, 3.1];
        let narrow = KdeModel::fit(&samples, &Bandwidth::Fixed(0.1)).unwrap();
        let wide = KdeModel::fit(&samples, &Bandwidth::Fixed(100.0)).unwrap();
        let (a, b) = (local_maxima(&narrow, -8.0, 8.0), local_maxima(&wide, -8.0, 8.0));
        assert!(a >= 2);
        assert!(b <= a);
    }

    proptest! {
        #[test]
        fn integrates_to_one(samples in prop::collection::vec(-5.0f64..5.0, 1..30), h in 0.2f64..3.0) {
            let k = KdeModel::fit(&samples, &Bandwidth::Fixed(h)).unwrap();
            let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let pad = 10.0 * (hi - lo + h);
            let area = trapezoid(|u| k.density(u), lo - pad, hi + pad, 20_001);
            prop_assert!((area - 1.0).abs() < 1e-4, "area {}", area);
        }

        #[test]
        fn shift_equivariant(samples in prop::collection::vec(-5.0f64..5.0, 1..20),
                             h in 0.1f64..3.0, u in -6.0f64..6.0, c in -100.0f64..100.0) {
            let a = KdeModel::fit(&samples, &Bandwidth::Fixed(h)).unwrap();
            let shifted: Vec<f64> = samples.iter().map(|s| s + c).collect();
            let b = KdeModel::fit(&shifted, &Bandwidth::Fixed(h)).unwrap();
            let (pa, pb) = (a.density(u), b.density(u + c));
            prop_assert!((pa - pb).abs() <= 1e-12, "{} vs {}", pa, pb);
        }

        #[test]
        fn density_is_positive(samples in prop::collection::vec(-5.0f64..5.0, 1..10), u in -20.0f64..20.0) {
            let k = KdeModel::fit(&samples, &Bandwidth::Fixed(1.0)).unwrap();
            prop_assert!(k.density(u) > 0.0);
        }
    }
}
