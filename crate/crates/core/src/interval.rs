use serde::{Deserialize, Serialize};

/// A prediction interval at nominal level `1 - alpha`.
///
/// Conformal methods also carry the accepted grid candidates; the bounds are
/// then the hull of that set, and `empty` marks a set with no candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted_candidates: Option<Vec<f64>>,
    #[serde(default)]
    pub empty: bool,
}

impl PredictionInterval {
    pub fn new(lower: f64, upper: f64, level: f64) -> Self {
        debug_assert!(lower <= upper);
        Self { lower, upper, level, accepted_candidates: None, empty: false }
    }

    /// Hull of accepted candidates. An empty set yields an interval flagged
    /// `empty` with NaN bounds.
    pub fn from_accepted(accepted: Vec<f64>, level: f64) -> Self {
        let lower = accepted.iter().copied().fold(f64::INFINITY, f64::min);
        let upper = accepted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if accepted.is_empty() {
            return Self { lower: f64::NAN, upper: f64::NAN, level, accepted_candidates: Some(accepted), empty: true };
        }
        Self { lower, upper, level, accepted_candidates: Some(accepted), empty: false }
    }

    /// Zero for an empty interval.
    pub fn width(&self) -> f64 {
        if self.empty {
            0.0
        } else {
            self.upper - self.lower
        }
    }

    pub fn contains(&self, y: f64) -> bool {
        !self.empty && self.lower <= y && y <= self.upper
    }

    /// True when the accepted set has gaps on the candidate grid.
    pub fn is_disconnected(&self, grid: &[f64]) -> bool {
        let Some(acc) = &self.accepted_candidates else { return false };
        if acc.is_empty() {
            return false;
        }
        let inside = grid.iter().filter(|q| **q >= self.lower && **q <= self.upper).count();
        inside != acc.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hull_and_empty() {
        let pi = PredictionInterval::from_accepted(vec![1.0, 2.0, 5.0], 0.9);
        assert_eq!((pi.lower, pi.upper), (1.0, 5.0));
        assert!(pi.is_disconnected(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]));
        assert!(pi.contains(4.0));
        let e = PredictionInterval::from_accepted(vec![], 0.9);
        assert!(e.empty);
        assert_eq!(e.width(), 0.0);
        assert!(!e.contains(0.0));
    }
}
