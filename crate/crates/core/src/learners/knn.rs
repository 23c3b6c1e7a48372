use super::LearnerError;
use crate::data::{Dataset, Standardizer};

/// k-nearest-neighbour average under Euclidean distance on standardized
/// features. Equidistant neighbours are taken in row order.
#[derive(Debug, Clone)]
pub struct KnnModel {
    k: usize,
    scaler: Standardizer,
    rows: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl KnnModel {
    pub fn fit(train: &Dataset, k: usize) -> Result<Self, LearnerError> {
        if k > train.n_rows() {
            return Err(LearnerError::KTooLarge { k, n: train.n_rows() });
        }
        let scaler = Standardizer::fit(train);
        let rows = train.rows().map(|r| scaler.transform(r)).collect();
        Ok(Self { k, scaler, rows, targets: train.targets().to_vec() })
    }

    pub fn n_features(&self) -> usize {
        self.rows[0].len()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let q = self.scaler.transform(x);
        let mut dist: Vec<(f64, usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum(), i))
            .collect();
        let by_key = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < dist.len() {
            dist.select_nth_unstable_by(self.k - 1, by_key);
            dist.truncate(self.k);
        }
        dist.sort_unstable_by_key(|p| p.1);
        dist.iter().map(|&(_, i)| self.targets[i]).sum::<f64>() / self.k as f64
    }
}
