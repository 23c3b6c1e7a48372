use nalgebra::{DMatrix, DVector};

use super::LearnerError;
use crate::data::Dataset;

/// Ridge regression with an unpenalized intercept.
///
/// Solved on centered data: `(Xc'Xc + lambda I) w = Xc'yc`, intercept
/// `ybar - xbar'w`. Falls back to an SVD least-squares solve when the system
/// is not positive definite (e.g. `lambda = 0` with collinear columns).
#[derive(Debug, Clone)]
pub struct RidgeModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

impl RidgeModel {
    pub fn fit(train: &Dataset, lambda: f64) -> Result<Self, LearnerError> {
        let n = train.n_rows();
        let d = train.n_features();
        let x = DMatrix::from_row_slice(n, d, train.features());
        let y = DVector::from_column_slice(train.targets());

        let x_mean = x.row_mean();
        let y_mean = y.mean();
        let mut xc = x;
        for mut row in xc.row_iter_mut() {
            row -= &x_mean;
        }
        let yc = y.add_scalar(-y_mean);

        let mut gram = xc.tr_mul(&xc);
        for i in 0..d {
            gram[(i, i)] += lambda;
        }
        let rhs = xc.tr_mul(&yc);

        let w = match gram.clone().cholesky() {
            Some(chol) => chol.solve(&rhs),
            None => gram
                .svd(true, true)
                .solve(&rhs, 1e-12)
                .map_err(|_| LearnerError::Singular)?,
        };
        let intercept = y_mean - (x_mean * &w)[(0, 0)];
        Ok(Self { intercept, coefficients: w.iter().copied().collect() })
    }

    pub fn n_features(&self) -> usize {
        self.coefficients.len()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn interpolates_two_points() {
        let d = Dataset::new(vec![vec![0.0], vec![1.0]], vec![0.0, 2.0]).unwrap();
        let m = RidgeModel::fit(&d, 0.0).unwrap();
        assert!(m.intercept.abs() < 1e-12);
        assert!((m.coefficients[0] - 2.0).abs() < 1e-12);
        assert!((m.predict(&[0.5]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn huge_penalty_gives_mean() {
        let mut r = rng::seeded(3);
        let rows: Vec<Vec<f64>> = (0..30).map(|_| (0..4).map(|_| r.random::<f64>()).collect()).collect();
        let y: Vec<f64> = rows.iter().map(|x| 3.0 * x[0] - x[2] + 5.0).collect();
        let mean = y.iter().sum::<f64>() / 30.0;
        let d = Dataset::new(rows, y).unwrap();
        let m = RidgeModel::fit(&d, 1e12).unwrap();
        assert!(m.coefficients.iter().all(|c| c.abs() < 1e-9));
        assert!((m.predict(&[0.9, 0.1, 0.4, 0.3]) - mean).abs() < 1e-8);
    }

    #[test]
    fn singular_system_falls_back() {
        // duplicated column, no penalty
        let d = Dataset::new(
            vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]],
            vec![2.0, 4.0, 6.0],
        )
        .unwrap();
        let m = RidgeModel::fit(&d, 0.0).unwrap();
        assert!((m.predict(&[4.0, 4.0]) - 8.0).abs() < 1e-8);
    }
}
