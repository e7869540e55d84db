use super::Matrix;
use crate::error::{invalid_arg, Error, Result};

/// Linear model `y ≈ x·weights + intercept`.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl RidgeModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.intercept + x.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        (0..x.rows()).map(|i| self.predict_row(x.row(i))).collect()
    }
}

/// Ridge regression on centred data with the intercept restored afterwards:
/// solves `(XcᵀXc + λI) w = Xcᵀ yc` by Cholesky.
pub fn ridge_fit(x: &Matrix, y: &[f64], lambda: f64) -> Result<RidgeModel> {
    let (n, d) = (x.rows(), x.cols());
    if n == 0 || y.len() != n {
        return Err(invalid_arg!("ridge: {n} rows but {} targets", y.len()));
    }
    if !(lambda >= 0.0) {
        return Err(invalid_arg!("ridge: lambda must be >= 0"));
    }
    let x_mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| x[(i, j)]).sum::<f64>() / n as f64)
        .collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;

    let mut gram = Matrix::zeros(d, d);
    let mut rhs = vec![0.0; d];
    let mut xc = vec![0.0; d];
    for i in 0..n {
        for (j, c) in xc.iter_mut().enumerate() {
            *c = x[(i, j)] - x_mean[j];
        }
        let yc = y[i] - y_mean;
        for a in 0..d {
            rhs[a] += xc[a] * yc;
            for b in a..d {
                gram[(a, b)] += xc[a] * xc[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
        gram[(a, a)] += lambda;
    }

    let weights: Vec<f64> = if d == 0 {
        Vec::new()
    } else {
        let chol = gram
            .to_nalgebra()
            .cholesky()
            .ok_or_else(|| Error::Numeric("ridge: normal equations are singular".into()))?;
        // Cholesky can succeed on a numerically singular matrix through
        // rounding; reject pivots that are negligible against the diagonal.
        let diag_max = (0..d).map(|a| gram[(a, a)]).fold(0.0f64, f64::max);
        let l = chol.l_dirty();
        if (0..d).any(|a| l[(a, a)] * l[(a, a)] <= 1e-12 * diag_max) {
            return Err(Error::Numeric("ridge: normal equations are singular".into()));
        }
        let sol = chol.solve(&nalgebra::DVector::from_column_slice(&rhs));
        sol.iter().copied().collect()
    };

    let lhs = gram.matvec(&weights)?;
    let resid = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = gram.frobenius_norm() * weights.iter().map(|w| w * w).sum::<f64>().sqrt()
        + rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(resid <= 1e-8 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::Numeric(format!(
            "ridge: normal-equation residual {resid:e} too large (ill-conditioned system)"
        )));
    }
    let intercept = y_mean - x_mean.iter().zip(&weights).map(|(m, w)| m * w).sum::<f64>();
    Ok(RidgeModel { weights, intercept })
}
