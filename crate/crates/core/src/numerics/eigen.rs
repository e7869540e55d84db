use super::Matrix;
use crate::error::{invalid_arg, Error, Result};

pub const POWER_ITERATION_CAP: usize = 100_000;
pub const POWER_ITERATION_TOL: f64 = 1e-10;

/// Leading eigenpair from power iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadingEigen {
    /// Unit norm, sign fixed so the entries sum to a nonnegative value.
    pub vector: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// The leading eigenvalue is (numerically) repeated, so the vector is not unique.
    pub degenerate: bool,
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn power_iterate(q: &Matrix, start: Vec<f64>, qnorm: f64) -> Result<(Vec<f64>, f64, usize)> {
    let mut v = start;
    normalize(&mut v);
    for it in 1..=POWER_ITERATION_CAP {
        let mut w = q.matvec(&v)?;
        let lambda: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let resid = w
            .iter()
            .zip(&v)
            .map(|(wi, vi)| (wi - lambda * vi).powi(2))
            .sum::<f64>()
            .sqrt();
        if resid <= POWER_ITERATION_TOL * qnorm {
            return Ok((v, lambda, it));
        }
        if normalize(&mut w) == 0.0 {
            // start vector in the null space
            return Ok((v, 0.0, it));
        }
        v = w;
    }
    Err(Error::Numeric(format!(
        "power iteration did not converge in {POWER_ITERATION_CAP} iterations (degenerate spectrum?)"
    )))
}

/// Leading eigenvector of a symmetric positive semidefinite matrix by power
/// iteration from the normalized all-ones vector. A second run from a
/// different start detects ties for the leading eigenvalue.
pub fn leading_eigenvector(q: &Matrix) -> Result<LeadingEigen> {
    let m = q.rows();
    if m == 0 {
        return Err(invalid_arg!("empty matrix"));
    }
    let qnorm = q.frobenius_norm();
    if !q.is_symmetric(1e-12 * qnorm.max(f64::MIN_POSITIVE)) {
        return Err(invalid_arg!("matrix is not symmetric"));
    }
    if !qnorm.is_finite() {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    let ones = vec![1.0 / (m as f64).sqrt(); m];
    if qnorm == 0.0 {
        return Ok(LeadingEigen {
            vector: ones,
            value: 0.0,
            iterations: 0,
            degenerate: m > 1,
        });
    }
    let (a, lambda_a, it_a) = power_iterate(q, ones, qnorm)?;
    let (mut v, value, iterations, degenerate) = if m > 1 {
        let probe: Vec<f64> = (0..m)
            .map(|i| 1.0 + 0.5 * ((i as f64 + 1.0) * 1.618_033_988_749_895).sin())
            .collect();
        let (b, lambda_b, it_b) = power_iterate(q, probe, qnorm)?;
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let tie = (lambda_a - lambda_b).abs() <= 1e-8 * qnorm;
        if !tie && lambda_b > lambda_a {
            // all-ones start was orthogonal to the leading eigenvector
            (b, lambda_b, it_a + it_b, false)
        } else {
            (a, lambda_a, it_a, tie && dot.abs() < 1.0 - 1e-6)
        }
    } else {
        (a, lambda_a, it_a, false)
    };
    fix_sign(&mut v);
    Ok(LeadingEigen {
        vector: v,
        value,
        iterations,
        degenerate,
    })
}

/// Sign convention: entries sum to a nonnegative value; an exactly balanced
/// vector gets a positive first nonzero entry.
fn fix_sign(v: &mut [f64]) {
    let sum: f64 = v.iter().sum();
    let scale = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let flip = if sum.abs() > 1e-12 * scale * v.len() as f64 {
        sum < 0.0
    } else {
        v.iter().find(|x| **x != 0.0).is_some_and(|x| *x < 0.0)
    };
    if flip {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}
