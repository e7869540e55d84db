use super::Matrix;
use crate::error::{invalid_arg, Error, Result};

/// Principal axes of a data matrix, truncated to the requested variance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// d × p, orthonormal columns in decreasing variance order.
    pub components: Matrix,
    /// Variance along every axis (all d), descending.
    pub eigenvalues: Vec<f64>,
    pub explained_ratio: f64,
}

impl Pca {
    pub fn n_components(&self) -> usize {
        self.components.cols()
    }

    /// `(X - mean) · components`.
    pub fn project(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::Shape(format!(
                "PCA fitted on {} features, got {}",
                self.mean.len(),
                x.cols()
            )));
        }
        let mut centred = x.clone();
        for i in 0..centred.rows() {
            for (v, m) in centred.row_mut(i).iter_mut().zip(&self.mean) {
                *v -= m;
            }
        }
        centred.matmul(&self.components)
    }
}

/// Smallest set of leading principal components whose explained variance
/// reaches `var_frac`. Component signs are fixed so the largest-magnitude
/// entry is positive.
pub fn pca_fit(x: &Matrix, var_frac: f64) -> Result<Pca> {
    let (n, d) = (x.rows(), x.cols());
    if n < 2 || d == 0 {
        return Err(invalid_arg!("PCA needs at least 2 rows and 1 column"));
    }
    if !(var_frac > 0.0 && var_frac <= 1.0) {
        return Err(invalid_arg!("var_frac must be in (0, 1]"));
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| x[(i, j)]).sum::<f64>() / n as f64)
        .collect();
    let mut cov = Matrix::zeros(d, d);
    for i in 0..n {
        let row: Vec<f64> = x.row(i).iter().zip(&mean).map(|(v, m)| v - m).collect();
        for a in 0..d {
            for b in a..d {
                cov[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            cov[(a, b)] /= (n - 1) as f64;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    let eig = nalgebra::SymmetricEigen::new(cov.to_nalgebra());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Numeric("PCA input has zero variance".into()));
    }
    let mut p = 0;
    let mut acc = 0.0;
    while p < d {
        acc += eigenvalues[p];
        p += 1;
        if acc / total >= var_frac - 1e-10 {
            break;
        }
    }
    // var_frac = 1 should stop at the numerical rank, not pick up round-off axes
    while p > 1 && eigenvalues[p - 1] <= 1e-12 * eigenvalues[0] {
        p -= 1;
    }
    let mut components = Matrix::zeros(d, p);
    for (c, &k) in order.iter().take(p).enumerate() {
        let v = eig.eigenvectors.column(k);
        let pivot = v
            .iter()
            .copied()
            .fold(0.0_f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for r in 0..d {
            components[(r, c)] = sign * v[r];
        }
    }
    let explained_ratio = eigenvalues[..p].iter().sum::<f64>() / total;
    Ok(Pca {
        mean,
        components,
        eigenvalues,
        explained_ratio,
    })
}
