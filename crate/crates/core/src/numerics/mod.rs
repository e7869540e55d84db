mod eigen;
mod kmeans;
mod matrix;
mod pca;
mod ridge;

pub use eigen::{leading_eigenvector, LeadingEigen, POWER_ITERATION_CAP, POWER_ITERATION_TOL};
pub use kmeans::{kmeans_1d, KMeans1DResult};
pub use matrix::Matrix;
pub use pca::{pca_fit, Pca};
pub use ridge::{ridge_fit, RidgeModel};

use crate::error::{invalid_arg, Error, Result};

/// Sample covariance of the rows of `p` (each row one variable).
pub fn covariance_matrix(p: &Matrix) -> Result<Matrix> {
    let (m, n) = (p.rows(), p.cols());
    if n < 2 {
        return Err(invalid_arg!("covariance needs at least 2 observations, got {n}"));
    }
    let centred: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let row = p.row(i);
            let mean = row.iter().sum::<f64>() / n as f64;
            row.iter().map(|v| v - mean).collect()
        })
        .collect();
    let mut q = Matrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let s: f64 = centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).sum();
            q[(i, j)] = s / (n - 1) as f64;
            q[(j, i)] = q[(i, j)];
        }
    }
    Ok(q)
}

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(invalid_arg!("empty prediction vector"));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let ss: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

/// Pearson correlation; errors when either side has zero variance.
pub fn pearson_cc(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let (a, b) = (p - mp, t - mt);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::Numeric("correlation undefined for zero-variance input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::new(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Cyclic Jacobi eigenvalues, independent of both nalgebra and power iteration.
    fn jacobi_eigenvalues(a: &Matrix) -> Vec<f64> {
        let n = a.rows();
        let mut m = a.clone();
        for _ in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| m[(i, j)].powi(2))
                .sum();
            if off < 1e-24 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if m[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                        m[(k, p)] = c * mkp - s * mkq;
                        m[(k, q)] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                        m[(p, k)] = c * mpk - s * mqk;
                        m[(q, k)] = s * mpk + c * mqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    #[test]
    fn covariance_examples() {
        let q = covariance_matrix(&Matrix::from_rows(&[[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]).unwrap()).unwrap();
        assert_eq!(q.as_slice(), &[1.0; 4]);
        let q = covariance_matrix(&Matrix::from_rows(&[[1.0, 2.0, 3.0], [3.0, 2.0, 1.0]]).unwrap()).unwrap();
        assert_eq!(q.as_slice(), &[1.0, -1.0, -1.0, 1.0]);
        let q = covariance_matrix(&Matrix::from_rows(&[[4.0, 4.0, 4.0], [3.0, 2.0, 1.0]]).unwrap()).unwrap();
        assert_eq!((q[(0, 0)], q[(0, 1)], q[(1, 0)]), (0.0, 0.0, 0.0));
        assert!(covariance_matrix(&Matrix::from_rows(&[[1.0]]).unwrap()).is_err());
    }

    #[test]
    fn covariance_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (m, n) in [(2, 5), (7, 100), (20, 1000)] {
            let p = random_matrix(&mut rng, m, n);
            let q = covariance_matrix(&p).unwrap();
            for i in 0..m {
                for j in 0..m {
                    let mi: f64 = (0..n).map(|k| p[(i, k)]).sum::<f64>() / n as f64;
                    let mj: f64 = (0..n).map(|k| p[(j, k)]).sum::<f64>() / n as f64;
                    let mut s = 0.0;
                    for k in 0..n {
                        s += (p[(i, k)] - mi) * (p[(j, k)] - mj);
                    }
                    assert!((q[(i, j)] - s / (n - 1) as f64).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn eigen_examples() {
        let e = leading_eigenvector(&Matrix::from_rows(&[[3.0, 0.0], [0.0, 1.0]]).unwrap()).unwrap();
        assert!((e.vector[0] - 1.0).abs() < 1e-9 && e.vector[1].abs() < 1e-9);
        assert!(!e.degenerate);

        let e = leading_eigenvector(&Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap()).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.vector[0] - h).abs() < 1e-12 && (e.vector[1] - h).abs() < 1e-12);
        assert!((e.value - 3.0).abs() < 1e-12);

        let e = leading_eigenvector(&Matrix::identity(4)).unwrap();
        assert!(e.degenerate);
        assert!((e.vector.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);

        // all-ones start is in the null space here
        let e = leading_eigenvector(&Matrix::from_rows(&[[1.0, -1.0], [-1.0, 1.0]]).unwrap()).unwrap();
        assert!((e.value - 2.0).abs() < 1e-12, "{e:?}");
        assert!((e.vector[0] - h).abs() < 1e-9 && (e.vector[1] + h).abs() < 1e-9);
        assert!(!e.degenerate);

        assert!(leading_eigenvector(&Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap()).is_err());
    }

    #[test]
    fn eigen_properties_on_random_covariances() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..10 {
            let m = 2 + trial;
            let q = covariance_matrix(&random_matrix(&mut rng, m, 50)).unwrap();
            let e = leading_eigenvector(&q).unwrap();
            let qv = q.matvec(&e.vector).unwrap();
            for (a, b) in qv.iter().zip(&e.vector) {
                assert!((a - e.value * b).abs() < 1e-8);
            }
            assert!(e.vector.iter().sum::<f64>() >= 0.0);
            assert!((e.value - jacobi_eigenvalues(&q)[0]).abs() < 1e-8);
            for _ in 0..100 {
                let mut u: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
                let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                u.iter_mut().for_each(|x| *x /= n);
                let qu = q.matvec(&u).unwrap();
                let rq: f64 = u.iter().zip(&qu).map(|(a, b)| a * b).sum();
                assert!(e.value >= rq - 1e-12);
            }
        }
    }

    /// Best contiguous partition of the sorted values into at most k groups.
    fn optimal_sse(values: &[f64], k: usize) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.total_cmp(b));
        fn sse(s: &[f64]) -> f64 {
            let m = s.iter().sum::<f64>() / s.len() as f64;
            s.iter().map(|x| (x - m).powi(2)).sum()
        }
        fn rec(v: &[f64], k: usize) -> f64 {
            if k == 1 || v.len() <= 1 {
                return sse(v);
            }
            (1..v.len())
                .map(|cut| sse(&v[..cut]) + rec(&v[cut..], k - 1))
                .fold(sse(v), f64::min)
        }
        rec(&v, k)
    }

    fn result_sse(values: &[f64], r: &KMeans1DResult) -> f64 {
        values
            .iter()
            .zip(&r.assignment)
            .map(|(x, &c)| (x - r.centroids[c]).powi(2))
            .sum()
    }

    #[test]
    fn kmeans_examples() {
        let v = [0.1, 0.11, 0.5, 0.52, 0.9];
        let r = kmeans_1d(&v, 3);
        assert_eq!(r.assignment, vec![0, 0, 1, 1, 2]);
        assert!((result_sse(&v, &r) - optimal_sse(&v, 3)).abs() < 1e-15);
        assert_eq!(r.max_populated(), 2);

        let r = kmeans_1d(&[0.3; 6], 3);
        assert_eq!(r.sizes.iter().filter(|&&s| s > 0).count(), 1);
        assert_eq!(r.members(r.max_populated()).len(), 6);

        let r = kmeans_1d(&[0.9, 0.1, 0.5], 3);
        assert_eq!(r.assignment, vec![2, 0, 1]);
        assert_eq!(r.sizes, vec![1, 1, 1]);

        let r = kmeans_1d(&[0.2, 0.2, 0.7, 0.7, 0.7], 3);
        assert_eq!(r.sizes.iter().filter(|&&s| s > 0).count(), 2);
    }

    #[test]
    fn kmeans_well_separated_matches_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..30 {
            // equal group sizes put the median seed in the middle group
            let n = 3 * rng.random_range(1..=3);
            let v: Vec<f64> = (0..n).map(|i| (i % 3) as f64 + rng.random_range(0.0..0.2)).collect();
            let r = kmeans_1d(&v, 3);
            assert!((result_sse(&v, &r) - optimal_sse(&v, 3)).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn kmeans_fixed_point_and_deterministic(v in prop::collection::vec(0.0f64..1.0, 1..30)) {
            let r = kmeans_1d(&v, 3);
            prop_assert_eq!(&r, &kmeans_1d(&v, 3));
            for w in r.centroids.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            for (i, &x) in v.iter().enumerate() {
                let c = r.assignment[i];
                for (o, &m) in r.centroids.iter().enumerate() {
                    if r.sizes[o] > 0 {
                        prop_assert!((x - r.centroids[c]).abs() <= (x - m).abs() + 1e-12);
                    }
                }
            }
            for c in 0..3 {
                if r.sizes[c] > 0 {
                    let mem = r.members(c);
                    let m = mem.iter().map(|&i| v[i]).sum::<f64>() / mem.len() as f64;
                    prop_assert!((m - r.centroids[c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn ridge_examples() {
        let x = Matrix::new(5, 1, vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = [0.0, 2.0, 4.0, 6.0, 8.0];
        let m = ridge_fit(&x, &y, 0.0).unwrap();
        assert!((m.weights[0] - 2.0).abs() < 1e-10 && m.intercept.abs() < 1e-10);

        let y2 = [1.0, 0.0, 3.0, 2.0, 9.0];
        let m = ridge_fit(&x, &y2, 1e12).unwrap();
        assert!(m.weights[0].abs() < 1e-9);
        assert!((m.intercept - 3.0).abs() < 1e-8);

        let dup = Matrix::new(3, 2, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]).unwrap();
        assert!(ridge_fit(&dup, &[1.0, 2.0, 3.0], 0.0).is_err());
        assert!(ridge_fit(&dup, &[1.0, 2.0, 3.0], 0.1).is_ok());
    }

    /// Normal equations with an explicit intercept column, solved by Gaussian
    /// elimination with partial pivoting.
    fn brute_ridge(x: &Matrix, y: &[f64], lambda: f64) -> Vec<f64> {
        let (n, d) = (x.rows(), x.cols());
        let xm: Vec<f64> = (0..d)
            .map(|j| (0..n).map(|i| x[(i, j)]).sum::<f64>() / n as f64)
            .collect();
        let ym = y.iter().sum::<f64>() / n as f64;
        let mut a = vec![vec![0.0; d + 1]; d];
        for r in 0..d {
            for c in 0..d {
                a[r][c] = (0..n).map(|i| (x[(i, r)] - xm[r]) * (x[(i, c)] - xm[c])).sum::<f64>();
            }
            a[r][r] += lambda;
            a[r][d] = (0..n).map(|i| (x[(i, r)] - xm[r]) * (y[i] - ym)).sum::<f64>();
        }
        for col in 0..d {
            let piv = (col..d)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            a.swap(col, piv);
            for r in 0..d {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for c in col..=d {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
        (0..d).map(|r| a[r][d] / a[r][r]).collect()
    }

    #[test]
    fn ridge_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random_matrix(&mut rng, 20, 5);
        let y: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        for lambda in [0.0, 1.0] {
            let m = ridge_fit(&x, &y, lambda).unwrap();
            for (a, b) in m.weights.iter().zip(brute_ridge(&x, &y, lambda)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pca_line_isotropic_and_full() {
        let rows: Vec<[f64; 3]> = (0..10)
            .map(|i| {
                let t = i as f64;
                [t, 2.0 * t, -t]
            })
            .collect();
        let p = pca_fit(&Matrix::from_rows(&rows).unwrap(), 0.95).unwrap();
        assert_eq!(p.n_components(), 1);
        let dir = [1.0, 2.0, -1.0].map(|v: f64| v / 6f64.sqrt());
        let dot: f64 = (0..3).map(|r| p.components[(r, 0)] * dir[r]).sum();
        assert!((dot.abs() - 1.0).abs() < 1e-10);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = rand_distr::StandardNormal;
        let iso: Vec<[f64; 2]> = (0..4000).map(|_| [rng.sample(normal), rng.sample(normal)]).collect();
        let x = Matrix::from_rows(&iso).unwrap();
        let p = pca_fit(&x, 0.95).unwrap();
        assert_eq!(p.n_components(), 2);
        let ev = jacobi_eigenvalues(&covariance_matrix(&x.transpose()).unwrap());
        assert!(ev[0] / (ev[0] + ev[1]) < 0.95);

        let x = random_matrix(&mut rng, 30, 6);
        assert_eq!(pca_fit(&x, 1.0).unwrap().n_components(), 6);
        let mut low = random_matrix(&mut rng, 30, 2)
            .matmul(&random_matrix(&mut rng, 2, 5))
            .unwrap();
        low.row_mut(0)[0] += 0.0;
        assert_eq!(pca_fit(&low, 1.0).unwrap().n_components(), 2);

        assert!(pca_fit(&Matrix::new(3, 2, vec![1.0; 6]).unwrap(), 0.95).is_err());
    }

    #[test]
    fn pca_components_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_matrix(&mut rng, 50, 8);
        let p = pca_fit(&x, 0.9).unwrap();
        let ctc = p.components.transpose().matmul(&p.components).unwrap();
        for i in 0..ctc.rows() {
            for j in 0..ctc.cols() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((ctc[(i, j)] - want).abs() < 1e-10);
            }
        }
        assert!(p.explained_ratio >= 0.9);
        let proj = p.project(&x).unwrap();
        let kept: f64 = (0..proj.cols())
            .map(|c| {
                let col = proj.col(c);
                col.iter().map(|v| v * v).sum::<f64>()
            })
            .sum();
        let total: f64 = (0..8)
            .map(|c| {
                let col = x.col(c);
                let m = mean(&col);
                col.iter().map(|v| (v - m).powi(2)).sum::<f64>()
            })
            .sum();
        assert!(kept / total >= 0.9 - 1e-12);
    }

    #[test]
    fn metric_examples() {
        let t = [0.1, 0.5, 0.9, 0.3];
        assert_eq!(rmse(&t, &t).unwrap(), 0.0);
        assert!((pearson_cc(&t, &t).unwrap() - 1.0).abs() < 1e-15);
        assert!((rmse(&[0.0, 1.0], &[0.0, 0.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        let aff: Vec<f64> = t.iter().map(|v| 3.5 * v - 2.0).collect();
        assert!((pearson_cc(&aff, &t).unwrap() - 1.0).abs() < 1e-12);
        assert!(pearson_cc(&[1.0, 1.0], &[0.0, 1.0]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }
}
