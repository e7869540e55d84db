use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid_arg, Error, Result};
use crate::numerics::{covariance_matrix, kmeans_1d, leading_eigenvector, Matrix};

/// m × n matrix; row i holds model i's predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePredictions {
    p: Matrix,
}

impl EnsemblePredictions {
    pub fn new(p: Matrix) -> Result<Self> {
        if p.rows() < 2 || p.cols() < 2 {
            return Err(invalid_arg!(
                "ensemble needs at least 2 models and 2 samples, got {}x{}",
                p.rows(),
                p.cols()
            ));
        }
        if p.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("ensemble predictions contain non-finite values".into()));
        }
        Ok(Self { p })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn n_models(&self) -> usize {
        self.p.rows()
    }
    pub fn n_samples(&self) -> usize {
        self.p.cols()
    }
    pub fn matrix(&self) -> &Matrix {
        &self.p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SmlrPath {
    /// Eigenvector selection and weighting.
    Spectral,
    /// Every model produced the same predictions.
    IdenticalMembers,
    /// Tied or unresolvable leading eigenvalue; plain mean of all models.
    UniformFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmlrResult {
    pub mu0: Vec<f64>,
    pub strong_set: Vec<usize>,
    /// Normalized combination weights per model (zero outside the strong set).
    pub weights: Vec<f64>,
    pub combined: Vec<f64>,
    pub path: SmlrPath,
}

impl SmlrResult {
    pub fn is_fallback(&self) -> bool {
        self.path == SmlrPath::UniformFallback
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("smlr result serializes")
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Runs the spectral meta-learner.
///
/// Rows are processed in a canonical (lexicographic) order, so permuting the
/// models permutes `mu0` and the strong set and leaves `combined` bit-identical.
pub fn smlr_aggregate(ens: &EnsemblePredictions) -> Result<SmlrResult> {
    let p = ens.matrix();
    let (m, n) = (p.rows(), p.cols());

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| lexicographic(p.row(a), p.row(b)).then(a.cmp(&b)));
    let canon = Matrix::from_rows(&order.iter().map(|&i| p.row(i)).collect::<Vec<_>>())?;

    if (1..m).all(|i| canon.row(i) == canon.row(0)) {
        let w = 1.0 / m as f64;
        return Ok(SmlrResult {
            mu0: vec![1.0 / (m as f64).sqrt(); m],
            strong_set: (0..m).collect(),
            weights: vec![w; m],
            combined: canon.row(0).to_vec(),
            path: SmlrPath::IdenticalMembers,
        });
    }

    let q = covariance_matrix(&canon)?;
    let eig = match leading_eigenvector(&q) {
        Ok(e) if !e.degenerate && e.value > 0.0 => Some(e),
        Ok(_) => None,
        Err(Error::Numeric(msg)) => {
            log::warn!("smlr: {msg}; averaging all members");
            None
        }
        Err(e) => return Err(e),
    };
    let strong = eig.as_ref().and_then(|e| {
        let clusters = kmeans_1d(&e.vector.iter().map(|v| v.abs()).collect::<Vec<_>>(), 3);
        let strong = clusters.members(clusters.max_populated());
        // The weights mu_i / sum_S mu are unchanged by flipping the sign of
        // mu, so only a numerically zero sum leaves them undefined.
        let total: f64 = strong.iter().map(|&k| e.vector[k]).sum();
        let scale: f64 = strong.iter().map(|&k| e.vector[k].abs()).sum();
        if total.abs() > 1e-12 * scale {
            Some((strong, total))
        } else {
            log::warn!("smlr: strong-set eigenvector weights cancel; averaging all members");
            None
        }
    });
    let (Some(eig), Some((strong, total))) = (eig, strong) else {
        let w = 1.0 / m as f64;
        let combined = (0..n).map(|j| (0..m).map(|i| canon[(i, j)]).sum::<f64>() * w).collect();
        let mut mu0 = vec![0.0; m];
        if let Ok(e) = leading_eigenvector(&q) {
            for (k, &i) in order.iter().enumerate() {
                mu0[i] = e.vector[k];
            }
        }
        return Ok(SmlrResult {
            mu0,
            strong_set: (0..m).collect(),
            weights: vec![w; m],
            combined,
            path: SmlrPath::UniformFallback,
        });
    };

    let mu = &eig.vector;
    let weights_canon: Vec<f64> = strong.iter().map(|&k| mu[k] / total).collect();
    let all_positive = weights_canon.iter().all(|&w| w > 0.0);
    let combined = (0..n)
        .map(|j| {
            let v: f64 = strong.iter().zip(&weights_canon).map(|(&k, w)| w * canon[(k, j)]).sum();
            if all_positive {
                // a convex combination; keep rounding inside the members' range
                let (lo, hi) = strong.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &k| {
                    (lo.min(canon[(k, j)]), hi.max(canon[(k, j)]))
                });
                v.clamp(lo, hi)
            } else {
                v
            }
        })
        .collect();

    let mut mu0 = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for (k, &i) in order.iter().enumerate() {
        mu0[i] = mu[k];
    }
    for (&k, &w) in strong.iter().zip(&weights_canon) {
        weights[order[k]] = w;
    }
    let mut strong_set: Vec<usize> = strong.iter().map(|&k| order[k]).collect();
    strong_set.sort_unstable();
    Ok(SmlrResult {
        mu0,
        strong_set,
        weights,
        combined,
        path: SmlrPath::Spectral,
    })
}

/// `k` with-replacement resamples of `0..n_train`, each of size `n_train`.
pub fn bootstrap_indices(n_train: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| (0..n_train).map(|_| rng.random_range(0..n_train.max(1))).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    #[test]
    fn identical_members_return_that_row() {
        let row = [0.1, 0.7, 0.3, 0.2];
        let r = smlr_aggregate(&EnsemblePredictions::from_rows(&[row; 10]).unwrap()).unwrap();
        assert_eq!(r.combined, row.to_vec());
        assert_eq!(r.path, SmlrPath::IdenticalMembers);
    }

    #[test]
    fn anticorrelated_member_follows_absolute_value_clustering() {
        let p = [[1.0, 2.0, 3.0], [1.0, 2.0, 3.0], [-1.0, -2.0, -3.0]];
        let r = smlr_aggregate(&EnsemblePredictions::from_rows(&p).unwrap()).unwrap();
        let a = 1.0 / 3f64.sqrt();
        for (got, want) in r.mu0.iter().zip([a, a, -a]) {
            assert!((got - want).abs() < 1e-9);
        }
        // |mu0| is flat, so every member is "strong" and the negative weight
        // reflects the third model: (a f + a f + a f) / a = 3 f
        assert_eq!(r.strong_set, vec![0, 1, 2]);
        for (got, want) in r.combined.iter().zip([3.0, 6.0, 9.0]) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn shrunken_weak_members_are_left_out() {
        // weak regressors regress toward the mean: f_i = rho_i * y + noise
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth: Vec<f64> = (0..500).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rho = [1.0, 0.98, 0.3, 0.25, 0.2, 0.15];
        let rows: Vec<Vec<f64>> = rho
            .iter()
            .map(|r| {
                truth
                    .iter()
                    .map(|t| r * t + 0.05 * rng.random_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        let r = smlr_aggregate(&EnsemblePredictions::from_rows(&rows).unwrap()).unwrap();
        assert_eq!(r.path, SmlrPath::Spectral);
        assert_eq!(r.strong_set, vec![0, 1], "{:?}", r.mu0);
    }

    #[test]
    fn additive_noise_inflates_eigenvector_weights() {
        // Q = v 11' + diag(s^2): mu_i is proportional to 1 / (lambda - s_i^2),
        // so with truth + independent noise the noisiest members weigh most
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth: Vec<f64> = (0..2000).map(|_| rng.random()).collect();
        let sigma = [0.01, 0.01, 0.6, 0.7, 0.8, 0.9];
        let rows: Vec<Vec<f64>> = sigma
            .iter()
            .map(|s| truth.iter().map(|t| t + s * rng.random_range(-1.0..1.0)).collect())
            .collect();
        let r = smlr_aggregate(&EnsemblePredictions::from_rows(&rows).unwrap()).unwrap();
        assert!(r.mu0.windows(2).skip(1).all(|w| w[0] < w[1]), "{:?}", r.mu0);
        assert!(r.strong_set.contains(&5) && !r.strong_set.contains(&0));
    }

    #[test]
    fn mixed_sign_strong_set_keeps_signed_weights() {
        // rank one: f_i = v_i z, so mu0 is v (sum 0.12 > 0) and the strong
        // cluster {0.6, -0.7} sums to -0.1
        let v = [0.6, -0.7, 0.04, 0.05, 0.06, 0.07];
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let z: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rows: Vec<Vec<f64>> = v.iter().map(|a| z.iter().map(|x| a * x).collect()).collect();
        let r = smlr_aggregate(&EnsemblePredictions::from_rows(&rows).unwrap()).unwrap();
        assert_eq!(r.path, SmlrPath::Spectral);
        assert_eq!(r.strong_set, vec![0, 1]);
        assert!(
            (r.weights[0] + 6.0).abs() < 1e-9 && (r.weights[1] - 7.0).abs() < 1e-9,
            "{:?}",
            r.weights
        );
        for (c, x) in r.combined.iter().zip(&z) {
            assert!((c + 8.5 * x).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_spectrum_falls_back_to_mean() {
        // uncorrelated rows with equal variance: Q = 2 I
        let p = [[1.0, -1.0, 1.0, -1.0], [1.0, 1.0, -1.0, -1.0]];
        let r = smlr_aggregate(&EnsemblePredictions::from_rows(&p).unwrap()).unwrap();
        assert!(r.is_fallback());
        assert_eq!(r.combined, vec![1.0, 0.0, 0.0, -1.0]);
    }

    #[test]
    fn rejects_tiny_ensembles() {
        assert!(EnsemblePredictions::from_rows(&[[1.0, 2.0]]).is_err());
        assert!(EnsemblePredictions::from_rows(&[[1.0], [2.0]]).is_err());
        assert!(EnsemblePredictions::from_rows(&[[1.0, f64::NAN], [2.0, 1.0]]).is_err());
    }

    #[test]
    fn result_serializes() {
        let p = [[0.1, 0.5, 0.9], [0.2, 0.4, 0.8], [0.0, 0.9, 0.7]];
        let r = smlr_aggregate(&EnsemblePredictions::from_rows(&p).unwrap()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["path"], "spectral");
        assert!(v["weights"].is_array());
    }

    #[test]
    fn bootstrap_examples() {
        assert_eq!(bootstrap_indices(50, 3, 7), bootstrap_indices(50, 3, 7));
        assert_ne!(bootstrap_indices(50, 3, 7), bootstrap_indices(50, 3, 8));
        assert!(bootstrap_indices(1, 4, 0).iter().all(|s| s == &vec![0]));
        let draws = bootstrap_indices(1000, 1000, 42);
        let mut frac = 0.0;
        for d in &draws {
            let mut seen = vec![false; 1000];
            d.iter().for_each(|&i| seen[i] = true);
            frac += seen.iter().filter(|&&s| s).count() as f64 / 1000.0;
        }
        frac /= 1000.0;
        assert!((frac - (1.0 - (-1f64).exp())).abs() < 0.02, "{frac}");
    }

    proptest! {
        #[test]
        fn permutation_equivariance(seed in 0u64..500, perm_seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth: Vec<f64> = (0..40).map(|_| rng.random()).collect();
            let rows: Vec<Vec<f64>> = (0..6).map(|i| truth.iter().map(|t| t + 0.1 * (i + 1) as f64 * rng.random_range(-1.0..1.0)).collect()).collect();
            let mut perm: Vec<usize> = (0..6).collect();
            let mut prng = ChaCha8Rng::seed_from_u64(perm_seed);
            for i in (1..6).rev() {
                perm.swap(i, prng.random_range(0..=i));
            }
            let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
            let a = smlr_aggregate(&EnsemblePredictions::from_rows(&rows).unwrap()).unwrap();
            let b = smlr_aggregate(&EnsemblePredictions::from_rows(&permuted).unwrap()).unwrap();
            prop_assert_eq!(&a.combined, &b.combined);
            for (k, &i) in perm.iter().enumerate() {
                prop_assert_eq!(a.mu0[i], b.mu0[k]);
                prop_assert_eq!(a.strong_set.contains(&i), b.strong_set.contains(&k));
            }
        }

        #[test]
        fn combined_within_strong_range(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth: Vec<f64> = (0..30).map(|_| rng.random()).collect();
            let rows: Vec<Vec<f64>> = (0..5).map(|_| truth.iter().map(|t| t + 0.2 * rng.random_range(-1.0..1.0)).collect()).collect();
            let r = smlr_aggregate(&EnsemblePredictions::from_rows(&rows).unwrap()).unwrap();
            if r.strong_set.iter().all(|&i| r.mu0[i] > 0.0) {
                for j in 0..30 {
                    let lo = r.strong_set.iter().map(|&i| rows[i][j]).fold(f64::INFINITY, f64::min);
                    let hi = r.strong_set.iter().map(|&i| rows[i][j]).fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(r.combined[j] >= lo && r.combined[j] <= hi);
                }
            }
        }
    }
}
