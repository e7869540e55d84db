/// Result of 1-D k-means. Clusters are ordered by centroid; an empty cluster
/// keeps the centroid it was last given.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans1DResult {
    pub centroids: Vec<f64>,
    pub assignment: Vec<usize>,
    pub sizes: Vec<usize>,
}

impl KMeans1DResult {
    /// Index of the populated cluster with the largest centroid.
    pub fn max_populated(&self) -> usize {
        (0..self.centroids.len())
            .filter(|&c| self.sizes[c] > 0)
            .max_by(|&a, &b| self.centroids[a].total_cmp(&self.centroids[b]).then(a.cmp(&b)))
            .expect("at least one populated cluster")
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(i, &c)| (c == cluster).then_some(i))
            .collect()
    }
}

const MAX_LLOYD_ITERS: usize = 1000;

/// Lloyd's algorithm on a line with deterministic quantile initialization
/// (min, median, max for `k = 3`). Ties in distance go to the lower cluster.
///
/// Panics if `values` is empty or `k == 0`.
pub fn kmeans_1d(values: &[f64], k: usize) -> KMeans1DResult {
    assert!(!values.is_empty() && k >= 1, "kmeans_1d needs values and k >= 1");
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut centroids: Vec<f64> = if k == 1 {
        vec![sorted[(n - 1) / 2]]
    } else {
        (0..k).map(|i| sorted[i * (n - 1) / (k - 1)]).collect()
    };

    let nearest = |x: f64, cs: &[f64]| -> usize {
        let mut best = 0;
        for (c, &m) in cs.iter().enumerate().skip(1) {
            if (x - m).abs() < (x - cs[best]).abs() {
                best = c;
            }
        }
        best
    };

    let mut assignment: Vec<usize> = values.iter().map(|&x| nearest(x, &centroids)).collect();
    for _ in 0..MAX_LLOYD_ITERS {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&x, &c) in values.iter().zip(&assignment) {
            sums[c] += x;
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c] / counts[c] as f64;
            }
        }
        let next: Vec<usize> = values.iter().map(|&x| nearest(x, &centroids)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }

    // Lloyd preserves the initial order in 1-D up to equal centroids; sort anyway.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| centroids[a].total_cmp(&centroids[b]).then(a.cmp(&b)));
    let mut relabel = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new;
    }
    let assignment: Vec<usize> = assignment.iter().map(|&c| relabel[c]).collect();
    let mut sizes = vec![0; k];
    for &c in &assignment {
        sizes[c] += 1;
    }
    KMeans1DResult {
        centroids: order.iter().map(|&c| centroids[c]).collect(),
        assignment,
        sizes,
    }
}
