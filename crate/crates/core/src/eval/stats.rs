use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};
use statrs::function::erf::erfc;

use crate::error::{invalid_arg, invalid_data, Error, Result};
use crate::numerics::pearson_cc;

pub use crate::numerics::rmse;

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(pred: &[f64], truth: &[f64]) -> Result<Option<f64>> {
    match pearson_cc(pred, truth) {
        Ok(cc) => Ok(Some(cc)),
        Err(Error::Numeric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// How repeats enter the algorithm-effect ANOVA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnovaModel {
    /// Repeats averaged per cell; subject as blocking factor, algorithm tested
    /// against the algorithm × subject residual.
    #[default]
    RepeatMeans,
    /// Repeats as replicates with an interaction term; algorithm tested
    /// against the within-cell error.
    Replicated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f: f64,
    pub df_effect: f64,
    pub df_error: f64,
    pub p: f64,
}

fn f_upper_tail(f: f64, d1: f64, d2: f64) -> Result<f64> {
    let dist = FisherSnedecor::new(d1, d2).map_err(|e| Error::Numeric(format!("F distribution: {e}")))?;
    Ok(dist.sf(f))
}

/// Two-way ANOVA without interaction on `scores[algorithm][subject]`.
pub fn anova_two_way(scores: &[Vec<f64>]) -> Result<AnovaResult> {
    let a = scores.len();
    let s = scores.first().map_or(0, Vec::len);
    if a < 2 || s < 2 || scores.iter().any(|r| r.len() != s) {
        return Err(invalid_arg!(
            "ANOVA needs a complete matrix with at least 2 levels per factor"
        ));
    }
    if scores.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite ANOVA input".into()));
    }
    let grand = scores.iter().flatten().sum::<f64>() / (a * s) as f64;
    let row_means: Vec<f64> = scores.iter().map(|r| r.iter().sum::<f64>() / s as f64).collect();
    let col_means: Vec<f64> = (0..s)
        .map(|j| scores.iter().map(|r| r[j]).sum::<f64>() / a as f64)
        .collect();
    let ss_alg = s as f64 * row_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let mut ss_res = 0.0;
    for (i, row) in scores.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            ss_res += (v - row_means[i] - col_means[j] + grand).powi(2);
        }
    }
    let df1 = (a - 1) as f64;
    let df2 = ((a - 1) * (s - 1)) as f64;
    finish_f(ss_alg, df1, ss_res, df2, grand)
}

/// Two-way ANOVA with interaction on `scores[algorithm][subject][repeat]`.
pub fn anova_replicated(scores: &[Vec<Vec<f64>>]) -> Result<AnovaResult> {
    let a = scores.len();
    let s = scores.first().map_or(0, Vec::len);
    let r = scores.first().and_then(|x| x.first()).map_or(0, Vec::len);
    if a < 2 || s < 2 || r < 2 || scores.iter().any(|x| x.len() != s || x.iter().any(|c| c.len() != r)) {
        return Err(invalid_arg!(
            "replicated ANOVA needs a complete array with at least 2 levels per factor and 2 repeats"
        ));
    }
    let values = || scores.iter().flatten().flatten();
    if values().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite ANOVA input".into()));
    }
    let grand = values().sum::<f64>() / (a * s * r) as f64;
    let alg_means: Vec<f64> = scores
        .iter()
        .map(|x| x.iter().flatten().sum::<f64>() / (s * r) as f64)
        .collect();
    let ss_alg = (s * r) as f64 * alg_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let mut ss_err = 0.0;
    for cell in scores.iter().flatten() {
        let m = cell.iter().sum::<f64>() / r as f64;
        ss_err += cell.iter().map(|v| (v - m).powi(2)).sum::<f64>();
    }
    let df1 = (a - 1) as f64;
    let df2 = (a * s * (r - 1)) as f64;
    finish_f(ss_alg, df1, ss_err, df2, grand)
}

fn finish_f(ss_effect: f64, df1: f64, ss_error: f64, df2: f64, grand: f64) -> Result<AnovaResult> {
    let scale = grand.abs().max(1.0);
    if ss_error <= 1e-24 * scale * scale {
        return Err(invalid_data!("ANOVA residual variance is zero; F is undefined"));
    }
    let f = (ss_effect / df1) / (ss_error / df2);
    Ok(AnovaResult {
        f,
        df_effect: df1,
        df_error: df2,
        p: f_upper_tail(f, df1, df2)?,
    })
}

/// Midranks (1-based) of the pooled observations, plus the tie term
/// `Σ(t³ − t) / (12 (N − 1))`.
fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; n];
    let mut ties = 0.0;
    let mut k = 0;
    while k < n {
        let mut e = k + 1;
        while e < n && values[order[e]] == values[order[k]] {
            e += 1;
        }
        let rank = (k + 1 + e) as f64 / 2.0;
        for &i in &order[k..e] {
            ranks[i] = rank;
        }
        let t = (e - k) as f64;
        ties += t * t * t - t;
        k = e;
    }
    (ranks, ties / (12.0 * (n as f64 - 1.0)))
}

/// Mean joint rank per group and the tie-corrected rank variance.
fn rank_summary(groups: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
    if groups.len() < 2 || groups.iter().any(|x| x.len() < 2) {
        return Err(invalid_arg!(
            "Dunn's test needs at least 2 groups of at least 2 observations"
        ));
    }
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    if pooled.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite Dunn input".into()));
    }
    let n = pooled.len() as f64;
    let (ranks, tie_term) = midranks(&pooled);
    let variance = n * (n + 1.0) / 12.0 - tie_term;
    if variance <= 0.0 {
        return Err(invalid_data!("all observations are tied; Dunn's test is undefined"));
    }
    let mut mean_ranks = Vec::with_capacity(groups.len());
    let mut offset = 0;
    for grp in groups {
        mean_ranks.push(ranks[offset..offset + grp.len()].iter().sum::<f64>() / grp.len() as f64);
        offset += grp.len();
    }
    Ok((mean_ranks, variance))
}

fn z_of(groups: &[Vec<f64>], mean_ranks: &[f64], variance: f64, i: usize, j: usize) -> f64 {
    let se = (variance * (1.0 / groups[i].len() as f64 + 1.0 / groups[j].len() as f64)).sqrt();
    (mean_ranks[i] - mean_ranks[j]) / se
}

/// Dunn's pairwise test on jointly ranked groups. Returns the symmetric
/// two-sided p matrix (unit diagonal).
pub fn dunn_pairwise(groups: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let (mean_ranks, variance) = rank_summary(groups)?;
    let g = groups.len();
    let mut p = vec![vec![1.0; g]; g];
    for i in 0..g {
        for j in i + 1..g {
            let z = z_of(groups, &mean_ranks, variance, i, j);
            let pij = erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0);
            p[i][j] = pij;
            p[j][i] = pij;
        }
    }
    Ok(p)
}

/// The signed Dunn z statistic for groups `i` and `j`.
pub fn dunn_z(groups: &[Vec<f64>], i: usize, j: usize) -> Result<f64> {
    let (mean_ranks, variance) = rank_summary(groups)?;
    if i >= groups.len() || j >= groups.len() {
        return Err(invalid_arg!("group index out of range"));
    }
    Ok(z_of(groups, &mean_ranks, variance, i, j))
}

/// Benjamini-Hochberg step-up adjustment, returned in input order.
pub fn fdr_adjust(p: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(invalid_arg!("p value {bad} outside [0, 1]"));
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p[i].total_cmp(&p[j]));
    let mut out = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (0..m).rev() {
        let i = order[rank];
        running = running.min(p[i] * (m as f64 / (rank + 1) as f64));
        out[i] = running.min(1.0);
    }
    Ok(out)
}
