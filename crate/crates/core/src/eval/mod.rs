mod stats;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::container::Dataset;
use crate::eegnet::splitmix;
use crate::error::{invalid_arg, invalid_data, Error, Result};
use crate::pipelines::{prepare_recording, run_algorithm, AlgorithmId, PredictionRow, SubjectFeatures, SubjectInputs};

pub use stats::{
    anova_replicated, anova_two_way, dunn_pairwise, dunn_z, fdr_adjust, pearson, rmse, AnovaModel, AnovaResult,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Rmse,
    Cc,
}

impl Metric {
    pub const BOTH: [Metric; 2] = [Metric::Rmse, Metric::Cc];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Rmse => "RMSE",
            Metric::Cc => "CC",
        }
    }
}

/// Score of one (algorithm, target subject, repeat) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCell {
    pub algorithm: AlgorithmId,
    pub subject: String,
    pub repeat: usize,
    pub seed: u64,
    pub rmse: f64,
    /// Zero when undefined (constant predictions or labels).
    pub cc: f64,
    pub cc_undefined: bool,
}

impl ScoreCell {
    pub fn value(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Rmse => self.rmse,
            Metric::Cc => self.cc,
        }
    }
}

/// Scores predictions against labels, recording an undefined CC as 0.
pub fn score(pred: &[f64], truth: &[f64]) -> Result<(f64, f64, bool)> {
    let e = rmse(pred, truth)?;
    Ok(match pearson(pred, truth)? {
        Some(cc) => (e, cc, false),
        None => (e, 0.0, true),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: AlgorithmId,
    pub rmse_mean: f64,
    pub rmse_sd: f64,
    pub cc_mean: f64,
    pub cc_sd: f64,
}

/// One algorithm pair with Dunn p values per metric, raw and FDR-adjusted.
/// `None` where the test is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRow {
    pub a: AlgorithmId,
    pub b: AlgorithmId,
    pub rmse_p: Option<f64>,
    pub rmse_p_adj: Option<f64>,
    pub cc_p: Option<f64>,
    pub cc_p_adj: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub algorithms: Vec<AlgorithmId>,
    pub subjects: Vec<String>,
    pub n_repeats: usize,
    pub seed: u64,
    pub anova_model: AnovaModel,
    /// Ordered by subject, then algorithm, then repeat.
    pub cells: Vec<ScoreCell>,
    pub averages: Vec<AlgorithmSummary>,
    pub anova_rmse: Option<AnovaResult>,
    pub anova_cc: Option<AnovaResult>,
    pub pairwise: Vec<PairwiseRow>,
}

impl EvalReport {
    /// Assembles the summary statistics from a complete set of cells.
    pub fn from_cells(
        algorithms: &[AlgorithmId],
        subjects: &[String],
        n_repeats: usize,
        seed: u64,
        anova_model: AnovaModel,
        cells: Vec<ScoreCell>,
    ) -> Result<Self> {
        let mut report = Self {
            algorithms: algorithms.to_vec(),
            subjects: subjects.to_vec(),
            n_repeats,
            seed,
            anova_model,
            cells,
            averages: Vec::new(),
            anova_rmse: None,
            anova_cc: None,
            pairwise: Vec::new(),
        };
        report.check_complete()?;
        let r = report.repeat_means(Metric::Rmse);
        let c = report.repeat_means(Metric::Cc);
        report.averages = algorithms
            .iter()
            .enumerate()
            .map(|(i, &algorithm)| {
                let (rmse_mean, rmse_sd) = mean_sd(&r[i]);
                let (cc_mean, cc_sd) = mean_sd(&c[i]);
                AlgorithmSummary {
                    algorithm,
                    rmse_mean,
                    rmse_sd,
                    cc_mean,
                    cc_sd,
                }
            })
            .collect();
        report.anova_rmse = report.anova(Metric::Rmse);
        report.anova_cc = report.anova(Metric::Cc);
        report.pairwise = report.pairwise_tests()?;
        Ok(report)
    }

    fn check_complete(&self) -> Result<()> {
        if self.algorithms.is_empty() || self.subjects.is_empty() || self.n_repeats == 0 {
            return Err(invalid_data!("report has no algorithms, subjects or repeats"));
        }
        let expected = self.algorithms.len() * self.subjects.len() * self.n_repeats;
        if self.cells.len() != expected {
            return Err(invalid_data!(
                "report has {} cells, expected {expected}",
                self.cells.len()
            ));
        }
        for cell in &self.cells {
            if !(cell.rmse.is_finite() && cell.rmse >= 0.0 && (-1.0..=1.0).contains(&cell.cc)) {
                return Err(invalid_data!(
                    "invalid score for {} on {} repeat {}",
                    cell.algorithm,
                    cell.subject,
                    cell.repeat
                ));
            }
        }
        for s in &self.subjects {
            for &a in &self.algorithms {
                for r in 0..self.n_repeats {
                    self.cell(a, s, r)?;
                }
            }
        }
        Ok(())
    }

    pub fn cell(&self, algorithm: AlgorithmId, subject: &str, repeat: usize) -> Result<&ScoreCell> {
        self.cells
            .iter()
            .find(|c| c.algorithm == algorithm && c.subject == subject && c.repeat == repeat)
            .ok_or_else(|| invalid_data!("missing score for {algorithm} on {subject} repeat {repeat}"))
    }

    fn values(&self, algorithm: AlgorithmId, subject: &str, metric: Metric) -> Vec<f64> {
        let mut v: Vec<(usize, f64)> = self
            .cells
            .iter()
            .filter(|c| c.algorithm == algorithm && c.subject == subject)
            .map(|c| (c.repeat, c.value(metric)))
            .collect();
        v.sort_by_key(|&(r, _)| r);
        v.into_iter().map(|(_, x)| x).collect()
    }

    /// `[algorithm][subject]` means over repeats.
    pub fn repeat_means(&self, metric: Metric) -> Vec<Vec<f64>> {
        self.algorithms
            .iter()
            .map(|&a| {
                self.subjects
                    .iter()
                    .map(|s| mean_sd(&self.values(a, s, metric)).0)
                    .collect()
            })
            .collect()
    }

    /// `[algorithm][subject]` standard deviations over repeats.
    pub fn repeat_sds(&self, metric: Metric) -> Vec<Vec<f64>> {
        self.algorithms
            .iter()
            .map(|&a| {
                self.subjects
                    .iter()
                    .map(|s| mean_sd(&self.values(a, s, metric)).1)
                    .collect()
            })
            .collect()
    }

    pub fn summary(&self, algorithm: AlgorithmId) -> Option<&AlgorithmSummary> {
        self.averages.iter().find(|s| s.algorithm == algorithm)
    }

    pub fn undefined_cc_count(&self) -> usize {
        self.cells.iter().filter(|c| c.cc_undefined).count()
    }

    fn anova(&self, metric: Metric) -> Option<AnovaResult> {
        let result = match self.anova_model {
            AnovaModel::RepeatMeans => anova_two_way(&self.repeat_means(metric)),
            AnovaModel::Replicated => {
                let full: Vec<Vec<Vec<f64>>> = self
                    .algorithms
                    .iter()
                    .map(|&a| self.subjects.iter().map(|s| self.values(a, s, metric)).collect())
                    .collect();
                anova_replicated(&full)
            }
        };
        match result {
            Ok(r) => Some(r),
            Err(e) => {
                log::warn!("{} ANOVA undefined: {e}", metric.label());
                None
            }
        }
    }

    fn pairwise_tests(&self) -> Result<Vec<PairwiseRow>> {
        let pairs: Vec<(usize, usize)> = (0..self.algorithms.len())
            .flat_map(|i| (i + 1..self.algorithms.len()).map(move |j| (i, j)))
            .collect();
        let mut per_metric: Vec<(Vec<Option<f64>>, Vec<Option<f64>>)> = Vec::new();
        for metric in Metric::BOTH {
            let raw: Vec<Option<f64>> = match dunn_pairwise(&self.repeat_means(metric)) {
                Ok(p) => pairs.iter().map(|&(i, j)| Some(p[i][j])).collect(),
                Err(e) => {
                    log::warn!("{} pairwise tests undefined: {e}", metric.label());
                    vec![None; pairs.len()]
                }
            };
            let adjusted = if raw.iter().all(Option::is_some) && !raw.is_empty() {
                let flat: Vec<f64> = raw.iter().map(|p| p.unwrap_or(1.0)).collect();
                fdr_adjust(&flat)?.into_iter().map(Some).collect()
            } else {
                vec![None; pairs.len()]
            };
            per_metric.push((raw, adjusted));
        }
        Ok(pairs
            .iter()
            .enumerate()
            .map(|(k, &(i, j))| PairwiseRow {
                a: self.algorithms[i],
                b: self.algorithms[j],
                rmse_p: per_metric[0].0[k],
                rmse_p_adj: per_metric[0].1[k],
                cc_p: per_metric[1].0[k],
                cc_p_adj: per_metric[1].1[k],
            })
            .collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        report.check_complete()?;
        Ok(report)
    }
}

/// Mean and sample standard deviation (0 for a single value).
fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Algorithms in table order, duplicates removed.
pub fn table_order(algorithms: &[AlgorithmId]) -> Vec<AlgorithmId> {
    AlgorithmId::ALL
        .iter()
        .copied()
        .filter(|a| algorithms.contains(a))
        .collect()
}

/// Seed of one (target, algorithm, repeat) run.
pub fn cell_seed(master: u64, target: usize, algorithm: AlgorithmId, repeat: usize) -> u64 {
    let a = AlgorithmId::ALL.iter().position(|&x| x == algorithm).unwrap_or(0);
    splitmix(
        splitmix(splitmix(master, target as u64 + 1), a as u64 + 1),
        repeat as u64 + 1,
    )
}

/// Scores and predictions of a full LOSO sweep.
#[derive(Debug, Clone)]
pub struct LosoOutcome {
    pub report: EvalReport,
    pub predictions: Vec<PredictionRow>,
}

/// Runs `predict(algorithm, training subjects, target inputs, seed)` for every
/// target, algorithm and repeat, in parallel over all three, and scores each
/// run against the target's labels.
pub fn loso_with<F>(
    subjects: &[SubjectFeatures],
    algorithms: &[AlgorithmId],
    n_repeats: usize,
    master_seed: u64,
    jobs: Option<usize>,
    anova_model: AnovaModel,
    predict: F,
) -> Result<LosoOutcome>
where
    F: Fn(AlgorithmId, &[&SubjectFeatures], &SubjectInputs, u64) -> Result<Vec<f64>> + Sync,
{
    if subjects.len() < 2 {
        return Err(invalid_arg!("LOSO needs at least 2 subjects, got {}", subjects.len()));
    }
    if n_repeats == 0 {
        return Err(invalid_arg!("n_repeats must be >= 1"));
    }
    let algorithms = table_order(algorithms);
    if algorithms.is_empty() {
        return Err(invalid_arg!("no algorithms selected"));
    }
    let names: Vec<String> = subjects.iter().map(|s| s.inputs.subject_id.clone()).collect();
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(invalid_data!("duplicate subject id {n}"));
        }
    }
    let tasks: Vec<(usize, AlgorithmId, usize)> = (0..subjects.len())
        .flat_map(|t| {
            let algorithms = algorithms.clone();
            algorithms
                .into_iter()
                .flat_map(move |a| (0..n_repeats).map(move |r| (t, a, r)))
        })
        .collect();
    let run = |&(t, a, r): &(usize, AlgorithmId, usize)| -> Result<(ScoreCell, Vec<f64>)> {
        let train: Vec<&SubjectFeatures> = subjects
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != t)
            .map(|(_, s)| s)
            .collect();
        let target = &subjects[t];
        let seed = cell_seed(master_seed, t, a, r);
        let pred = predict(a, &train, &target.inputs, seed)?;
        if pred.len() != target.labels.values.len() {
            return Err(invalid_data!(
                "{a} returned {} predictions for {} samples",
                pred.len(),
                target.labels.values.len()
            ));
        }
        if pred.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "{a} produced non-finite predictions on {}",
                names[t]
            )));
        }
        let (e, cc, undefined) = score(&pred, &target.labels.values)?;
        log::info!("{a} on {} repeat {r}: rmse {e:.4} cc {cc:.4}", names[t]);
        Ok((
            ScoreCell {
                algorithm: a,
                subject: names[t].clone(),
                repeat: r,
                seed,
                rmse: e,
                cc,
                cc_undefined: undefined,
            },
            pred,
        ))
    };
    let results: Vec<Result<(ScoreCell, Vec<f64>)>> = with_pool(jobs, || tasks.par_iter().map(run).collect())?;
    let mut cells = Vec::with_capacity(tasks.len());
    let mut predictions = Vec::new();
    for ((t, _, _), res) in tasks.iter().zip(results) {
        let (cell, pred) = res?;
        let grid = subjects[*t].inputs.grid();
        predictions.extend(pred.iter().enumerate().map(|(k, &p)| PredictionRow {
            algorithm: cell.algorithm,
            subject: cell.subject.clone(),
            repeat: cell.repeat,
            grid_time_s: grid.time(k),
            prediction: p,
        }));
        cells.push(cell);
    }
    let report = EvalReport::from_cells(&algorithms, &names, n_repeats, master_seed, anova_model, cells)?;
    Ok(LosoOutcome { report, predictions })
}

/// LOSO over the configured algorithms and repeats. `cfg.seed` is required.
pub fn loso_evaluate(subjects: &[SubjectFeatures], cfg: &PipelineConfig) -> Result<LosoOutcome> {
    cfg.validate()?;
    let seed = cfg
        .seed
        .ok_or_else(|| invalid_arg!("a master seed is required for LOSO evaluation"))?;
    loso_with(
        subjects,
        &cfg.algorithms,
        cfg.n_repeats,
        seed,
        cfg.jobs,
        cfg.anova_model,
        |a, train, target, s| run_algorithm(a, train, target, cfg, s),
    )
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Loads, preprocesses (unless already done) and featurizes every subject
/// of a dataset.
pub fn prepare_subjects(dataset: &Dataset, cfg: &PipelineConfig) -> Result<Vec<SubjectFeatures>> {
    let with_raw = cfg.algorithms.iter().any(|a| a.needs_raw());
    with_pool(cfg.jobs, || {
        dataset
            .subjects()
            .par_iter()
            .map(|name| {
                let rec = prepare_recording(&dataset.load(name)?, cfg)?;
                SubjectFeatures::from_preprocessed(&rec, cfg, with_raw)
            })
            .collect::<Result<Vec<_>>>()
    })?
}

/// Formats to 6 significant digits.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return "NA".into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-4..6).contains(&mag) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - mag).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn opt6(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".into(), sig6)
}

pub const REPORT_FILES: [&str; 5] = [
    "averages.csv",
    "anova.csv",
    "pairwise.csv",
    "fig1_data.csv",
    "report.json",
];

/// Writes the summary tables and `report.json` into `dir`.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        averages_csv(report),
        anova_csv(report),
        pairwise_csv(report),
        fig1_csv(report),
        report.to_json() + "\n",
    ];
    let mut written = Vec::new();
    for (name, text) in REPORT_FILES.iter().zip(files) {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

pub fn averages_csv(report: &EvalReport) -> String {
    let mut out = String::from("metric");
    for a in &report.averages {
        out.push(',');
        out.push_str(a.algorithm.label());
    }
    out.push('\n');
    let rows: [(&str, fn(&AlgorithmSummary) -> f64); 4] = [
        ("RMSE", |s| s.rmse_mean),
        ("RMSE_sd", |s| s.rmse_sd),
        ("CC", |s| s.cc_mean),
        ("CC_sd", |s| s.cc_sd),
    ];
    for (name, get) in rows {
        out.push_str(name);
        for s in &report.averages {
            out.push(',');
            out.push_str(&sig6(get(s)));
        }
        out.push('\n');
    }
    out
}

pub fn anova_csv(report: &EvalReport) -> String {
    let mut out = String::from("metric,F,df_algorithm,df_error,p\n");
    for (metric, r) in [(Metric::Rmse, report.anova_rmse), (Metric::Cc, report.anova_cc)] {
        match r {
            Some(r) => out.push_str(&format!(
                "{},{},{},{},{}\n",
                metric.label(),
                sig6(r.f),
                r.df_effect,
                r.df_error,
                sig6(r.p)
            )),
            None => out.push_str(&format!("{},NA,NA,NA,NA\n", metric.label())),
        }
    }
    out
}

pub fn pairwise_csv(report: &EvalReport) -> String {
    let mut out = String::from("algorithm_a,algorithm_b,rmse_p,rmse_p_adj,cc_p,cc_p_adj\n");
    for r in &report.pairwise {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.a.label(),
            r.b.label(),
            opt6(r.rmse_p),
            opt6(r.rmse_p_adj),
            opt6(r.cc_p),
            opt6(r.cc_p_adj)
        ));
    }
    out
}

/// Per-subject bar data (mean and sd over repeats) followed by an
/// `average` group (mean and sd over subjects).
pub fn fig1_csv(report: &EvalReport) -> String {
    let mut out = String::from("group,algorithm,rmse_mean,rmse_sd,cc_mean,cc_sd\n");
    let (rm, rs) = (report.repeat_means(Metric::Rmse), report.repeat_sds(Metric::Rmse));
    let (cm, cs) = (report.repeat_means(Metric::Cc), report.repeat_sds(Metric::Cc));
    for (j, subject) in report.subjects.iter().enumerate() {
        for (i, a) in report.algorithms.iter().enumerate() {
            out.push_str(&format!(
                "{subject},{},{},{},{},{}\n",
                a.label(),
                sig6(rm[i][j]),
                sig6(rs[i][j]),
                sig6(cm[i][j]),
                sig6(cs[i][j])
            ));
        }
    }
    for s in &report.averages {
        out.push_str(&format!(
            "average,{},{},{},{},{}\n",
            s.algorithm.label(),
            sig6(s.rmse_mean),
            sig6(s.rmse_sd),
            sig6(s.cc_mean),
            sig6(s.cc_sd)
        ));
    }
    out
}
