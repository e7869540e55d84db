use std::fs;
use std::path::Path;

use drowsinet::container::{save_recording, write_dataset_index, Dataset, DatasetIndex};
use drowsinet::eval::{emit_report, loso_evaluate, prepare_subjects, score, EvalReport};
use drowsinet::pipelines::{
    predictions_csv, prepare_recording, run_algorithm_detailed, AlgorithmId, PredictionRow, SubjectFeatures,
};
use drowsinet::synth::{generate_dataset, SynthProfile};
use drowsinet::{FeatureSet, PipelineConfig};
use serde::{Deserialize, Serialize};

use crate::{DataArgs, PipelineArgs, ReportArgs, RunArgs, SynthArgs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] drowsinet::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(drowsinet::Error::InvalidArgument(_)) => 1,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Core(_) => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub const RESOLVED_CONFIG: &str = "config.resolved.json";

/// Settings of `synth`; flags override the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub seed: u64,
    pub null_coupling: bool,
    pub profile: SynthProfile,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 15,
            seed: 0,
            null_coupling: false,
            profile: SynthProfile::default(),
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(drowsinet::Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

/// Defaults, then the config file, then flags.
fn resolve(args: &PipelineArgs) -> Result<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(path) => read_json::<PipelineConfig>(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = Some(seed);
    }
    if let Some(jobs) = args.jobs {
        cfg.jobs = Some(jobs);
    }
    if let Some(list) = &args.algorithms {
        cfg.algorithms = list
            .iter()
            .map(|s| AlgorithmId::parse(s))
            .collect::<drowsinet::Result<_>>()?;
    }
    if let Some(n) = args.n_repeats {
        cfg.n_repeats = n;
    }
    if let Some(n) = args.n_bootstrap {
        cfg.n_bootstrap = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Records the configuration that produced `out`. Worker count is left out
/// because outputs do not depend on it.
fn write_resolved(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let mut recorded = cfg.clone();
    recorded.jobs = None;
    write(&out.join(RESOLVED_CONFIG), &recorded.to_json_pretty())
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => read_json::<SynthConfig>(path)?,
        None => SynthConfig::default(),
    };
    if let Some(n) = args.subjects {
        cfg.n_subjects = n;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(d) = args.duration_s {
        cfg.profile.duration_s = d;
    }
    if args.null_coupling {
        cfg.null_coupling = true;
    }
    let base = if cfg.null_coupling {
        cfg.profile.null()
    } else {
        cfg.profile.clone()
    };
    generate_dataset(cfg.n_subjects, &base, cfg.seed, &args.out)?;
    write(&args.out.join(RESOLVED_CONFIG), &to_json(&cfg))
}

pub fn preprocess(args: DataArgs) -> Result<()> {
    let cfg = resolve(&args.pipeline)?;
    let ds = Dataset::open(&args.data)?;
    for name in ds.subjects() {
        let rec = prepare_recording(&ds.load(name)?, &cfg)?;
        save_recording(&rec, &args.out.join(name))?;
    }
    write_dataset_index(
        &args.out,
        &DatasetIndex {
            subjects: ds.subjects().to_vec(),
            profile: ds.index.profile.clone(),
        },
    )?;
    write_resolved(&cfg, &args.out)
}

#[derive(Debug, Serialize)]
struct FeatureSummary {
    subject: String,
    n_samples: usize,
    retained_channels: Vec<usize>,
    freq_bins_hz: Vec<f64>,
}

fn feature_csv(fs: &FeatureSet) -> String {
    let retained = fs.retained_channels();
    let mut out = String::from("grid_time_s");
    for c in &retained {
        for f in &fs.freq_bins_hz {
            out.push_str(&format!(",ch{c}_{f:.4}Hz"));
        }
    }
    out.push('\n');
    for (j, t) in fs.grid.times().enumerate() {
        out.push_str(&t.to_string());
        for v in fs.sample(j) {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn features(args: DataArgs) -> Result<()> {
    let mut cfg = resolve(&args.pipeline)?;
    cfg.algorithms.retain(|a| !a.needs_raw());
    if cfg.algorithms.is_empty() {
        cfg.algorithms = vec![AlgorithmId::EegNetPsd];
    }
    let ds = Dataset::open(&args.data)?;
    let subjects = prepare_subjects(&ds, &cfg)?;
    let mut summary = Vec::new();
    for s in &subjects {
        let dir = args.out.join(&s.inputs.subject_id);
        write(&dir.join("psd.csv"), &feature_csv(&s.inputs.psd))?;
        write(&dir.join("labels.csv"), &s.labels.to_csv())?;
        summary.push(FeatureSummary {
            subject: s.inputs.subject_id.clone(),
            n_samples: s.inputs.n_samples(),
            retained_channels: s.inputs.psd.retained_channels(),
            freq_bins_hz: s.inputs.psd.freq_bins_hz.clone(),
        });
    }
    write(&args.out.join("features.json"), &to_json(&summary))?;
    write_resolved(&cfg, &args.out)
}

#[derive(Debug, Serialize)]
struct RunSummary<'a> {
    algorithm: AlgorithmId,
    subject: &'a str,
    seed: u64,
    rmse: f64,
    cc: f64,
    cc_undefined: bool,
    smlr: Option<&'a drowsinet::smlr::SmlrResult>,
}

pub fn run(args: RunArgs) -> Result<()> {
    let mut cfg = resolve(&args.pipeline)?;
    let algorithm = AlgorithmId::parse(&args.algorithm)?;
    cfg.algorithms = vec![algorithm];
    let seed = *cfg.seed.get_or_insert(0);
    let ds = Dataset::open(&args.data)?;
    if !ds.subjects().contains(&args.target) {
        return Err(CliError::Usage(format!(
            "target {} is not in {}",
            args.target,
            args.data.display()
        )));
    }
    let subjects = prepare_subjects(&ds, &cfg)?;
    let (target, train): (Vec<&SubjectFeatures>, Vec<&SubjectFeatures>) =
        subjects.iter().partition(|s| s.inputs.subject_id == args.target);
    let target = target[0];
    let output = run_algorithm_detailed(algorithm, &train, &target.inputs, &cfg, seed)?;
    let (rmse, cc, cc_undefined) = score(&output.predictions, &target.labels.values)?;
    let grid = target.inputs.grid();
    let rows: Vec<PredictionRow> = output
        .predictions
        .iter()
        .enumerate()
        .map(|(k, &p)| PredictionRow {
            algorithm,
            subject: args.target.clone(),
            repeat: 0,
            grid_time_s: grid.time(k),
            prediction: p,
        })
        .collect();
    write(&args.out.join("predictions.csv"), &predictions_csv(&rows))?;
    let summary = RunSummary {
        algorithm,
        subject: &args.target,
        seed,
        rmse,
        cc,
        cc_undefined,
        smlr: output.smlr.as_ref(),
    };
    write(&args.out.join("run.json"), &to_json(&summary))?;
    write_resolved(&cfg, &args.out)
}

pub fn compare(args: DataArgs) -> Result<()> {
    let cfg = resolve(&args.pipeline)?;
    if cfg.seed.is_none() {
        return Err(CliError::Usage(
            "compare needs a master seed (--seed or \"seed\" in the config)".into(),
        ));
    }
    let ds = Dataset::open(&args.data)?;
    let subjects = prepare_subjects(&ds, &cfg)?;
    let outcome = loso_evaluate(&subjects, &cfg)?;
    emit_report(&outcome.report, &args.out)?;
    write(
        &args.out.join("predictions.csv"),
        &predictions_csv(&outcome.predictions),
    )?;
    write_resolved(&cfg, &args.out)
}

pub fn report(args: ReportArgs) -> Result<()> {
    let report = EvalReport::from_json_file(&args.input)?;
    emit_report(&report, &args.out)?;
    Ok(())
}
