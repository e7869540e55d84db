mod features;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::eegnet::{EegNetConfig, EegNetModel, IndexedSource, SampleSource};
use crate::error::{invalid_arg, invalid_data, Result};
use crate::numerics::{ridge_fit, Matrix};
use crate::smlr::{bootstrap_indices, smlr_aggregate, EnsemblePredictions, SmlrResult};

pub use features::{
    channel_mask_below, extract_psd_features, extract_rr_features, fit_rr_transform, prepare_recording, preprocess,
    psd_db_features, zscore_columns, PsdSource, RawEpochs, RawSource, RrFeatures, RrTransform, SubjectFeatures,
    SubjectInputs,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AlgorithmId {
    #[serde(rename = "RR")]
    Rr,
    #[serde(rename = "RR_SMLR")]
    RrSmlr,
    #[serde(rename = "EEGNET_RAW")]
    EegNetRaw,
    #[serde(rename = "EEGNET_PSD")]
    EegNetPsd,
    #[serde(rename = "EEGNET_PSD_SMLR")]
    EegNetPsdSmlr,
}

impl AlgorithmId {
    /// Table order.
    pub const ALL: [AlgorithmId; 5] = [
        AlgorithmId::Rr,
        AlgorithmId::RrSmlr,
        AlgorithmId::EegNetRaw,
        AlgorithmId::EegNetPsd,
        AlgorithmId::EegNetPsdSmlr,
    ];

    /// Identifier used in configs and CSV rows.
    pub fn id(self) -> &'static str {
        match self {
            AlgorithmId::Rr => "RR",
            AlgorithmId::RrSmlr => "RR_SMLR",
            AlgorithmId::EegNetRaw => "EEGNET_RAW",
            AlgorithmId::EegNetPsd => "EEGNET_PSD",
            AlgorithmId::EegNetPsdSmlr => "EEGNET_PSD_SMLR",
        }
    }

    /// Column heading used in the report tables.
    pub fn label(self) -> &'static str {
        match self {
            AlgorithmId::Rr => "RR",
            AlgorithmId::RrSmlr => "RR-SMLR",
            AlgorithmId::EegNetRaw => "EEGNet",
            AlgorithmId::EegNetPsd => "EEGNet-PSD",
            AlgorithmId::EegNetPsdSmlr => "EEGNet-PSD-SMLR",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.id().eq_ignore_ascii_case(s) || a.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid_arg!("unknown algorithm {s:?}"))
    }

    pub fn needs_raw(self) -> bool {
        self == AlgorithmId::EegNetRaw
    }
}

impl fmt::Display for AlgorithmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Predictions plus the aggregation diagnostics of the SMLR variants.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmOutput {
    pub predictions: Vec<f64>,
    pub smlr: Option<SmlrResult>,
}

/// Original channel indices retained by every given subject.
pub fn common_channels(subjects: &[&SubjectInputs]) -> Result<Vec<usize>> {
    let first = subjects.first().ok_or_else(|| invalid_arg!("no subjects"))?;
    let width = first.psd.channel_mask.len();
    if subjects.iter().any(|s| s.psd.channel_mask.len() != width) {
        return Err(invalid_data!("subjects have different channel counts"));
    }
    let common: Vec<usize> = (0..width)
        .filter(|&c| subjects.iter().all(|s| s.psd.channel_mask[c]))
        .collect();
    if common.is_empty() {
        return Err(invalid_data!("no channel survives rejection in every subject"));
    }
    if common.len() < width {
        log::info!(
            "PSD networks use the {} of {width} channels retained by every subject",
            common.len()
        );
    }
    Ok(common)
}

fn strided(n: usize, stride: usize) -> Vec<usize> {
    (0..n).step_by(stride.max(1)).collect()
}

fn pooled_labels(train: &[&SubjectFeatures]) -> Vec<f64> {
    train.iter().flat_map(|s| s.labels.values.iter().copied()).collect()
}

fn train_net(
    source: &dyn SampleSource,
    y: &[f64],
    n_channels: usize,
    n_time: usize,
    train_cfg: &crate::config::TrainConfig,
    dropout_p: f64,
    seed: u64,
) -> Result<EegNetModel> {
    let mut tc = train_cfg.clone();
    tc.seed = seed;
    tc.batch_size = tc.batch_size.min(source.n_samples());
    let mut cfg = EegNetConfig::new(n_channels, n_time).with_train(tc.clone());
    cfg.dropout_p = dropout_p;
    let mut model = EegNetModel::build(cfg)?;
    let report = model.fit(source, y, &tc)?;
    log::debug!(
        "trained {n_channels}x{n_time} EEGNet on {} samples, final loss {:?}",
        source.n_samples(),
        report.epoch_losses.last()
    );
    Ok(model)
}

/// Trains one PSD network per member seed (each on its own bootstrap
/// resample) and aggregates their target predictions with SMLR.
pub fn psd_ensemble(
    train: &[&SubjectFeatures],
    target: &SubjectInputs,
    cfg: &PipelineConfig,
    member_seeds: &[u64],
) -> Result<(EnsemblePredictions, SmlrResult)> {
    let mut everyone: Vec<&SubjectInputs> = train.iter().map(|s| &s.inputs).collect();
    everyone.push(target);
    let channels = common_channels(&everyone)?;
    let source = PsdSource::new(&everyone[..train.len()], &channels)?;
    let target_src = PsdSource::new(&[target], &channels)?;
    let labels = pooled_labels(train);
    let pool = strided(source.n_samples(), cfg.eegnet_psd.sample_stride);
    let mut rows = Vec::with_capacity(member_seeds.len());
    for &seed in member_seeds {
        let resample = bootstrap_indices(pool.len(), 1, seed).remove(0);
        let picked: Vec<usize> = resample.iter().map(|&k| pool[k]).collect();
        let y: Vec<f64> = picked.iter().map(|&i| labels[i]).collect();
        let view = IndexedSource::new(&source, picked)?;
        let model = train_net(
            &view,
            &y,
            source.n_channels(),
            source.n_bins(),
            &cfg.eegnet_psd,
            cfg.dropout_p,
            seed,
        )?;
        rows.push(model.predict_source(&target_src)?);
    }
    let ens = EnsemblePredictions::from_rows(&rows)?;
    let result = smlr_aggregate(&ens)?;
    Ok((ens, result))
}

pub fn run_algorithm(
    id: AlgorithmId,
    train: &[&SubjectFeatures],
    target: &SubjectInputs,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    Ok(run_algorithm_detailed(id, train, target, cfg, seed)?.predictions)
}

pub fn run_algorithm_detailed(
    id: AlgorithmId,
    train: &[&SubjectFeatures],
    target: &SubjectInputs,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<AlgorithmOutput> {
    if train.is_empty() {
        return Err(invalid_arg!("{id} needs at least one training subject"));
    }
    let inputs: Vec<&SubjectInputs> = train.iter().map(|s| &s.inputs).collect();
    match id {
        AlgorithmId::Rr => {
            let f = extract_rr_features(&inputs, target, cfg)?;
            let model = ridge_fit(&f.pooled_train(), &pooled_labels(train), cfg.ridge_lambda)?;
            Ok(AlgorithmOutput {
                predictions: model.predict(&f.target),
                smlr: None,
            })
        }
        AlgorithmId::RrSmlr => {
            let f = extract_rr_features(&inputs, target, cfg)?;
            let rows = f
                .train
                .iter()
                .zip(train)
                .map(|(x, s)| Ok(ridge_fit(x, &s.labels.values, cfg.ridge_lambda)?.predict(&f.target)))
                .collect::<Result<Vec<_>>>()?;
            let result = smlr_aggregate(&EnsemblePredictions::new(Matrix::from_rows(&rows)?)?)?;
            Ok(AlgorithmOutput {
                predictions: result.combined.clone(),
                smlr: Some(result),
            })
        }
        AlgorithmId::EegNetRaw => {
            let source = RawSource::new(&inputs)?;
            let labels = pooled_labels(train);
            let picked = strided(source.n_samples(), cfg.eegnet_raw.sample_stride);
            let y: Vec<f64> = picked.iter().map(|&i| labels[i]).collect();
            let view = IndexedSource::new(&source, picked)?;
            let model = train_net(
                &view,
                &y,
                source.n_channels(),
                source.n_time(),
                &cfg.eegnet_raw,
                cfg.dropout_p,
                seed,
            )?;
            Ok(AlgorithmOutput {
                predictions: model.predict_source(&RawSource::new(&[target])?)?,
                smlr: None,
            })
        }
        AlgorithmId::EegNetPsd => {
            let mut everyone = inputs.clone();
            everyone.push(target);
            let channels = common_channels(&everyone)?;
            let source = PsdSource::new(&inputs, &channels)?;
            let labels = pooled_labels(train);
            let picked = strided(source.n_samples(), cfg.eegnet_psd.sample_stride);
            let y: Vec<f64> = picked.iter().map(|&i| labels[i]).collect();
            let view = IndexedSource::new(&source, picked)?;
            let model = train_net(
                &view,
                &y,
                source.n_channels(),
                source.n_bins(),
                &cfg.eegnet_psd,
                cfg.dropout_p,
                seed,
            )?;
            Ok(AlgorithmOutput {
                predictions: model.predict_source(&PsdSource::new(&[target], &channels)?)?,
                smlr: None,
            })
        }
        AlgorithmId::EegNetPsdSmlr => {
            let seeds: Vec<u64> = (0..cfg.n_bootstrap as u64).map(|i| seed ^ i).collect();
            let (_, result) = psd_ensemble(train, target, cfg, &seeds)?;
            Ok(AlgorithmOutput {
                predictions: result.combined.clone(),
                smlr: Some(result),
            })
        }
    }
}

/// One row of the predictions CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub algorithm: AlgorithmId,
    pub subject: String,
    pub repeat: usize,
    pub grid_time_s: f64,
    pub prediction: f64,
}

pub fn predictions_csv(rows: &[PredictionRow]) -> String {
    let mut out = String::from("algorithm,subject,repeat,grid_time_s,prediction\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.algorithm.id(),
            r.subject,
            r.repeat,
            r.grid_time_s,
            r.prediction
        ));
    }
    out
}
