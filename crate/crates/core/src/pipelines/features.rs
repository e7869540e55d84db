use std::ops::Range;

use crate::config::PipelineConfig;
use crate::dsp::{self, band_bins, Welch, WelchConfig};
use crate::eegnet::SampleSource;
use crate::error::{invalid_arg, invalid_data, Error, Result};
use crate::labels::labels_for_recording;
use crate::numerics::{pca_fit, Matrix, Pca};
use crate::recording::{default_grid, FeatureSet, LabelVector, Recording, SampleGrid};

/// Band-pass, decimate to `target_fs_hz`, and re-reference to the earlobes
/// when the recording still has them.
pub fn preprocess(rec: &Recording, cfg: &PipelineConfig) -> Result<Recording> {
    let filtered = dsp::bandpass_with_order(rec, cfg.band_lo_hz, cfg.band_hi_hz, cfg.filter_order)?;
    let ratio = rec.fs_hz() / cfg.target_fs_hz;
    if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-9 {
        return Err(invalid_arg!(
            "cannot decimate {} Hz to {} Hz by an integer factor",
            rec.fs_hz(),
            cfg.target_fs_hz
        ));
    }
    let decimated = dsp::decimate(&filtered, ratio.round() as usize)?;
    if decimated.earlobe_indices().is_some() {
        dsp::rereference_earlobes(&decimated)
    } else {
        Ok(decimated)
    }
}

/// Preprocesses a raw recording; one already at `target_fs_hz` without
/// earlobe channels is taken as preprocessed and returned unchanged.
pub fn prepare_recording(rec: &Recording, cfg: &PipelineConfig) -> Result<Recording> {
    if rec.earlobe_indices().is_none() && (rec.fs_hz() - cfg.target_fs_hz).abs() < 1e-9 {
        Ok(rec.clone())
    } else {
        preprocess(rec, cfg)
    }
}

/// Welch PSD of every epoch and channel on the configured band, in dB.
/// All channels are kept (mask all-true) and nothing is normalized.
pub fn psd_db_features(rec: &Recording, grid: &SampleGrid, cfg: &PipelineConfig) -> Result<FeatureSet> {
    let welch = Welch::new(WelchConfig::from_settings(&cfg.welch, rec.fs_hz()))?;
    let freqs = welch.freqs();
    let bins = band_bins(&freqs, cfg.psd_band_lo_hz, cfg.psd_band_hi_hz, cfg.psd_bin_count)?;
    let starts = dsp::epoch_starts(rec.n_samples(), rec.fs_hz(), grid, cfg.epoch_s)?;
    let len = dsp::epoch_len(cfg.epoch_s, rec.fs_hz())?;
    let n_bins = bins.clone().count();
    let mut tensor = Vec::with_capacity(starts.len() * rec.n_channels() * n_bins);
    for &s in &starts {
        for ch in rec.channels() {
            let psd = welch.psd(&ch[s..s + len])?;
            for &p in &psd[bins.clone()] {
                if !(p > 0.0) {
                    return Err(Error::Numeric(format!(
                        "non-positive PSD {p} in {}; cannot take dB",
                        rec.subject_id()
                    )));
                }
                tensor.push(10.0 * p.log10());
            }
        }
    }
    Ok(FeatureSet {
        tensor,
        n_samples: starts.len(),
        freq_bins_hz: freqs[bins].to_vec(),
        channel_mask: vec![true; rec.n_channels()],
        grid: *grid,
    })
}

/// Channels whose dB never exceeds `reject_db` in any of the given sets.
pub fn channel_mask_below(sets: &[&FeatureSet], reject_db: f64) -> Result<Vec<bool>> {
    let first = sets.first().ok_or_else(|| invalid_arg!("no feature sets"))?;
    let n_ch = first.channel_mask.len();
    let mut keep = vec![true; n_ch];
    for fs in sets {
        if fs.channel_mask.len() != n_ch || fs.n_channels() != n_ch {
            return Err(invalid_data!("channel rejection needs unmasked dB sets of equal width"));
        }
        let nb = fs.n_bins();
        for j in 0..fs.n_samples {
            for (c, row) in fs.sample(j).chunks_exact(nb).enumerate() {
                if row.iter().any(|&v| v > reject_db) {
                    keep[c] = false;
                }
            }
        }
    }
    Ok(keep)
}

/// Standardizes each channel-frequency column over samples in place.
/// Constant columns become all-zero.
pub fn zscore_columns(fs: &mut FeatureSet) {
    let width = fs.n_channels() * fs.n_bins();
    let n = fs.n_samples;
    if n == 0 || width == 0 {
        return;
    }
    for col in 0..width {
        let mean = (0..n).map(|j| fs.tensor[j * width + col]).sum::<f64>() / n as f64;
        let var = (0..n).map(|j| (fs.tensor[j * width + col] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        for j in 0..n {
            let v = &mut fs.tensor[j * width + col];
            *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
        }
    }
}

/// Per-subject PSD features: dB, channels above `reject_db` dropped,
/// each retained column z-normalized over the subject's epochs.
pub fn extract_psd_features(rec: &Recording, cfg: &PipelineConfig) -> Result<FeatureSet> {
    let grid = default_grid(rec, cfg)?;
    let db = psd_db_features(rec, &grid, cfg)?;
    normalized_psd(&db, cfg.reject_db, rec.subject_id())
}

fn normalized_psd(db: &FeatureSet, reject_db: f64, subject: &str) -> Result<FeatureSet> {
    let mask = channel_mask_below(&[db], reject_db)?;
    let keep: Vec<usize> = (0..mask.len()).filter(|&c| mask[c]).collect();
    if keep.is_empty() {
        return Err(invalid_data!("every channel of {subject} exceeds {reject_db} dB"));
    }
    if keep.len() < mask.len() {
        log::info!(
            "{subject}: rejected {} of {} channels above {reject_db} dB",
            mask.len() - keep.len(),
            mask.len()
        );
    }
    let mut fs = db.select_channels(&keep)?;
    zscore_columns(&mut fs);
    Ok(fs)
}

/// A recording's preprocessed signal, z-normalized per channel, cut lazily
/// into (optionally time-decimated) epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEpochs {
    data: Vec<f64>,
    n_channels: usize,
    n_samples: usize,
    starts: Vec<usize>,
    epoch_len: usize,
    decimation: usize,
}

impl RawEpochs {
    pub fn new(rec: &Recording, grid: &SampleGrid, cfg: &PipelineConfig) -> Result<Self> {
        let starts = dsp::epoch_starts(rec.n_samples(), rec.fs_hz(), grid, cfg.epoch_s)?;
        let epoch_len = dsp::epoch_len(cfg.epoch_s, rec.fs_hz())?;
        let mut data = Vec::with_capacity(rec.data().len());
        for ch in rec.channels() {
            let n = ch.len() as f64;
            let mean = ch.iter().sum::<f64>() / n;
            let sd = (ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            let inv = if sd > 0.0 { 1.0 / sd } else { 0.0 };
            data.extend(ch.iter().map(|v| (v - mean) * inv));
        }
        Ok(Self {
            data,
            n_channels: rec.n_channels(),
            n_samples: rec.n_samples(),
            starts,
            epoch_len,
            decimation: cfg.raw_time_decimation.max(1),
        })
    }

    pub fn n_epochs(&self) -> usize {
        self.starts.len()
    }
    pub fn n_channels(&self) -> usize {
        self.n_channels
    }
    /// Time points per channel after decimation.
    pub fn n_time(&self) -> usize {
        self.epoch_len.div_ceil(self.decimation)
    }

    /// Writes epoch `j` as channels × time.
    pub fn write_epoch(&self, j: usize, out: &mut [f64]) {
        let t = self.n_time();
        let s = self.starts[j];
        for c in 0..self.n_channels {
            let ch = &self.data[c * self.n_samples + s..c * self.n_samples + s + self.epoch_len];
            for (o, v) in out[c * t..(c + 1) * t]
                .iter_mut()
                .zip(ch.iter().step_by(self.decimation))
            {
                *o = *v;
            }
        }
    }
}

/// Everything the algorithms may see of one subject, minus its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectInputs {
    pub subject_id: String,
    /// Unnormalized dB features over all channels (ridge baselines).
    pub psd_db: FeatureSet,
    /// Channel-rejected, per-subject z-normalized PSD features (EEGNet).
    pub psd: FeatureSet,
    pub raw: Option<RawEpochs>,
}

impl SubjectInputs {
    pub fn n_samples(&self) -> usize {
        self.psd.n_samples
    }
    pub fn grid(&self) -> SampleGrid {
        self.psd.grid
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectFeatures {
    pub inputs: SubjectInputs,
    pub labels: LabelVector,
}

impl SubjectFeatures {
    /// Builds every feature view from a preprocessed recording.
    pub fn from_preprocessed(rec: &Recording, cfg: &PipelineConfig, with_raw: bool) -> Result<Self> {
        let grid = default_grid(rec, cfg)?;
        let labels = labels_for_recording(rec, &grid, cfg)?;
        let psd_db = psd_db_features(rec, &grid, cfg)?;
        let psd = normalized_psd(&psd_db, cfg.reject_db, rec.subject_id())?;
        let raw = if with_raw {
            Some(RawEpochs::new(rec, &grid, cfg)?)
        } else {
            None
        };
        Ok(Self {
            inputs: SubjectInputs {
                subject_id: rec.subject_id().to_string(),
                psd_db,
                psd,
                raw,
            },
            labels,
        })
    }
}

/// Training-set transform of the ridge baselines: theta-band mean dB per
/// retained channel, z-scored, then PCA.
#[derive(Debug, Clone, PartialEq)]
pub struct RrTransform {
    pub channel_mask: Vec<bool>,
    /// Indices into the PSD bins that make up the theta band.
    pub theta_bins: Range<usize>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub pca: Pca,
}

impl RrTransform {
    fn theta_means(&self, fs: &FeatureSet) -> Matrix {
        let nb = fs.n_bins();
        let kept: Vec<usize> = (0..self.channel_mask.len()).filter(|&c| self.channel_mask[c]).collect();
        let width = self.theta_bins.len() as f64;
        let mut out = Matrix::zeros(fs.n_samples, kept.len());
        for j in 0..fs.n_samples {
            let block = fs.sample(j);
            for (k, &c) in kept.iter().enumerate() {
                let row = &block[c * nb..(c + 1) * nb];
                out[(j, k)] = row[self.theta_bins.clone()].iter().sum::<f64>() / width;
            }
        }
        out
    }

    /// Projects one subject's unnormalized dB features.
    pub fn apply(&self, fs: &FeatureSet) -> Result<Matrix> {
        let mut x = self.theta_means(fs);
        for j in 0..x.rows() {
            for (k, v) in x.row_mut(j).iter_mut().enumerate() {
                *v = (*v - self.mean[k]) / self.scale[k];
            }
        }
        self.pca.project(&x)
    }
}

/// Ridge-baseline features: transform fitted on the pooled training
/// subjects only, then applied to each training subject and the target.
#[derive(Debug, Clone, PartialEq)]
pub struct RrFeatures {
    pub transform: RrTransform,
    pub train: Vec<Matrix>,
    pub target: Matrix,
}

impl RrFeatures {
    pub fn pooled_train(&self) -> Matrix {
        let cols = self.target.cols();
        let data: Vec<f64> = self.train.iter().flat_map(|m| m.as_slice().iter().copied()).collect();
        Matrix::new(data.len() / cols.max(1), cols, data).expect("consistent widths")
    }
}

pub fn fit_rr_transform(train: &[&SubjectInputs], cfg: &PipelineConfig) -> Result<RrTransform> {
    let first = train
        .first()
        .ok_or_else(|| invalid_arg!("ridge features need a training subject"))?;
    let sets: Vec<&FeatureSet> = train.iter().map(|s| &s.psd_db).collect();
    let channel_mask = channel_mask_below(&sets, cfg.reject_db)?;
    if !channel_mask.iter().any(|&k| k) {
        return Err(invalid_data!(
            "every channel exceeds {} dB in the training data",
            cfg.reject_db
        ));
    }
    let freqs = &first.psd_db.freq_bins_hz;
    let theta_end = freqs.partition_point(|&f| f <= cfg.theta_hi_hz);
    if theta_end == 0 {
        return Err(invalid_arg!("no PSD bin at or below {} Hz", cfg.theta_hi_hz));
    }
    let mut t = RrTransform {
        channel_mask,
        theta_bins: 0..theta_end,
        mean: Vec::new(),
        scale: Vec::new(),
        pca: Pca::default(),
    };
    let blocks: Vec<Matrix> = train.iter().map(|s| t.theta_means(&s.psd_db)).collect();
    let d = blocks[0].cols();
    let n: usize = blocks.iter().map(|b| b.rows()).sum();
    if n < 2 {
        return Err(invalid_data!("ridge features need at least 2 training samples"));
    }
    let pooled: Vec<f64> = blocks.iter().flat_map(|b| b.as_slice().iter().copied()).collect();
    let mut x = Matrix::new(n, d, pooled)?;
    t.mean = (0..d)
        .map(|k| (0..n).map(|j| x[(j, k)]).sum::<f64>() / n as f64)
        .collect();
    t.scale = (0..d)
        .map(|k| {
            let var = (0..n).map(|j| (x[(j, k)] - t.mean[k]).powi(2)).sum::<f64>() / n as f64;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    for j in 0..n {
        for (k, v) in x.row_mut(j).iter_mut().enumerate() {
            *v = (*v - t.mean[k]) / t.scale[k];
        }
    }
    t.pca = pca_fit(&x, cfg.pca_var_frac)?;
    Ok(t)
}

pub fn extract_rr_features(
    train: &[&SubjectInputs],
    target: &SubjectInputs,
    cfg: &PipelineConfig,
) -> Result<RrFeatures> {
    let transform = fit_rr_transform(train, cfg)?;
    let train_x = train
        .iter()
        .map(|s| transform.apply(&s.psd_db))
        .collect::<Result<Vec<_>>>()?;
    let target_x = transform.apply(&target.psd_db)?;
    if target_x.cols() == 0 || train_x.iter().all(|m| m.rows() == 0) {
        return Err(invalid_data!("empty ridge feature matrix"));
    }
    Ok(RrFeatures {
        transform,
        train: train_x,
        target: target_x,
    })
}

/// PSD features of several subjects restricted to a common channel set,
/// served sample by sample.
pub struct PsdSource {
    sets: Vec<FeatureSet>,
    offsets: Vec<usize>,
}

impl PsdSource {
    pub fn new(subjects: &[&SubjectInputs], channels: &[usize]) -> Result<Self> {
        let sets = subjects
            .iter()
            .map(|s| s.psd.select_channels(channels))
            .collect::<Result<Vec<_>>>()?;
        let mut offsets = vec![0];
        for s in &sets {
            offsets.push(offsets.last().unwrap() + s.n_samples);
        }
        Ok(Self { sets, offsets })
    }

    pub fn n_channels(&self) -> usize {
        self.sets[0].n_channels()
    }
    pub fn n_bins(&self) -> usize {
        self.sets[0].n_bins()
    }

    fn locate(&self, index: usize) -> (usize, usize) {
        let s = self.offsets.partition_point(|&o| o <= index) - 1;
        (s, index - self.offsets[s])
    }
}

impl SampleSource for PsdSource {
    fn n_samples(&self) -> usize {
        *self.offsets.last().unwrap()
    }
    fn sample_len(&self) -> usize {
        self.n_channels() * self.n_bins()
    }
    fn write_sample(&self, index: usize, out: &mut [f64]) {
        let (s, j) = self.locate(index);
        out.copy_from_slice(self.sets[s].sample(j));
    }
}

/// Raw epochs of several subjects, served lazily.
pub struct RawSource<'a> {
    subjects: Vec<&'a RawEpochs>,
    offsets: Vec<usize>,
}

impl<'a> RawSource<'a> {
    pub fn new(subjects: &[&'a SubjectInputs]) -> Result<Self> {
        let raws: Vec<&RawEpochs> = subjects
            .iter()
            .map(|s| {
                s.raw
                    .as_ref()
                    .ok_or_else(|| invalid_arg!("{} has no raw epochs loaded", s.subject_id))
            })
            .collect::<Result<_>>()?;
        let first = raws.first().ok_or_else(|| invalid_arg!("no subjects"))?;
        if raws
            .iter()
            .any(|r| r.n_channels() != first.n_channels() || r.n_time() != first.n_time())
        {
            return Err(invalid_data!(
                "raw epochs differ in channel count or length across subjects"
            ));
        }
        let mut offsets = vec![0];
        for r in &raws {
            offsets.push(offsets.last().unwrap() + r.n_epochs());
        }
        Ok(Self {
            subjects: raws,
            offsets,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.subjects[0].n_channels()
    }
    pub fn n_time(&self) -> usize {
        self.subjects[0].n_time()
    }
}

impl SampleSource for RawSource<'_> {
    fn n_samples(&self) -> usize {
        *self.offsets.last().unwrap()
    }
    fn sample_len(&self) -> usize {
        self.n_channels() * self.n_time()
    }
    fn write_sample(&self, index: usize, out: &mut [f64]) {
        let s = self.offsets.partition_point(|&o| o <= index) - 1;
        self.subjects[s].write_epoch(index - self.offsets[s], out);
    }
}
