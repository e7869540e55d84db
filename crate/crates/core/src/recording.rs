use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{invalid_arg, invalid_data, Result};

/// One lane-departure event and the driver's response time to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneDepartureEvent {
    pub onset_s: f64,
    pub response_time_s: f64,
}

/// A multi-channel recording for one subject, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    subject_id: String,
    fs_hz: f64,
    channel_labels: Vec<String>,
    earlobe_indices: Option<[usize; 2]>,
    n_samples: usize,
    data: Vec<f64>,
    events: Vec<LaneDepartureEvent>,
}

impl Recording {
    /// Builds a recording from channel-major samples, checking every invariant.
    ///
    /// `earlobe_indices` is `None` once a recording has been re-referenced.
    pub fn new(
        subject_id: impl Into<String>,
        fs_hz: f64,
        channel_labels: Vec<String>,
        earlobe_indices: Option<[usize; 2]>,
        data: Vec<f64>,
        events: Vec<LaneDepartureEvent>,
    ) -> Result<Self> {
        if !(fs_hz.is_finite() && fs_hz > 0.0) {
            return Err(invalid_data!("fs_hz must be positive, got {fs_hz}"));
        }
        let n_channels = channel_labels.len();
        if n_channels == 0 {
            return Err(invalid_data!("recording has no channels"));
        }
        if data.len() % n_channels != 0 {
            return Err(invalid_data!(
                "{} samples do not divide into {} channels",
                data.len(),
                n_channels
            ));
        }
        let n_samples = data.len() / n_channels;
        if let Some([a, b]) = earlobe_indices {
            if a == b || a >= n_channels || b >= n_channels {
                return Err(invalid_data!(
                    "earlobe indices ({a}, {b}) invalid for {n_channels} channels"
                ));
            }
        }
        let duration = n_samples as f64 / fs_hz;
        let mut prev = f64::NEG_INFINITY;
        for ev in &events {
            if !(ev.onset_s > prev) {
                return Err(invalid_data!("event onsets must be strictly increasing"));
            }
            if !(ev.onset_s >= 0.0 && ev.onset_s <= duration) {
                return Err(invalid_data!("event onset {} outside [0, {duration}]", ev.onset_s));
            }
            if !(ev.response_time_s > 0.0 && ev.response_time_s.is_finite()) {
                return Err(invalid_data!(
                    "response time must be positive, got {}",
                    ev.response_time_s
                ));
            }
            prev = ev.onset_s;
        }
        Ok(Self {
            subject_id: subject_id.into(),
            fs_hz,
            channel_labels,
            earlobe_indices,
            n_samples,
            data,
            events,
        })
    }

    /// Same metadata and events, new samples and channel set.
    pub(crate) fn with_data(
        &self,
        fs_hz: f64,
        channel_labels: Vec<String>,
        earlobe_indices: Option<[usize; 2]>,
        data: Vec<f64>,
    ) -> Result<Self> {
        Self::new(
            self.subject_id.clone(),
            fs_hz,
            channel_labels,
            earlobe_indices,
            data,
            self.events.clone(),
        )
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }
    pub fn fs_hz(&self) -> f64 {
        self.fs_hz
    }
    pub fn channel_labels(&self) -> &[String] {
        &self.channel_labels
    }
    pub fn earlobe_indices(&self) -> Option<[usize; 2]> {
        self.earlobe_indices
    }
    pub fn n_channels(&self) -> usize {
        self.channel_labels.len()
    }
    pub fn n_samples(&self) -> usize {
        self.n_samples
    }
    pub fn duration_s(&self) -> f64 {
        self.n_samples as f64 / self.fs_hz
    }
    pub fn events(&self) -> &[LaneDepartureEvent] {
        &self.events
    }
    /// Channel-major samples.
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn channel(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_samples..(i + 1) * self.n_samples]
    }
    pub fn channels(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_samples.max(1))
    }
}

/// Prediction cadence: `count` points at `start_s + k * step_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleGrid {
    pub start_s: f64,
    pub step_s: f64,
    pub count: usize,
}

impl SampleGrid {
    pub fn time(&self, k: usize) -> f64 {
        self.start_s + k as f64 * self.step_s
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(|k| self.time(k))
    }

    pub fn last(&self) -> f64 {
        self.time(self.count.saturating_sub(1))
    }
}

/// First grid point at `epoch_s`, then every `step_s` while the epoch ending
/// there still fits inside the recording.
pub fn default_grid(rec: &Recording, cfg: &PipelineConfig) -> Result<SampleGrid> {
    grid_for_duration(rec.duration_s(), cfg.epoch_s, cfg.step_s)
}

pub fn grid_for_duration(duration_s: f64, epoch_s: f64, step_s: f64) -> Result<SampleGrid> {
    if !(epoch_s > 0.0 && step_s > 0.0) {
        return Err(invalid_arg!("epoch and step lengths must be positive"));
    }
    if duration_s < epoch_s {
        return Err(invalid_arg!(
            "recording of {duration_s} s is shorter than one {epoch_s} s epoch"
        ));
    }
    // Tolerate representation error in durations like 3600.0000000001.
    let count = ((duration_s - epoch_s) / step_s + 1e-9).floor() as usize + 1;
    Ok(SampleGrid {
        start_s: epoch_s,
        step_s,
        count,
    })
}

/// Drowsiness labels on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelVector {
    pub values: Vec<f64>,
    pub grid: SampleGrid,
}

impl LabelVector {
    pub fn new(values: Vec<f64>, grid: SampleGrid) -> Result<Self> {
        if values.len() != grid.count {
            return Err(invalid_data!("{} labels for a grid of {}", values.len(), grid.count));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid_data!("label {v} outside [0, 1]"));
        }
        Ok(Self { values, grid })
    }

    /// `grid_time_s,label` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("grid_time_s,label\n");
        for (t, v) in self.grid.times().zip(&self.values) {
            out.push_str(&format!("{t},{v}\n"));
        }
        out
    }
}

/// Per-sample PSD features in dB, stored samples × retained channels × bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub tensor: Vec<f64>,
    pub n_samples: usize,
    pub freq_bins_hz: Vec<f64>,
    /// One flag per input channel; `true` rows are present in `tensor`.
    pub channel_mask: Vec<bool>,
    pub grid: SampleGrid,
}

impl FeatureSet {
    pub fn n_channels(&self) -> usize {
        self.channel_mask.iter().filter(|&&m| m).count()
    }

    pub fn n_bins(&self) -> usize {
        self.freq_bins_hz.len()
    }

    /// Channel × bin block for one sample.
    pub fn sample(&self, j: usize) -> &[f64] {
        let block = self.n_channels() * self.n_bins();
        &self.tensor[j * block..(j + 1) * block]
    }

    /// Original channel indices of the retained rows.
    pub fn retained_channels(&self) -> Vec<usize> {
        self.channel_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }

    /// Restricts the tensor to `channels` (original indices, each retained here).
    pub fn select_channels(&self, channels: &[usize]) -> Result<FeatureSet> {
        let retained = self.retained_channels();
        let rows: Vec<usize> = channels
            .iter()
            .map(|c| {
                retained
                    .iter()
                    .position(|r| r == c)
                    .ok_or_else(|| invalid_arg!("channel {c} not retained"))
            })
            .collect::<Result<_>>()?;
        let (cr, nb) = (self.n_channels(), self.n_bins());
        let mut tensor = Vec::with_capacity(self.n_samples * rows.len() * nb);
        for j in 0..self.n_samples {
            for &r in &rows {
                let off = (j * cr + r) * nb;
                tensor.extend_from_slice(&self.tensor[off..off + nb]);
            }
        }
        let mut channel_mask = vec![false; self.channel_mask.len()];
        for &c in channels {
            channel_mask[c] = true;
        }
        Ok(FeatureSet {
            tensor,
            n_samples: self.n_samples,
            freq_bins_hz: self.freq_bins_hz.clone(),
            channel_mask,
            grid: self.grid,
        })
    }
}
