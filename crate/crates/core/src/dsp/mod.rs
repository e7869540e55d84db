mod filter;
mod welch;

pub use filter::{BandPass, Biquad};
pub use welch::{band_bins, welch_psd, window, Welch, WelchConfig};

use crate::error::{invalid_arg, Result};
use crate::recording::{Recording, SampleGrid};

pub const DEFAULT_FILTER_ORDER: usize = 4;

/// Zero-phase 4th-order Butterworth band-pass applied to every channel.
pub fn bandpass(rec: &Recording, lo_hz: f64, hi_hz: f64) -> Result<Recording> {
    bandpass_with_order(rec, lo_hz, hi_hz, DEFAULT_FILTER_ORDER)
}

pub fn bandpass_with_order(rec: &Recording, lo_hz: f64, hi_hz: f64, prototype_order: usize) -> Result<Recording> {
    let filter = BandPass::butterworth(prototype_order, lo_hz, hi_hz, rec.fs_hz())?;
    let mut data = Vec::with_capacity(rec.data().len());
    for ch in rec.channels() {
        data.extend(filter.filtfilt(ch)?);
    }
    rec.with_data(rec.fs_hz(), rec.channel_labels().to_vec(), rec.earlobe_indices(), data)
}

/// Keeps every `factor`-th sample starting at index 0. No anti-aliasing.
pub fn decimate(rec: &Recording, factor: usize) -> Result<Recording> {
    if factor == 0 {
        return Err(invalid_arg!("decimation factor must be >= 1"));
    }
    if factor == 1 {
        return Ok(rec.clone());
    }
    let mut data = Vec::with_capacity(rec.data().len() / factor + rec.n_channels());
    for ch in rec.channels() {
        data.extend(ch.iter().step_by(factor).copied());
    }
    rec.with_data(
        rec.fs_hz() / factor as f64,
        rec.channel_labels().to_vec(),
        rec.earlobe_indices(),
        data,
    )
}

/// Subtracts the mean of the two earlobe channels from every other channel
/// and drops the earlobes.
pub fn rereference_earlobes(rec: &Recording) -> Result<Recording> {
    let [a, b] = rec
        .earlobe_indices()
        .ok_or_else(|| invalid_arg!("recording {} has no earlobe channels", rec.subject_id()))?;
    if a >= rec.n_channels() || b >= rec.n_channels() {
        return Err(invalid_arg!("earlobe index out of range"));
    }
    let reference: Vec<f64> = rec
        .channel(a)
        .iter()
        .zip(rec.channel(b))
        .map(|(x, y)| 0.5 * (x + y))
        .collect();
    let mut labels = Vec::new();
    let mut data = Vec::with_capacity(rec.data().len());
    for (i, ch) in rec.channels().enumerate() {
        if i == a || i == b {
            continue;
        }
        labels.push(rec.channel_labels()[i].clone());
        data.extend(ch.iter().zip(&reference).map(|(x, r)| x - r));
    }
    rec.with_data(rec.fs_hz(), labels, None, data)
}

/// Samples in one epoch, erroring unless `epoch_s * fs` is a whole number.
pub fn epoch_len(epoch_s: f64, fs_hz: f64) -> Result<usize> {
    let len = epoch_s * fs_hz;
    if !(len >= 1.0) || (len - len.round()).abs() > 1e-6 {
        return Err(invalid_arg!(
            "epoch of {epoch_s} s at {fs_hz} Hz is not a whole number of samples"
        ));
    }
    Ok(len.round() as usize)
}

/// First sample index of each epoch `[t_j - epoch_s, t_j)`.
pub fn epoch_starts(n_samples: usize, fs_hz: f64, grid: &SampleGrid, epoch_s: f64) -> Result<Vec<usize>> {
    let len = epoch_len(epoch_s, fs_hz)?;
    grid.times()
        .map(|t| {
            let end = (t * fs_hz).round();
            if t < epoch_s - 1e-9 || end as usize > n_samples || end < len as f64 {
                return Err(invalid_arg!(
                    "grid point {t} s leaves no room for a {epoch_s} s epoch in a {} s recording",
                    n_samples as f64 / fs_hz
                ));
            }
            Ok(end as usize - len)
        })
        .collect()
}

/// Epochs laid out samples × channels × time.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochTensor {
    pub data: Vec<f64>,
    pub n_channels: usize,
    pub n_time: usize,
    pub grid: SampleGrid,
    pub fs_hz: f64,
}

impl EpochTensor {
    pub fn n_epochs(&self) -> usize {
        self.grid.count
    }

    pub fn epoch(&self, j: usize) -> &[f64] {
        let block = self.n_channels * self.n_time;
        &self.data[j * block..(j + 1) * block]
    }

    pub fn channel(&self, j: usize, c: usize) -> &[f64] {
        &self.epoch(j)[c * self.n_time..(c + 1) * self.n_time]
    }
}

/// Cuts the `epoch_s` seconds right before every grid point.
pub fn epoch(rec: &Recording, grid: &SampleGrid, epoch_s: f64) -> Result<EpochTensor> {
    let starts = epoch_starts(rec.n_samples(), rec.fs_hz(), grid, epoch_s)?;
    let n_time = epoch_len(epoch_s, rec.fs_hz())?;
    let mut data = Vec::with_capacity(starts.len() * rec.n_channels() * n_time);
    for &s in &starts {
        for ch in rec.channels() {
            data.extend_from_slice(&ch[s..s + n_time]);
        }
    }
    Ok(EpochTensor {
        data,
        n_channels: rec.n_channels(),
        n_time,
        grid: *grid,
        fs_hz: rec.fs_hz(),
    })
}
