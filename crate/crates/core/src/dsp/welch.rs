use std::f64::consts::PI;
use std::ops::RangeInclusive;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::config::{WelchSettings, WindowKind};
use crate::error::{invalid_arg, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct WelchConfig {
    pub segment_len: usize,
    pub overlap_frac: f64,
    pub window: WindowKind,
    pub nfft: usize,
    pub fs_hz: f64,
}

impl WelchConfig {
    pub fn from_settings(s: &WelchSettings, fs_hz: f64) -> Self {
        Self {
            segment_len: s.segment_len,
            overlap_frac: s.overlap_frac,
            window: s.window,
            nfft: s.nfft,
            fs_hz,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.segment_len == 0 || self.nfft < self.segment_len {
            return Err(invalid_arg!(
                "welch: need nfft ({}) >= segment_len ({}) > 0",
                self.nfft,
                self.segment_len
            ));
        }
        if !(0.0..1.0).contains(&self.overlap_frac) {
            return Err(invalid_arg!("welch: overlap_frac must be in [0, 1)"));
        }
        if !(self.fs_hz > 0.0) {
            return Err(invalid_arg!("welch: fs_hz must be positive"));
        }
        Ok(())
    }

    pub fn hop(&self) -> usize {
        ((self.segment_len as f64 * (1.0 - self.overlap_frac)).round() as usize).max(1)
    }

    /// One-sided frequency axis `k * fs / nfft`, `k = 0..=nfft/2`.
    pub fn freqs(&self) -> Vec<f64> {
        (0..=self.nfft / 2)
            .map(|k| k as f64 * self.fs_hz / self.nfft as f64)
            .collect()
    }
}

pub fn window(kind: WindowKind, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    // symmetric tapers
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| {
            let c = (2.0 * PI * i as f64 / denom).cos();
            match kind {
                WindowKind::Hamming => 0.54 - 0.46 * c,
                WindowKind::Hann => 0.5 - 0.5 * c,
                WindowKind::Rectangular => 1.0,
            }
        })
        .collect()
}

/// A planned Welch estimator; reuse it across many equal-length signals.
pub struct Welch {
    cfg: WelchConfig,
    window: Vec<f64>,
    scale: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl Welch {
    pub fn new(cfg: WelchConfig) -> Result<Self> {
        cfg.validate()?;
        let window = window(cfg.window, cfg.segment_len);
        let wss: f64 = window.iter().map(|w| w * w).sum();
        let fft = FftPlanner::new().plan_fft_forward(cfg.nfft);
        Ok(Self {
            scale: 1.0 / (cfg.fs_hz * wss),
            cfg,
            window,
            fft,
        })
    }

    pub fn config(&self) -> &WelchConfig {
        &self.cfg
    }

    pub fn freqs(&self) -> Vec<f64> {
        self.cfg.freqs()
    }

    /// One-sided PSD density (units²/Hz), length `nfft/2 + 1`.
    pub fn psd(&self, signal: &[f64]) -> Result<Vec<f64>> {
        let seg = self.cfg.segment_len;
        if signal.len() < seg {
            return Err(invalid_arg!(
                "welch: signal of {} samples is shorter than one {seg}-sample segment",
                signal.len()
            ));
        }
        let nfft = self.cfg.nfft;
        let n_bins = nfft / 2 + 1;
        let hop = self.cfg.hop();
        let n_seg = (signal.len() - seg) / hop + 1;
        let mut acc = vec![0.0; n_bins];
        let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for s in 0..n_seg {
            let chunk = &signal[s * hop..s * hop + seg];
            for (b, (x, w)) in buf.iter_mut().zip(chunk.iter().zip(&self.window)) {
                *b = Complex64::new(x * w, 0.0);
            }
            buf[seg..].fill(Complex64::new(0.0, 0.0));
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += b.norm_sqr();
            }
        }
        let norm = self.scale / n_seg as f64;
        for (k, a) in acc.iter_mut().enumerate() {
            let interior = k != 0 && !(nfft % 2 == 0 && k == nfft / 2);
            *a *= if interior { 2.0 * norm } else { norm };
        }
        Ok(acc)
    }
}

/// Returns `(freqs_hz, psd)`.
pub fn welch_psd(signal: &[f64], cfg: &WelchConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let w = Welch::new(cfg.clone())?;
    let psd = w.psd(signal)?;
    Ok((w.freqs(), psd))
}

/// Contiguous bin range covering `[lo_hz, hi_hz]`: from the bin containing
/// `lo_hz` to the bin containing `hi_hz`, where bin `k` spans
/// `[f_k, f_{k+1})`. With `target_count`, the range is then grown or shrunk
/// one bin at a time on whichever side keeps it closest to the band.
pub fn band_bins(
    freqs_hz: &[f64],
    lo_hz: f64,
    hi_hz: f64,
    target_count: Option<usize>,
) -> Result<RangeInclusive<usize>> {
    if freqs_hz.is_empty() || lo_hz > hi_hz {
        return Err(invalid_arg!("empty band selection [{lo_hz}, {hi_hz}]"));
    }
    let last = freqs_hz.len() - 1;
    if hi_hz < freqs_hz[0] || lo_hz > freqs_hz[last] {
        return Err(invalid_arg!(
            "band [{lo_hz}, {hi_hz}] Hz lies outside the frequency axis"
        ));
    }
    let containing = |f: f64| freqs_hz.partition_point(|&x| x <= f).saturating_sub(1);
    let (mut start, mut end) = (containing(lo_hz), containing(hi_hz));
    if let Some(target) = target_count {
        if target == 0 || target > freqs_hz.len() {
            return Err(invalid_arg!("cannot select {target} bins from {}", freqs_hz.len()));
        }
        while end - start + 1 < target {
            let below = (start > 0).then(|| lo_hz - freqs_hz[start - 1]);
            let above = (end < last).then(|| freqs_hz[end + 1] - hi_hz);
            match (below, above) {
                (Some(b), Some(a)) if b < a => start -= 1,
                (_, Some(_)) => end += 1,
                (Some(_), None) => start -= 1,
                (None, None) => unreachable!("target bounded by axis length"),
            }
        }
        while end - start + 1 > target {
            if lo_hz - freqs_hz[start] > freqs_hz[end] - hi_hz {
                start += 1;
            } else {
                end -= 1;
            }
        }
    }
    Ok(start..=end)
}
