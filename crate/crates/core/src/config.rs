use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};
use crate::eval::AnovaModel;
use crate::pipelines::AlgorithmId;

/// Taper applied to each Welch segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Hamming,
    Hann,
    Rectangular,
}

/// Welch parameters that do not depend on the sampling rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WelchSettings {
    pub segment_len: usize,
    pub overlap_frac: f64,
    pub window: WindowKind,
    pub nfft: usize,
}

impl Default for WelchSettings {
    fn default() -> Self {
        Self {
            segment_len: 2048,
            overlap_frac: 0.5,
            window: WindowKind::Hamming,
            nfft: 2048,
        }
    }
}

/// Shape of the label smoothing window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingWindow {
    /// Mean over `[t - window, t]`.
    Causal,
    /// Mean over `[t - window/2, t + window/2]`.
    Centered,
}

/// Whether smoothing runs on event-level indices before they are carried onto
/// the sample grid, or on the grid labels afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingOrder {
    EventsThenGrid,
    GridThenSmooth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Optimizer and schedule for one EEGNet training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Use every `sample_stride`-th training sample. Consecutive 30 s epochs
    /// overlap by 90%, so striding thins near-duplicates.
    pub sample_stride: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 64,
            epochs: 50,
            sample_stride: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    /// Butterworth prototype order; applied forward and backward.
    pub filter_order: usize,
    /// Sampling rate after decimation.
    pub target_fs_hz: f64,
    pub psd_band_lo_hz: f64,
    pub psd_band_hi_hz: f64,
    /// Number of PSD bins to keep inside the PSD band (67 at 250 Hz / nfft 2048).
    pub psd_bin_count: Option<usize>,
    /// Upper edge of the theta band used by the ridge baselines.
    pub theta_hi_hz: f64,
    pub epoch_s: f64,
    pub step_s: f64,
    pub smooth_s: f64,
    pub smoothing_window: SmoothingWindow,
    pub smoothing_order: SmoothingOrder,
    pub tau0: f64,
    pub reject_db: f64,
    pub n_bootstrap: usize,
    pub n_repeats: usize,
    pub ridge_lambda: f64,
    pub pca_var_frac: f64,
    pub welch: WelchSettings,
    pub dropout_p: f64,
    pub eegnet_psd: TrainConfig,
    pub eegnet_raw: TrainConfig,
    /// Keep every k-th time point of the raw epochs fed to the raw-input
    /// EEGNet (1 = the full 250 Hz epoch).
    pub raw_time_decimation: usize,
    pub algorithms: Vec<AlgorithmId>,
    /// How repeats enter the algorithm-effect ANOVA.
    pub anova_model: AnovaModel,
    pub seed: Option<u64>,
    /// Worker threads for experiment-level parallelism; `None` uses all cores.
    pub jobs: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            band_lo_hz: 1.0,
            band_hi_hz: 50.0,
            filter_order: 4,
            target_fs_hz: 250.0,
            psd_band_lo_hz: 4.0,
            psd_band_hi_hz: 12.0,
            psd_bin_count: Some(67),
            theta_hi_hz: 8.0,
            epoch_s: 30.0,
            step_s: 3.0,
            smooth_s: 90.0,
            smoothing_window: SmoothingWindow::Causal,
            smoothing_order: SmoothingOrder::EventsThenGrid,
            tau0: 1.0,
            reject_db: 20.0,
            n_bootstrap: 10,
            n_repeats: 10,
            ridge_lambda: 1.0,
            pca_var_frac: 0.95,
            welch: WelchSettings::default(),
            dropout_p: 0.25,
            eegnet_psd: TrainConfig::default(),
            eegnet_raw: TrainConfig::default(),
            raw_time_decimation: 1,
            algorithms: AlgorithmId::ALL.to_vec(),
            anova_model: AnovaModel::default(),
            seed: None,
            jobs: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("band_lo_hz", self.band_lo_hz),
            ("band_hi_hz", self.band_hi_hz),
            ("target_fs_hz", self.target_fs_hz),
            ("epoch_s", self.epoch_s),
            ("step_s", self.step_s),
            ("smooth_s", self.smooth_s),
            ("tau0", self.tau0),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid_arg!("{name} must be positive, got {v}"));
            }
        }
        if self.band_lo_hz >= self.band_hi_hz {
            return Err(invalid_arg!("band-pass edges out of order"));
        }
        if self.band_hi_hz >= self.target_fs_hz / 2.0 {
            return Err(invalid_arg!(
                "band_hi_hz {} must stay below the decimated Nyquist {}",
                self.band_hi_hz,
                self.target_fs_hz / 2.0
            ));
        }
        if !(self.psd_band_lo_hz < self.psd_band_hi_hz
            && self.psd_band_lo_hz >= self.band_lo_hz
            && self.psd_band_hi_hz <= self.band_hi_hz)
        {
            return Err(invalid_arg!("PSD band must lie inside the analysis band"));
        }
        if !(self.theta_hi_hz > self.psd_band_lo_hz && self.theta_hi_hz <= self.psd_band_hi_hz) {
            return Err(invalid_arg!("theta_hi_hz must lie inside the PSD band"));
        }
        if !(0.0..1.0).contains(&self.welch.overlap_frac) {
            return Err(invalid_arg!("welch.overlap_frac must be in [0, 1)"));
        }
        if self.welch.segment_len == 0 || self.welch.nfft < self.welch.segment_len {
            return Err(invalid_arg!("welch.nfft must be >= welch.segment_len > 0"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(invalid_arg!("dropout_p must be in [0, 1)"));
        }
        if self.n_bootstrap == 0 || self.n_repeats == 0 {
            return Err(invalid_arg!("n_bootstrap and n_repeats must be >= 1"));
        }
        if self.ridge_lambda < 0.0 {
            return Err(invalid_arg!("ridge_lambda must be >= 0"));
        }
        if !(self.pca_var_frac > 0.0 && self.pca_var_frac <= 1.0) {
            return Err(invalid_arg!("pca_var_frac must be in (0, 1]"));
        }
        for (name, t) in [("eegnet_psd", &self.eegnet_psd), ("eegnet_raw", &self.eegnet_raw)] {
            if t.batch_size == 0 || t.sample_stride == 0 {
                return Err(invalid_arg!("{name}: batch_size and sample_stride must be >= 1"));
            }
            if !(t.learning_rate >= 0.0) {
                return Err(invalid_arg!("{name}: learning_rate must be >= 0"));
            }
        }
        if self.raw_time_decimation == 0 {
            return Err(invalid_arg!("raw_time_decimation must be >= 1"));
        }
        if self.algorithms.is_empty() {
            return Err(invalid_arg!("at least one algorithm must be selected"));
        }
        if self.jobs == Some(0) {
            return Err(invalid_arg!("jobs must be >= 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_reproduce_published_constants() {
        let c = PipelineConfig::default();
        assert_eq!((c.band_lo_hz, c.band_hi_hz), (1.0, 50.0));
        assert_eq!((c.psd_band_lo_hz, c.psd_band_hi_hz), (4.0, 12.0));
        assert_eq!((c.epoch_s, c.step_s, c.smooth_s), (30.0, 3.0, 90.0));
        assert_eq!(c.tau0, 1.0);
        assert_eq!(c.reject_db, 20.0);
        assert_eq!((c.n_bootstrap, c.n_repeats), (10, 10));
        assert_eq!(c.pca_var_frac, 0.95);
        assert_eq!(c.target_fs_hz, 250.0);
        c.validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{"seed": 7, "eegnet_psd": {"epochs": 3}}"#).unwrap();
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.eegnet_psd.epochs, 3);
        assert_eq!(c.eegnet_psd.batch_size, 64);
        assert_eq!(c.reject_db, 20.0);
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"sed": 7}"#).is_err());
    }

    #[test]
    fn psd_band_outside_analysis_band_rejected() {
        let c = PipelineConfig {
            psd_band_hi_hz: 60.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_roundtrip() {
        let c = PipelineConfig {
            seed: Some(11),
            ..Default::default()
        };
        let back: PipelineConfig = serde_json::from_str(&c.to_json_pretty()).unwrap();
        assert_eq!(back, c);
    }
}
