use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::container::{save_recording, write_dataset_index, DatasetIndex};
use crate::eegnet::splitmix;
use crate::error::{invalid_arg, Error, Result};
use crate::recording::{LaneDepartureEvent, Recording};

/// Generator parameters; amplitudes are in microvolts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthProfile {
    /// Total channels; the last two are the earlobes A1 and A2.
    pub n_channels: usize,
    pub fs_hz: f64,
    pub duration_s: f64,
    pub event_gap_s: [f64; 2],
    /// Mean-reversion rate of the latent, per second.
    pub latent_rate: f64,
    /// Stationary standard deviation of the latent before clipping.
    pub latent_noise: f64,
    pub latent_mean: f64,
    /// Alpha amplitude gain per unit latent.
    pub alpha_coupling: f64,
    /// Theta amplitude gain per unit latent.
    pub theta_coupling: f64,
    pub alpha_hz: f64,
    pub theta_hz: f64,
    pub alpha_amp: f64,
    pub theta_amp: f64,
    /// Pink-noise density at 10 Hz, in µV²/Hz.
    pub pink_density: f64,
    pub reference_amp: f64,
    pub tau0_gen: f64,
    /// Response-time slope `a` in seconds per unit latent.
    pub response_slope: f64,
    /// Log-scale location of the lognormal response-time noise.
    pub response_log_mu: f64,
    pub response_log_sigma: f64,
    /// Probability that one scalp channel is recorded with a tenfold gain.
    pub hot_channel_prob: f64,
    pub seed: u64,
}

impl Default for SynthProfile {
    fn default() -> Self {
        Self {
            n_channels: 32,
            fs_hz: 500.0,
            duration_s: 600.0,
            event_gap_s: [5.0, 10.0],
            latent_rate: 1.0 / 120.0,
            latent_noise: 0.3,
            latent_mean: 0.45,
            alpha_coupling: 2.0,
            theta_coupling: 1.5,
            alpha_hz: 10.0,
            theta_hz: 5.0,
            alpha_amp: 1.5,
            theta_amp: 1.0,
            pink_density: 0.5,
            reference_amp: 5.0,
            tau0_gen: 0.6,
            response_slope: 3.0,
            response_log_mu: (0.3f64).ln(),
            response_log_sigma: 0.5,
            hot_channel_prob: 0.0,
            seed: 0,
        }
    }
}

impl SynthProfile {
    /// Same signal model with the latent decoupled from both the EEG and the
    /// response times.
    pub fn null(&self) -> Self {
        Self {
            alpha_coupling: 0.0,
            theta_coupling: 0.0,
            response_slope: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_channels < 3 {
            return Err(invalid_arg!("n_channels must be at least 3 (two are earlobes)"));
        }
        let positive = [
            ("fs_hz", self.fs_hz),
            ("duration_s", self.duration_s),
            ("latent_rate", self.latent_rate),
            ("latent_noise", self.latent_noise),
            ("alpha_hz", self.alpha_hz),
            ("theta_hz", self.theta_hz),
            ("alpha_amp", self.alpha_amp),
            ("theta_amp", self.theta_amp),
            ("pink_density", self.pink_density),
            ("response_log_sigma", self.response_log_sigma),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid_arg!("{name} must be positive, got {v}"));
            }
        }
        let non_negative = [
            ("alpha_coupling", self.alpha_coupling),
            ("theta_coupling", self.theta_coupling),
            ("reference_amp", self.reference_amp),
            ("tau0_gen", self.tau0_gen),
            ("response_slope", self.response_slope),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid_arg!("{name} must be non-negative, got {v}"));
            }
        }
        let [lo, hi] = self.event_gap_s;
        if !(lo.is_finite() && hi.is_finite() && 5.0 <= lo && lo < hi && hi <= 10.0) {
            return Err(invalid_arg!(
                "event_gap_s must satisfy 5 <= lo < hi <= 10, got [{lo}, {hi}]"
            ));
        }
        if !(0.0..=1.0).contains(&self.latent_mean) {
            return Err(invalid_arg!("latent_mean must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.hot_channel_prob) {
            return Err(invalid_arg!("hot_channel_prob must lie in [0, 1]"));
        }
        if !self.response_log_mu.is_finite() {
            return Err(invalid_arg!("response_log_mu must be finite"));
        }
        let nyquist = self.fs_hz / 2.0;
        if self.alpha_hz >= nyquist || self.theta_hz >= nyquist {
            return Err(invalid_arg!(
                "oscillator frequencies must lie below Nyquist ({nyquist} Hz)"
            ));
        }
        if (self.duration_s * self.fs_hz).round() < 2.0 {
            return Err(invalid_arg!("duration too short for fs_hz"));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.fs_hz).round() as usize
    }

    pub fn earlobe_indices(&self) -> [usize; 2] {
        [self.n_channels - 2, self.n_channels - 1]
    }

    pub fn channel_labels(&self) -> Vec<String> {
        let n_scalp = self.n_channels - 2;
        (0..n_scalp)
            .map(|c| format!("E{:02}", c + 1))
            .chain(["A1".to_string(), "A2".to_string()])
            .collect()
    }
}

/// A generated recording together with its latent trace (one value per sample).
#[derive(Debug, Clone)]
pub struct SyntheticSubject {
    pub recording: Recording,
    pub latent: Vec<f64>,
    pub hot_channel: Option<usize>,
}

pub fn generate_subject(profile: &SynthProfile, subject_id: &str) -> Result<Recording> {
    Ok(generate_subject_with_latent(profile, subject_id)?.recording)
}

pub fn generate_subject_with_latent(profile: &SynthProfile, subject_id: &str) -> Result<SyntheticSubject> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let n = profile.n_samples();
    let fs = profile.fs_hz;
    let n_scalp = profile.n_channels - 2;

    let latent = ou_latent(profile, n, &mut rng);
    let mut alpha = resonator(profile.alpha_hz, 2.0, fs, n, &mut rng);
    let mut theta = resonator(profile.theta_hz, 2.0, fs, n, &mut rng);
    for (k, &d) in latent.iter().enumerate() {
        alpha[k] *= profile.alpha_amp * (1.0 + profile.alpha_coupling * d);
        theta[k] *= profile.theta_amp * (1.0 + profile.theta_coupling * d);
    }
    let reference: Vec<f64> = if profile.reference_amp > 0.0 {
        let mut r = pink_noise(n, fs, 1.0, &mut rng);
        normalize_unit_rms(&mut r);
        r.iter().map(|v| v * profile.reference_amp).collect()
    } else {
        vec![0.0; n]
    };

    let mixing: Vec<(f64, f64)> = (0..n_scalp)
        .map(|_| (rng.random_range(0.5..1.5), rng.random_range(0.5..1.5)))
        .collect();
    let hot_channel = (rng.random::<f64>() < profile.hot_channel_prob).then(|| rng.random_range(0..n_scalp));
    let channel_seeds: Vec<u64> = (0..profile.n_channels).map(|_| rng.random()).collect();

    let mut data = vec![0.0; profile.n_channels * n];
    data.par_chunks_mut(n).enumerate().for_each(|(c, out)| {
        let mut crng = ChaCha8Rng::seed_from_u64(channel_seeds[c]);
        let density = if c < n_scalp {
            profile.pink_density
        } else {
            profile.pink_density * 0.05
        };
        let noise = pink_noise(n, fs, density, &mut crng);
        let (ga, gt) = mixing.get(c).copied().unwrap_or((0.0, 0.0));
        let gain = if hot_channel == Some(c) { 10.0 } else { 1.0 };
        for k in 0..n {
            out[k] = gain * (noise[k] + ga * alpha[k] + gt * theta[k]) + reference[k];
        }
    });

    let events = lane_departures(profile, &latent, &mut rng)?;
    let recording = Recording::new(
        subject_id,
        fs,
        profile.channel_labels(),
        Some(profile.earlobe_indices()),
        data,
        events,
    )?;
    Ok(SyntheticSubject {
        recording,
        latent,
        hot_channel,
    })
}

/// Per-subject profiles jittered from the base: coupling scaled by U(0.7, 1.3),
/// noise density by U(0.8, 1.25), latent mean drawn from U(0.3, 0.6).
pub fn subject_profiles(n_subjects: usize, base: &SynthProfile, seed: u64) -> Result<Vec<SynthProfile>> {
    if n_subjects < 2 {
        return Err(invalid_arg!("a dataset needs at least 2 subjects, got {n_subjects}"));
    }
    base.validate()?;
    Ok((0..n_subjects)
        .map(|i| {
            let subject_seed = splitmix(seed, i as u64 + 1);
            let mut rng = ChaCha8Rng::seed_from_u64(subject_seed);
            let coupling = rng.random_range(0.7..1.3);
            SynthProfile {
                alpha_coupling: base.alpha_coupling * coupling,
                theta_coupling: base.theta_coupling * coupling,
                pink_density: base.pink_density * rng.random_range(0.8..1.25),
                latent_mean: rng.random_range(0.3..0.6),
                seed: rng.random(),
                ..base.clone()
            }
        })
        .collect())
}

pub fn subject_name(i: usize) -> String {
    format!("S{:02}", i + 1)
}

/// Writes `n_subjects` recordings plus `dataset.json` under `out_dir`.
pub fn generate_dataset(n_subjects: usize, base: &SynthProfile, seed: u64, out_dir: &Path) -> Result<PathBuf> {
    let profiles = subject_profiles(n_subjects, base, seed)?;
    let names: Vec<String> = (0..n_subjects).map(subject_name).collect();
    for (name, profile) in names.iter().zip(&profiles) {
        let rec = generate_subject(profile, name)?;
        save_recording(&rec, &out_dir.join(name))?;
    }
    let profile = serde_json::json!({
        "base": base,
        "seed": seed,
        "subjects": profiles,
    });
    write_dataset_index(
        out_dir,
        &DatasetIndex {
            subjects: names,
            profile: Some(profile),
        },
    )?;
    Ok(out_dir.to_path_buf())
}

fn ou_latent(p: &SynthProfile, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dt = 1.0 / p.fs_hz;
    let decay = (-p.latent_rate * dt).exp();
    let innovation = p.latent_noise * (1.0 - decay * decay).sqrt();
    let mut d = (p.latent_mean + p.latent_noise * rng.sample::<f64, _>(StandardNormal)).clamp(0.0, 1.0);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(d);
        let z: f64 = rng.sample(StandardNormal);
        d = (p.latent_mean + decay * (d - p.latent_mean) + innovation * z).clamp(0.0, 1.0);
    }
    out
}

/// Unit-RMS narrowband oscillation: white noise through a two-pole resonator
/// with the given centre frequency and -3 dB bandwidth.
fn resonator(f_hz: f64, bandwidth_hz: f64, fs: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let r = (-std::f64::consts::PI * bandwidth_hz / fs).exp();
    let a1 = 2.0 * r * (2.0 * std::f64::consts::PI * f_hz / fs).cos();
    let a2 = -r * r;
    let warmup = (5.0 * fs / bandwidth_hz) as usize;
    let (mut y1, mut y2) = (0.0, 0.0);
    let mut out = Vec::with_capacity(n);
    for k in 0..warmup + n {
        let e: f64 = rng.sample(StandardNormal);
        let y = a1 * y1 + a2 * y2 + e;
        y2 = y1;
        y1 = y;
        if k >= warmup {
            out.push(y);
        }
    }
    normalize_unit_rms(&mut out);
    out
}

fn normalize_unit_rms(x: &mut [f64]) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
}

/// Gaussian noise with one-sided density `density_at_10hz · 10 / f`, built by
/// shaping random Fourier coefficients.
fn pink_noise(n: usize, fs: f64, density_at_10hz: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let nfft = n.next_power_of_two();
    let df = fs / nfft as f64;
    let mut spec = vec![Complex64::new(0.0, 0.0); nfft];
    for k in 1..=nfft / 2 {
        let f = k as f64 * df;
        let s = density_at_10hz * 10.0 / f.max(df);
        let (re, im): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        if k == nfft / 2 {
            spec[k] = Complex64::new(re * (nfft as f64 * fs * s).sqrt() / 2.0, 0.0);
        } else {
            let amp = (nfft as f64 * fs * s / 4.0).sqrt();
            spec[k] = Complex64::new(re * amp, im * amp);
            spec[nfft - k] = spec[k].conj();
        }
    }
    FftPlanner::new().plan_fft_inverse(nfft).process(&mut spec);
    spec[..n].iter().map(|c| c.re / nfft as f64).collect()
}

fn lane_departures(p: &SynthProfile, latent: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<LaneDepartureEvent>> {
    let noise = LogNormal::new(p.response_log_mu, p.response_log_sigma)
        .map_err(|e| Error::InvalidArgument(format!("response noise: {e}")))?;
    let [lo, hi] = p.event_gap_s;
    let mut events = Vec::new();
    let mut t = rng.random_range(lo..hi);
    while t < p.duration_s {
        let k = ((t * p.fs_hz) as usize).min(latent.len() - 1);
        let tau = p.tau0_gen + p.response_slope * latent[k] + noise.sample(rng);
        events.push(LaneDepartureEvent {
            onset_s: t,
            response_time_s: tau.max(0.1),
        });
        t += rng.random_range(lo..hi);
    }
    Ok(events)
}
