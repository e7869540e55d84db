use crate::config::{PipelineConfig, SmoothingOrder, SmoothingWindow};
use crate::error::{invalid_arg, invalid_data, Result};
use crate::recording::{LabelVector, Recording, SampleGrid};

/// Largest double below 1; the index never reaches 1 even when `tanh` rounds up.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Per-event drowsiness indices before they are placed on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EventIndexSeries {
    onsets_s: Vec<f64>,
    indices: Vec<f64>,
}

impl EventIndexSeries {
    pub fn new(onsets_s: Vec<f64>, indices: Vec<f64>) -> Result<Self> {
        if onsets_s.len() != indices.len() {
            return Err(invalid_data!("onsets and indices differ in length"));
        }
        if onsets_s.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid_data!("onsets must be strictly ascending"));
        }
        if let Some(v) = indices.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid_data!("index {v} outside [0, 1]"));
        }
        Ok(Self { onsets_s, indices })
    }

    /// Applies the drowsiness map to every event of a recording.
    pub fn from_recording(rec: &Recording, tau0: f64) -> Result<Self> {
        let onsets = rec.events().iter().map(|e| e.onset_s).collect();
        let indices = rec
            .events()
            .iter()
            .map(|e| drowsiness_index(e.response_time_s, tau0))
            .collect::<Result<_>>()?;
        Self::new(onsets, indices)
    }

    pub fn onsets_s(&self) -> &[f64] {
        &self.onsets_s
    }
    pub fn indices(&self) -> &[f64] {
        &self.indices
    }
    pub fn len(&self) -> usize {
        self.onsets_s.len()
    }
    pub fn is_empty(&self) -> bool {
        self.onsets_s.is_empty()
    }
}

/// `max(0, (1 - e^-(τ-τ0)) / (1 + e^-(τ-τ0)))`, in `[0, 1)`.
pub fn drowsiness_index(tau: f64, tau0: f64) -> Result<f64> {
    if !(tau > 0.0 && tau0 > 0.0) || tau.is_nan() || tau0.is_nan() {
        return Err(invalid_arg!(
            "response time and tau0 must be positive (tau={tau}, tau0={tau0})"
        ));
    }
    let x = tau - tau0;
    if x <= 0.0 {
        return Ok(0.0);
    }
    let e = (-x).exp();
    let y = -(-x).exp_m1() / (1.0 + e);
    Ok(y.min(BELOW_ONE))
}

/// Square moving average over event indices.
pub fn smooth_indices(events: &EventIndexSeries, window_s: f64, window: SmoothingWindow) -> Result<EventIndexSeries> {
    if events.is_empty() {
        return Err(invalid_arg!("cannot smooth an empty event series"));
    }
    if !(window_s > 0.0) {
        return Err(invalid_arg!("smoothing window must be positive"));
    }
    let (back, ahead) = match window {
        SmoothingWindow::Causal => (window_s, 0.0),
        SmoothingWindow::Centered => (window_s / 2.0, window_s / 2.0),
    };
    let t = &events.onsets_s;
    let v = &events.indices;
    let mut lo = 0;
    let mut hi = 0;
    let smoothed = t
        .iter()
        .map(|&now| {
            while t[lo] < now - back {
                lo += 1;
            }
            while hi + 1 < t.len() && t[hi + 1] <= now + ahead {
                hi += 1;
            }
            let hi = hi.max(lo);
            let sum: f64 = v[lo..=hi].iter().sum();
            // keep the mean inside the members' range despite rounding
            let (mn, mx) = v[lo..=hi]
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            (sum / (hi - lo + 1) as f64).clamp(mn, mx)
        })
        .collect();
    Ok(EventIndexSeries {
        onsets_s: t.clone(),
        indices: smoothed,
    })
}

/// Carries the latest event index at or before each grid time forward;
/// grid points before the first event take the first event's index.
pub fn labels_on_grid(events: &EventIndexSeries, grid: &SampleGrid) -> Result<LabelVector> {
    if events.is_empty() {
        return Err(invalid_arg!("no events to place on the grid"));
    }
    let mut k = 0;
    let values = grid
        .times()
        .map(|t| {
            while k + 1 < events.len() && events.onsets_s[k + 1] <= t {
                k += 1;
            }
            events.indices[k]
        })
        .collect();
    LabelVector::new(values, *grid)
}

/// The full label chain for one recording under `cfg`.
pub fn labels_for_recording(rec: &Recording, grid: &SampleGrid, cfg: &PipelineConfig) -> Result<LabelVector> {
    let raw = EventIndexSeries::from_recording(rec, cfg.tau0)?;
    match cfg.smoothing_order {
        SmoothingOrder::EventsThenGrid => {
            let smooth = smooth_indices(&raw, cfg.smooth_s, cfg.smoothing_window)?;
            labels_on_grid(&smooth, grid)
        }
        SmoothingOrder::GridThenSmooth => {
            let on_grid = labels_on_grid(&raw, grid)?;
            let series = EventIndexSeries::new(grid.times().collect(), on_grid.values)?;
            let smooth = smooth_indices(&series, cfg.smooth_s, cfg.smoothing_window)?;
            LabelVector::new(smooth.indices, *grid)
        }
    }
}
