use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::ops::splitmix;
use super::EegNetModel;
use crate::config::{OptimizerKind, TrainConfig};
use crate::error::{invalid_arg, Error, Result};

/// Random-access supply of fixed-size input samples. Lets large raw-EEG
/// training sets be assembled on demand instead of materialized.
pub trait SampleSource: Sync {
    fn n_samples(&self) -> usize;
    fn sample_len(&self) -> usize;
    fn write_sample(&self, index: usize, out: &mut [f64]);
}

/// Samples stored contiguously, sample-major.
#[derive(Debug, Clone, Copy)]
pub struct DenseSamples<'a> {
    data: &'a [f64],
    sample_len: usize,
}

impl<'a> DenseSamples<'a> {
    pub fn new(data: &'a [f64], sample_len: usize) -> Result<Self> {
        if sample_len == 0 || data.len() % sample_len != 0 {
            return Err(Error::Shape(format!(
                "{} values do not split into samples of {sample_len}",
                data.len()
            )));
        }
        Ok(Self { data, sample_len })
    }
}

impl SampleSource for DenseSamples<'_> {
    fn n_samples(&self) -> usize {
        self.data.len() / self.sample_len
    }
    fn sample_len(&self) -> usize {
        self.sample_len
    }
    fn write_sample(&self, index: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.data[index * self.sample_len..(index + 1) * self.sample_len]);
    }
}

/// A view selecting (possibly repeated) samples of another source.
pub struct IndexedSource<'a, S: SampleSource + ?Sized> {
    inner: &'a S,
    indices: Vec<usize>,
}

impl<'a, S: SampleSource + ?Sized> IndexedSource<'a, S> {
    pub fn new(inner: &'a S, indices: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= inner.n_samples()) {
            return Err(invalid_arg!("sample index {bad} out of range {}", inner.n_samples()));
        }
        Ok(Self { inner, indices })
    }
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

impl<S: SampleSource + ?Sized> SampleSource for IndexedSource<'_, S> {
    fn n_samples(&self) -> usize {
        self.indices.len()
    }
    fn sample_len(&self) -> usize {
        self.inner.sample_len()
    }
    fn write_sample(&self, index: usize, out: &mut [f64]) {
        self.inner.write_sample(self.indices[index], out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig, n_params: usize) -> Self {
        let moments = if cfg.optimizer == OptimizerKind::Adam {
            n_params
        } else {
            0
        };
        Self {
            kind: cfg.optimizer,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - self.beta1.powi(self.t as i32);
                let c2 = 1.0 - self.beta2.powi(self.t as i32);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                    let mhat = self.m[i] / c1;
                    let vhat = self.v[i] / c2;
                    params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub validation_loss: Option<f64>,
    pub wall_time_s: f64,
}

impl EegNetModel {
    /// One optimizer step on a batch. Returns the batch MSE before the update.
    pub fn train_step(&mut self, x: &[f64], y: &[f64], opt: &mut Optimizer) -> Result<f64> {
        if let Some(bad) = y.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid_arg!("training target {bad} outside [0, 1]"));
        }
        let key = splitmix(self.cfg.train.seed, self.step);
        let (loss, grad, stats) = self.loss_grad_stats(x, y, key)?;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("loss {loss} at step {}", self.step)));
        }
        opt.step(&mut self.params, &grad);
        self.update_running(&stats, y.len());
        self.step += 1;
        if !self.all_finite() {
            return Err(Error::Divergence(format!(
                "non-finite parameters after step {}",
                self.step
            )));
        }
        Ok(loss)
    }

    /// Mini-batch training with per-epoch seeded shuffling.
    ///
    /// The final batch of an epoch is kept if it holds at least two samples
    /// (batch norm needs a spread) and dropped otherwise.
    pub fn fit(&mut self, x: &dyn SampleSource, y: &[f64], cfg: &TrainConfig) -> Result<TrainReport> {
        let n = x.n_samples();
        if n != y.len() {
            return Err(Error::Shape(format!("{} targets for {n} samples", y.len())));
        }
        if x.sample_len() != self.sample_len() {
            return Err(Error::Shape(format!(
                "samples of {} values for a {}x{} network",
                x.sample_len(),
                self.cfg.in_channels,
                self.cfg.in_time
            )));
        }
        if cfg.batch_size < 2 || n < cfg.batch_size {
            return Err(invalid_arg!(
                "need batch_size >= 2 and at least batch_size samples ({n} < {})",
                cfg.batch_size
            ));
        }
        let started = Instant::now();
        let mut opt = Optimizer::new(cfg, self.n_params());
        let len = x.sample_len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut buf = vec![0.0; cfg.batch_size * len];
        let mut targets = Vec::with_capacity(cfg.batch_size);
        let mut epoch_losses = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix(cfg.seed, epoch as u64 + 1));
            order.shuffle(&mut rng);
            let (mut total, mut seen) = (0.0, 0usize);
            for batch in order.chunks(cfg.batch_size) {
                if batch.len() < 2 {
                    continue;
                }
                targets.clear();
                for (k, &i) in batch.iter().enumerate() {
                    x.write_sample(i, &mut buf[k * len..(k + 1) * len]);
                    targets.push(y[i]);
                }
                let loss = self.train_step(&buf[..batch.len() * len], &targets, &mut opt)?;
                total += loss * batch.len() as f64;
                seen += batch.len();
            }
            let epoch_loss = total / seen as f64;
            log::debug!("epoch {epoch}: loss {epoch_loss:.6}");
            epoch_losses.push(epoch_loss);
        }
        Ok(TrainReport {
            epoch_losses,
            validation_loss: None,
            wall_time_s: started.elapsed().as_secs_f64(),
        })
    }

    /// Eval-mode predictions for every sample of a source.
    pub fn predict_source(&self, x: &dyn SampleSource) -> Result<Vec<f64>> {
        let len = x.sample_len();
        if len != self.sample_len() {
            return Err(Error::Shape(format!("samples of {len} values for this network")));
        }
        let chunk = 8;
        let mut buf = vec![0.0; chunk * len];
        let mut out = Vec::with_capacity(x.n_samples());
        let mut start = 0;
        while start < x.n_samples() {
            let k = chunk.min(x.n_samples() - start);
            for j in 0..k {
                x.write_sample(start + j, &mut buf[j * len..(j + 1) * len]);
            }
            out.extend(self.predict(&buf[..k * len])?);
            start += k;
        }
        Ok(out)
    }
}
