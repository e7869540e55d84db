mod io;
mod ops;
mod train;

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{invalid_arg, Error, Result};
use ops::{dot, ConvGeom, PoolGeom};

pub use io::{load_model, save_model};
pub use ops::splitmix;
pub use train::{DenseSamples, IndexedSource, Optimizer, SampleSource, TrainReport};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EegNetConfig {
    pub in_channels: usize,
    pub in_time: usize,
    pub dropout_p: f64,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    /// (rows across the spatial-filter axis, taps along time)
    pub conv2_kernel: [usize; 2],
    pub conv3_filters: usize,
    pub conv3_kernel: [usize; 2],
    /// Applied after blocks 2 and 3.
    pub pool: [usize; 2],
    pub train: TrainConfig,
}

impl EegNetConfig {
    pub fn new(in_channels: usize, in_time: usize) -> Self {
        Self {
            in_channels,
            in_time,
            dropout_p: 0.25,
            conv1_filters: 16,
            conv2_filters: 4,
            conv2_kernel: [2, 32],
            conv3_filters: 4,
            conv3_kernel: [8, 4],
            pool: [2, 4],
            train: TrainConfig::default(),
        }
    }

    pub fn with_train(mut self, train: TrainConfig) -> Self {
        self.train = train;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let [ph, pw] = self.pool;
        if self.in_channels == 0 {
            return Err(invalid_arg!("in_channels must be positive"));
        }
        if self.in_time < 16 {
            return Err(invalid_arg!("in_time must be at least 16, got {}", self.in_time));
        }
        if [self.conv1_filters, self.conv2_filters, self.conv3_filters]
            .iter()
            .chain(&self.conv2_kernel)
            .chain(&self.conv3_kernel)
            .chain(&self.pool)
            .any(|&v| v == 0)
        {
            return Err(invalid_arg!("filter counts, kernels and pools must be positive"));
        }
        if self.conv1_filters / ph / ph == 0 || self.in_time / pw / pw == 0 {
            return Err(invalid_arg!(
                "pooling {ph}x{pw} twice leaves nothing of a {}x{} map",
                self.conv1_filters,
                self.in_time
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(invalid_arg!("dropout_p must be in [0, 1), got {}", self.dropout_p));
        }
        Ok(())
    }
}

/// Output shape of one stage of the forward pass, recorded from the buffers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageShape {
    pub stage: &'static str,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Running batch-norm statistics, no dropout.
    Eval,
    /// Batch statistics and dropout masks derived from `dropout_key`.
    Train { dropout_key: u64 },
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    conv1: ConvGeom,
    conv2: ConvGeom,
    pool2: PoolGeom,
    conv3: ConvGeom,
    pool3: PoolGeom,
    dense_in: usize,
    w1: Range<usize>,
    b1: Range<usize>,
    g1: Range<usize>,
    be1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
    g2: Range<usize>,
    be2: Range<usize>,
    w3: Range<usize>,
    b3: Range<usize>,
    g3: Range<usize>,
    be3: Range<usize>,
    wd: Range<usize>,
    bd: Range<usize>,
    n_params: usize,
}

impl Layout {
    fn new(cfg: &EegNetConfig) -> Self {
        let (c, t) = (cfg.in_channels, cfg.in_time);
        let (f1, f2, f3) = (cfg.conv1_filters, cfg.conv2_filters, cfg.conv3_filters);
        let [ph, pw] = cfg.pool;
        let conv1 = ConvGeom {
            in_maps: c,
            out_maps: f1,
            h: 1,
            w: t,
            kh: 1,
            kw: 1,
        };
        let conv2 = ConvGeom {
            in_maps: 1,
            out_maps: f2,
            h: f1,
            w: t,
            kh: cfg.conv2_kernel[0],
            kw: cfg.conv2_kernel[1],
        };
        let pool2 = PoolGeom {
            maps: f2,
            h: f1,
            w: t,
            ph,
            pw,
        };
        let conv3 = ConvGeom {
            in_maps: f2,
            out_maps: f3,
            h: pool2.out_h(),
            w: pool2.out_w(),
            kh: cfg.conv3_kernel[0],
            kw: cfg.conv3_kernel[1],
        };
        let pool3 = PoolGeom {
            maps: f3,
            h: conv3.h,
            w: conv3.w,
            ph,
            pw,
        };
        let dense_in = pool3.out_len();

        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let w1 = take(conv1.weight_len());
        let b1 = take(f1);
        let g1 = take(f1);
        let be1 = take(f1);
        let w2 = take(conv2.weight_len());
        let b2 = take(f2);
        let g2 = take(f2);
        let be2 = take(f2);
        let w3 = take(conv3.weight_len());
        let b3 = take(f3);
        let g3 = take(f3);
        let be3 = take(f3);
        let wd = take(dense_in);
        let bd = take(1);
        Self {
            conv1,
            conv2,
            pool2,
            conv3,
            pool3,
            dense_in,
            w1,
            b1,
            g1,
            be1,
            w2,
            b2,
            g2,
            be2,
            w3,
            b3,
            g3,
            be3,
            wd,
            bd,
            n_params: at,
        }
    }

    fn tensors(&self) -> [(&'static str, Range<usize>); 14] {
        [
            ("conv1.weight", self.w1.clone()),
            ("conv1.bias", self.b1.clone()),
            ("bn1.gamma", self.g1.clone()),
            ("bn1.beta", self.be1.clone()),
            ("conv2.weight", self.w2.clone()),
            ("conv2.bias", self.b2.clone()),
            ("bn2.gamma", self.g2.clone()),
            ("bn2.beta", self.be2.clone()),
            ("conv3.weight", self.w3.clone()),
            ("conv3.bias", self.b3.clone()),
            ("bn3.gamma", self.g3.clone()),
            ("bn3.beta", self.be3.clone()),
            ("dense.weight", self.wd.clone()),
            ("dense.bias", self.bd.clone()),
        ]
    }

    /// (maps, plane) per batch-norm layer.
    fn bn_dims(&self) -> [(usize, usize); 3] {
        [
            (self.conv1.out_maps, self.conv1.w),
            (self.conv2.out_maps, self.conv2.h * self.conv2.w),
            (self.conv3.out_maps, self.conv3.h * self.conv3.w),
        ]
    }
}

/// Trainable parameters plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EegNetModel {
    cfg: EegNetConfig,
    layout: Layout,
    params: Vec<f64>,
    /// running mean then running variance, for each of the three BN layers
    running: Vec<f64>,
    step: u64,
}

/// Per-layer batch statistics from a training forward pass.
struct BatchStats {
    mean: [Vec<f64>; 3],
    var: [Vec<f64>; 3],
}

struct Cache {
    xhat1: Vec<f64>,
    d1: Vec<f64>,
    xhat2: Vec<f64>,
    argmax2: Vec<u32>,
    d2: Vec<f64>,
    xhat3: Vec<f64>,
    argmax3: Vec<u32>,
    d3: Vec<f64>,
    stats: BatchStats,
}

fn uniform_init(rng: &mut ChaCha8Rng, out: &mut [f64], fan_in: usize) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    for v in out {
        *v = rng.random_range(-bound..bound);
    }
}

/// Inverted-dropout multiplier for element `index` of dropout layer `layer`.
#[inline]
fn keep_scale(key: u64, layer: u64, index: usize, p: f64) -> f64 {
    if ops::hash_uniform(key, layer, index as u64) < p {
        0.0
    } else {
        1.0 / (1.0 - p)
    }
}

fn apply_dropout(buf: &mut [f64], mode: Mode, layer: u64, p: f64) {
    if let Mode::Train { dropout_key } = mode {
        if p > 0.0 {
            for (i, v) in buf.iter_mut().enumerate() {
                *v *= keep_scale(dropout_key, layer, i, p);
            }
        }
    }
}

fn batch_moments(z: &[f64], b: usize, maps: usize, plane: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (b * plane) as f64;
    let mut mean = vec![0.0; maps];
    let mut var = vec![0.0; maps];
    for k in 0..maps {
        let mut s = 0.0;
        for smp in 0..b {
            let off = (smp * maps + k) * plane;
            s += ops::sum(&z[off..off + plane]);
        }
        let m = s / n;
        let mut ss = 0.0;
        for smp in 0..b {
            let off = (smp * maps + k) * plane;
            ss += z[off..off + plane].iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
        mean[k] = m;
        var[k] = ss / n;
    }
    (mean, var)
}

/// Normalizes `z` in place into `gamma * xhat + beta`, optionally keeping xhat.
#[allow(clippy::too_many_arguments)]
fn bn_apply(
    z: &mut [f64],
    b: usize,
    maps: usize,
    plane: usize,
    mean: &[f64],
    var: &[f64],
    gamma: &[f64],
    beta: &[f64],
    mut xhat: Option<&mut Vec<f64>>,
) {
    if let Some(x) = xhat.as_deref_mut() {
        x.resize(z.len(), 0.0);
    }
    for smp in 0..b {
        for k in 0..maps {
            let inv = 1.0 / (var[k] + BN_EPS).sqrt();
            let off = (smp * maps + k) * plane;
            for i in off..off + plane {
                let xh = (z[i] - mean[k]) * inv;
                if let Some(x) = xhat.as_deref_mut() {
                    x[i] = xh;
                }
                z[i] = gamma[k] * xh + beta[k];
            }
        }
    }
}

/// Returns dz in place of dy and accumulates dgamma/dbeta.
#[allow(clippy::too_many_arguments)]
fn bn_backward(
    dy: &mut [f64],
    xhat: &[f64],
    b: usize,
    maps: usize,
    plane: usize,
    gamma: &[f64],
    var: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) {
    let n = (b * plane) as f64;
    for k in 0..maps {
        let (mut sdy, mut sdyx) = (0.0, 0.0);
        for smp in 0..b {
            let off = (smp * maps + k) * plane;
            sdy += ops::sum(&dy[off..off + plane]);
            sdyx += dot(&dy[off..off + plane], &xhat[off..off + plane]);
        }
        dgamma[k] += sdyx;
        dbeta[k] += sdy;
        let scale = gamma[k] / ((var[k] + BN_EPS).sqrt() * n);
        for smp in 0..b {
            let off = (smp * maps + k) * plane;
            for i in off..off + plane {
                dy[i] = scale * (n * dy[i] - sdy - xhat[i] * sdyx);
            }
        }
    }
}

impl EegNetModel {
    /// Builds a freshly initialized network (seeded by `cfg.train.seed`).
    pub fn build(cfg: EegNetConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        let mut params = vec![0.0; layout.n_params];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        uniform_init(&mut rng, &mut params[layout.w1.clone()], cfg.in_channels);
        uniform_init(
            &mut rng,
            &mut params[layout.w2.clone()],
            layout.conv2.in_maps * layout.conv2.kh * layout.conv2.kw,
        );
        uniform_init(
            &mut rng,
            &mut params[layout.w3.clone()],
            layout.conv3.in_maps * layout.conv3.kh * layout.conv3.kw,
        );
        uniform_init(&mut rng, &mut params[layout.wd.clone()], layout.dense_in);
        for g in [&layout.g1, &layout.g2, &layout.g3] {
            params[g.clone()].fill(1.0);
        }
        let mut running = Vec::new();
        for (maps, _) in layout.bn_dims() {
            running.extend(std::iter::repeat_n(0.0, maps));
            running.extend(std::iter::repeat_n(1.0, maps));
        }
        Ok(Self {
            cfg,
            layout,
            params,
            running,
            step: 0,
        })
    }

    pub fn config(&self) -> &EegNetConfig {
        &self.cfg
    }

    pub fn n_params(&self) -> usize {
        self.layout.n_params
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable flat view of the trainable parameters (declaration order).
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[f64] {
        &self.running
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn dense_inputs(&self) -> usize {
        self.layout.dense_in
    }

    /// Named parameter tensors in declaration order.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        self.layout
            .tensors()
            .into_iter()
            .map(|(name, r)| (name, &self.params[r]))
            .collect()
    }

    /// Flat index ranges of the named tensors.
    pub fn tensor_ranges(&self) -> Vec<(&'static str, Range<usize>)> {
        self.layout.tensors().to_vec()
    }

    pub fn sample_len(&self) -> usize {
        self.cfg.in_channels * self.cfg.in_time
    }

    fn check_batch(&self, x: &[f64]) -> Result<usize> {
        let len = self.sample_len();
        if x.is_empty() || x.len() % len != 0 {
            return Err(Error::Shape(format!(
                "batch of {} values is not a whole number of {}x{} samples",
                x.len(),
                self.cfg.in_channels,
                self.cfg.in_time
            )));
        }
        Ok(x.len() / len)
    }

    fn running_slices(&self, layer: usize) -> (&[f64], &[f64]) {
        let mut off = 0;
        for (l, (maps, _)) in self.layout.bn_dims().into_iter().enumerate() {
            if l == layer {
                return (
                    &self.running[off..off + maps],
                    &self.running[off + maps..off + 2 * maps],
                );
            }
            off += 2 * maps;
        }
        unreachable!("three batch-norm layers")
    }

    /// Forward pass over a batch laid out sample-major (`b × C × T`).
    pub fn forward(&self, x: &[f64], mode: Mode) -> Result<Vec<f64>> {
        let b = self.check_batch(x)?;
        if matches!(mode, Mode::Train { .. }) && b < 2 {
            return Err(invalid_arg!("train-mode batch norm needs at least 2 samples"));
        }
        Ok(self.forward_impl(x, b, mode, false, None).0)
    }

    /// Eval-mode predictions, computed in small chunks to bound memory.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let b = self.check_batch(x)?;
        let len = self.sample_len();
        let chunk = 8;
        let mut out = Vec::with_capacity(b);
        for c in x.chunks(chunk * len) {
            out.extend(self.forward_impl(c, c.len() / len, Mode::Eval, false, None).0);
        }
        Ok(out)
    }

    /// Records the output shape of every stage for one eval-mode sample.
    pub fn shape_trace(&self, sample: &[f64]) -> Result<Vec<StageShape>> {
        if self.check_batch(sample)? != 1 {
            return Err(Error::Shape("shape_trace takes exactly one sample".into()));
        }
        let mut trace = Vec::new();
        self.forward_impl(sample, 1, Mode::Eval, false, Some(&mut trace));
        Ok(trace)
    }

    fn forward_impl(
        &self,
        x: &[f64],
        b: usize,
        mode: Mode,
        want_cache: bool,
        mut trace: Option<&mut Vec<StageShape>>,
    ) -> (Vec<f64>, Option<Cache>) {
        let l = &self.layout;
        let p = &self.params;
        let drop_p = self.cfg.dropout_p;
        let train = matches!(mode, Mode::Train { .. });
        let mut record = |stage: &'static str, shape: &[usize], buf_len: usize| {
            if let Some(t) = trace.as_deref_mut() {
                debug_assert_eq!(shape.iter().product::<usize>() * b, buf_len);
                t.push(StageShape {
                    stage,
                    shape: shape.to_vec(),
                });
            }
        };
        let (c1, c2, c3) = (l.conv1, l.conv2, l.conv3);
        let (p2, p3) = (l.pool2, l.pool3);
        record("input", &[c1.in_maps, c1.w], x.len());

        let bn_layer = |z: &mut Vec<f64>,
                        layer: usize,
                        maps: usize,
                        plane: usize,
                        g: &Range<usize>,
                        be: &Range<usize>,
                        stats: &mut Option<BatchStats>| {
            let mut xhat = want_cache.then(Vec::new);
            if train {
                let (mean, var) = batch_moments(z, b, maps, plane);
                bn_apply(
                    z,
                    b,
                    maps,
                    plane,
                    &mean,
                    &var,
                    &p[g.clone()],
                    &p[be.clone()],
                    xhat.as_mut(),
                );
                let s = stats.get_or_insert_with(|| BatchStats {
                    mean: Default::default(),
                    var: Default::default(),
                });
                s.mean[layer] = mean;
                s.var[layer] = var;
            } else {
                let (rm, rv) = self.running_slices(layer);
                bn_apply(z, b, maps, plane, rm, rv, &p[g.clone()], &p[be.clone()], xhat.as_mut());
            }
            xhat.unwrap_or_default()
        };
        let mut stats = None;

        // block 1
        let mut z1 = vec![0.0; b * c1.out_len()];
        for s in 0..b {
            c1.forward(
                &x[s * c1.in_len()..(s + 1) * c1.in_len()],
                &p[l.w1.clone()],
                &p[l.b1.clone()],
                &mut z1[s * c1.out_len()..(s + 1) * c1.out_len()],
            );
        }
        record("conv1d", &[c1.out_maps, 1, c1.w], z1.len());
        let xhat1 = bn_layer(&mut z1, 0, c1.out_maps, c1.w, &l.g1, &l.be1, &mut stats);
        record("batchnorm", &[c1.out_maps, 1, c1.w], z1.len());
        record("reshape", &[1, c1.out_maps, c1.w], z1.len());
        apply_dropout(&mut z1, mode, 1, drop_p);
        record("dropout", &[1, c1.out_maps, c1.w], z1.len());
        let d1 = z1;

        // block 2
        let mut z2 = vec![0.0; b * c2.out_len()];
        for s in 0..b {
            c2.forward(
                &d1[s * c2.in_len()..(s + 1) * c2.in_len()],
                &p[l.w2.clone()],
                &p[l.b2.clone()],
                &mut z2[s * c2.out_len()..(s + 1) * c2.out_len()],
            );
        }
        record("conv2d", &[c2.out_maps, c2.h, c2.w], z2.len());
        let xhat2 = bn_layer(&mut z2, 1, c2.out_maps, c2.h * c2.w, &l.g2, &l.be2, &mut stats);
        record("batchnorm", &[c2.out_maps, c2.h, c2.w], z2.len());
        let mut d2 = vec![0.0; b * p2.out_len()];
        let mut argmax2 = if want_cache { vec![0u32; d2.len()] } else { Vec::new() };
        for s in 0..b {
            p2.forward(
                &z2[s * p2.in_len()..(s + 1) * p2.in_len()],
                &mut d2[s * p2.out_len()..(s + 1) * p2.out_len()],
                want_cache.then(|| &mut argmax2[s * p2.out_len()..(s + 1) * p2.out_len()]),
            );
        }
        drop(z2);
        record("maxpool", &[p2.maps, p2.out_h(), p2.out_w()], d2.len());
        apply_dropout(&mut d2, mode, 2, drop_p);
        record("dropout", &[p2.maps, p2.out_h(), p2.out_w()], d2.len());

        // block 3
        let mut z3 = vec![0.0; b * c3.out_len()];
        for s in 0..b {
            c3.forward(
                &d2[s * c3.in_len()..(s + 1) * c3.in_len()],
                &p[l.w3.clone()],
                &p[l.b3.clone()],
                &mut z3[s * c3.out_len()..(s + 1) * c3.out_len()],
            );
        }
        record("conv2d", &[c3.out_maps, c3.h, c3.w], z3.len());
        let xhat3 = bn_layer(&mut z3, 2, c3.out_maps, c3.h * c3.w, &l.g3, &l.be3, &mut stats);
        record("batchnorm", &[c3.out_maps, c3.h, c3.w], z3.len());
        let mut d3 = vec![0.0; b * p3.out_len()];
        let mut argmax3 = if want_cache { vec![0u32; d3.len()] } else { Vec::new() };
        for s in 0..b {
            p3.forward(
                &z3[s * p3.in_len()..(s + 1) * p3.in_len()],
                &mut d3[s * p3.out_len()..(s + 1) * p3.out_len()],
                want_cache.then(|| &mut argmax3[s * p3.out_len()..(s + 1) * p3.out_len()]),
            );
        }
        drop(z3);
        record("maxpool", &[p3.maps, p3.out_h(), p3.out_w()], d3.len());
        apply_dropout(&mut d3, mode, 3, drop_p);
        record("dropout", &[p3.maps, p3.out_h(), p3.out_w()], d3.len());
        record("flatten", &[l.dense_in], d3.len());

        // block 4
        let wd = &p[l.wd.clone()];
        let bd = p[l.bd.start];
        let out: Vec<f64> = d3.chunks_exact(l.dense_in).map(|f| dot(wd, f) + bd).collect();
        record("dense", &[1], out.len());

        let cache = want_cache.then(|| Cache {
            xhat1,
            d1,
            xhat2,
            argmax2,
            d2,
            xhat3,
            argmax3,
            d3,
            stats: stats.expect("train mode collects statistics"),
        });
        (out, cache)
    }

    /// Train-mode mean squared error and its gradient with respect to every
    /// trainable parameter. Does not touch running statistics.
    pub fn loss_and_grad(&self, x: &[f64], y: &[f64], dropout_key: u64) -> Result<(f64, Vec<f64>)> {
        let (loss, grad, _) = self.loss_grad_stats(x, y, dropout_key)?;
        Ok((loss, grad))
    }

    /// Train-mode mean squared error without the gradient.
    pub fn train_loss(&self, x: &[f64], y: &[f64], dropout_key: u64) -> Result<f64> {
        let out = self.forward(x, Mode::Train { dropout_key })?;
        if out.len() != y.len() {
            return Err(Error::Shape(format!("{} targets for {} samples", y.len(), out.len())));
        }
        Ok(out.iter().zip(y).map(|(o, t)| (o - t) * (o - t)).sum::<f64>() / y.len() as f64)
    }

    fn loss_grad_stats(&self, x: &[f64], y: &[f64], dropout_key: u64) -> Result<(f64, Vec<f64>, BatchStats)> {
        let b = self.check_batch(x)?;
        if b != y.len() {
            return Err(Error::Shape(format!("{} targets for {} samples", y.len(), b)));
        }
        if b < 2 {
            return Err(invalid_arg!("train-mode batch norm needs at least 2 samples"));
        }
        let mode = Mode::Train { dropout_key };
        let (out, cache) = self.forward_impl(x, b, mode, true, None);
        let cache = cache.expect("cache requested");
        let l = &self.layout;
        let p = &self.params;
        let drop_p = self.cfg.dropout_p;
        let (c1, c2, c3) = (l.conv1, l.conv2, l.conv3);
        let (p2, p3) = (l.pool2, l.pool3);
        let mut g = vec![0.0; l.n_params];

        let loss = out.iter().zip(y).map(|(o, t)| (o - t) * (o - t)).sum::<f64>() / b as f64;
        let dout: Vec<f64> = out.iter().zip(y).map(|(o, t)| 2.0 * (o - t) / b as f64).collect();

        // dense
        let mut dd3 = vec![0.0; cache.d3.len()];
        {
            let wd = &p[l.wd.clone()];
            let (gw, rest) = g[l.wd.start..].split_at_mut(l.dense_in);
            for (s, &go) in dout.iter().enumerate() {
                let feats = &cache.d3[s * l.dense_in..(s + 1) * l.dense_in];
                ops::axpy(go, feats, gw);
                ops::axpy(go, wd, &mut dd3[s * l.dense_in..(s + 1) * l.dense_in]);
            }
            rest[0] += dout.iter().sum::<f64>();
        }

        let undo_dropout = |d: &mut [f64], layer: u64| {
            if drop_p > 0.0 {
                for (i, v) in d.iter_mut().enumerate() {
                    *v *= keep_scale(dropout_key, layer, i, drop_p);
                }
            }
        };

        // block 3
        undo_dropout(&mut dd3, 3);
        let mut dz3 = vec![0.0; b * c3.out_len()];
        for s in 0..b {
            p3.backward(
                &dd3[s * p3.out_len()..(s + 1) * p3.out_len()],
                &cache.argmax3[s * p3.out_len()..(s + 1) * p3.out_len()],
                &mut dz3[s * p3.in_len()..(s + 1) * p3.in_len()],
            );
        }
        {
            let (gg, gb) = split_pair(&mut g, &l.g3, &l.be3);
            bn_backward(
                &mut dz3,
                &cache.xhat3,
                b,
                c3.out_maps,
                c3.h * c3.w,
                &p[l.g3.clone()],
                &cache.stats.var[2],
                gg,
                gb,
            );
        }
        let mut dd2 = vec![0.0; cache.d2.len()];
        {
            let (gw, gb) = split_pair(&mut g, &l.w3, &l.b3);
            for s in 0..b {
                c3.backward(
                    &cache.d2[s * c3.in_len()..(s + 1) * c3.in_len()],
                    &p[l.w3.clone()],
                    &dz3[s * c3.out_len()..(s + 1) * c3.out_len()],
                    gw,
                    gb,
                    Some(&mut dd2[s * c3.in_len()..(s + 1) * c3.in_len()]),
                );
            }
        }
        drop(dz3);

        // block 2
        undo_dropout(&mut dd2, 2);
        let mut dz2 = vec![0.0; b * c2.out_len()];
        for s in 0..b {
            p2.backward(
                &dd2[s * p2.out_len()..(s + 1) * p2.out_len()],
                &cache.argmax2[s * p2.out_len()..(s + 1) * p2.out_len()],
                &mut dz2[s * p2.in_len()..(s + 1) * p2.in_len()],
            );
        }
        {
            let (gg, gb) = split_pair(&mut g, &l.g2, &l.be2);
            bn_backward(
                &mut dz2,
                &cache.xhat2,
                b,
                c2.out_maps,
                c2.h * c2.w,
                &p[l.g2.clone()],
                &cache.stats.var[1],
                gg,
                gb,
            );
        }
        let mut dd1 = vec![0.0; cache.d1.len()];
        {
            let (gw, gb) = split_pair(&mut g, &l.w2, &l.b2);
            for s in 0..b {
                c2.backward(
                    &cache.d1[s * c2.in_len()..(s + 1) * c2.in_len()],
                    &p[l.w2.clone()],
                    &dz2[s * c2.out_len()..(s + 1) * c2.out_len()],
                    gw,
                    gb,
                    Some(&mut dd1[s * c2.in_len()..(s + 1) * c2.in_len()]),
                );
            }
        }
        drop(dz2);

        // block 1
        undo_dropout(&mut dd1, 1);
        {
            let (gg, gb) = split_pair(&mut g, &l.g1, &l.be1);
            bn_backward(
                &mut dd1,
                &cache.xhat1,
                b,
                c1.out_maps,
                c1.w,
                &p[l.g1.clone()],
                &cache.stats.var[0],
                gg,
                gb,
            );
        }
        {
            let (gw, gb) = split_pair(&mut g, &l.w1, &l.b1);
            for s in 0..b {
                c1.backward(
                    &x[s * c1.in_len()..(s + 1) * c1.in_len()],
                    &p[l.w1.clone()],
                    &dd1[s * c1.out_len()..(s + 1) * c1.out_len()],
                    gw,
                    gb,
                    None,
                );
            }
        }
        Ok((loss, g, cache.stats))
    }

    fn update_running(&mut self, stats: &BatchStats, b: usize) {
        let mut off = 0;
        for (layer, (maps, plane)) in self.layout.bn_dims().into_iter().enumerate() {
            let n = (b * plane) as f64;
            let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            for k in 0..maps {
                let rm = &mut self.running[off + k];
                *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * stats.mean[layer][k];
                let rv = &mut self.running[off + maps + k];
                *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * stats.var[layer][k] * unbias;
            }
            off += 2 * maps;
        }
    }

    fn all_finite(&self) -> bool {
        self.params.iter().chain(&self.running).all(|v| v.is_finite())
    }
}

/// Two disjoint mutable sub-slices of the gradient; `a` precedes `b`.
fn split_pair<'g>(g: &'g mut [f64], a: &Range<usize>, b: &Range<usize>) -> (&'g mut [f64], &'g mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = g.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}
