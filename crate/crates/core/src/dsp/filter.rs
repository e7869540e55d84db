use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{invalid_arg, Result};

/// One second-order section, `b0 + b1 z^-1 + b2 z^-2` over `1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        let num = self.b[0] + z_inv * self.b[1] + z2 * self.b[2];
        let den = 1.0 + z_inv * self.a[0] + z2 * self.a[1];
        num / den
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandPass {
    pub sections: Vec<Biquad>,
    pub fs_hz: f64,
    /// Total filter order (twice the prototype order).
    pub order: usize,
}

impl BandPass {
    /// Digital Butterworth band-pass with a `prototype_order`-pole low-pass
    /// prototype, unit gain at the geometric centre of the pre-warped band.
    pub fn butterworth(prototype_order: usize, lo_hz: f64, hi_hz: f64, fs_hz: f64) -> Result<Self> {
        if prototype_order == 0 {
            return Err(invalid_arg!("filter order must be >= 1"));
        }
        if !(lo_hz > 0.0 && lo_hz < hi_hz && hi_hz < fs_hz / 2.0) {
            return Err(invalid_arg!(
                "band-pass edges must satisfy 0 < lo < hi < fs/2 (lo={lo_hz}, hi={hi_hz}, fs={fs_hz})"
            ));
        }
        let n = prototype_order;
        let w1 = (PI * lo_hz / fs_hz).tan();
        let w2 = (PI * hi_hz / fs_hz).tan();
        let bw = w2 - w1;
        let w0_sq = w1 * w2;

        let mut poles = Vec::with_capacity(2 * n);
        for k in 0..n {
            let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
            let p = Complex64::from_polar(1.0, theta);
            let pb = p * bw;
            let disc = (pb * pb - 4.0 * w0_sq).sqrt();
            for s in [(pb + disc) / 2.0, (pb - disc) / 2.0] {
                poles.push((1.0 + s) / (1.0 - s));
            }
        }

        // Conjugate pairs first (upper half plane representative), then real poles two at a time.
        let mut sections = Vec::with_capacity(n);
        let mut real: Vec<f64> = Vec::new();
        for z in &poles {
            if z.im > 1e-12 {
                sections.push(Biquad {
                    b: [1.0, 0.0, -1.0],
                    a: [-2.0 * z.re, z.norm_sqr()],
                });
            } else if z.im.abs() <= 1e-12 {
                real.push(z.re);
            }
        }
        real.sort_by(|a, b| a.total_cmp(b));
        for pair in real.chunks(2) {
            let (p, q) = (pair[0], *pair.get(1).unwrap_or(&0.0));
            sections.push(Biquad {
                b: [1.0, 0.0, -1.0],
                a: [-(p + q), p * q],
            });
        }
        debug_assert_eq!(sections.len(), n);

        let mut filter = Self {
            sections,
            fs_hz,
            order: 2 * n,
        };
        let f0 = fs_hz / PI * w0_sq.sqrt().atan();
        let g = filter.response(f0).norm();
        for b in filter.sections[0].b.iter_mut() {
            *b /= g;
        }
        Ok(filter)
    }

    /// Complex single-pass frequency response.
    pub fn response(&self, f_hz: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * f_hz / self.fs_hz);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    /// Magnitude of the forward-backward (zero-phase) response, `|H|^2`.
    pub fn zero_phase_gain(&self, f_hz: f64) -> f64 {
        self.response(f_hz).norm_sqr()
    }

    /// Samples until the slowest pole has decayed to 1e-6 of its start value.
    pub fn settle_len(&self) -> usize {
        let r = self
            .sections
            .iter()
            .map(|s| {
                // roots of z^2 + a1 z + a2; for complex pairs |z|^2 = a2
                let disc = s.a[0] * s.a[0] - 4.0 * s.a[1];
                if disc < 0.0 {
                    s.a[1].sqrt()
                } else {
                    let sq = disc.sqrt();
                    ((-s.a[0] + sq) / 2.0).abs().max(((-s.a[0] - sq) / 2.0).abs())
                }
            })
            .fold(0.0_f64, f64::max);
        if r <= 0.0 {
            return 1;
        }
        ((1e-6_f64).ln() / r.ln()).ceil().max(1.0) as usize
    }

    /// Causal cascade filtering in place (transposed direct form II).
    pub fn filter_in_place(&self, x: &mut [f64]) {
        for s in &self.sections {
            let [b0, b1, b2] = s.b;
            let [a1, a2] = s.a;
            let (mut z1, mut z2) = (0.0, 0.0);
            for v in x.iter_mut() {
                let input = *v;
                let y = b0 * input + z1;
                z1 = b1 * input - a1 * y + z2;
                z2 = b2 * input - a2 * y;
                *v = y;
            }
        }
    }

    /// Zero-phase filtering: odd-reflection padding of three settle lengths
    /// (clamped to the signal), forward pass, backward pass, crop.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = x.len();
        if n < 3 * self.order {
            return Err(invalid_arg!(
                "signal of {n} samples is shorter than 3x the filter order {}",
                self.order
            ));
        }
        let pad = (3 * self.settle_len()).min(n - 1);
        let mut buf = Vec::with_capacity(n + 2 * pad);
        let (first, last) = (x[0], x[n - 1]);
        buf.extend((1..=pad).rev().map(|k| 2.0 * first - x[k]));
        buf.extend_from_slice(x);
        buf.extend((1..=pad).map(|k| 2.0 * last - x[n - 1 - k]));
        self.filter_in_place(&mut buf);
        buf.reverse();
        self.filter_in_place(&mut buf);
        buf.reverse();
        Ok(buf[pad..pad + n].to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-form magnitude of the bilinear-transformed Butterworth band-pass:
    /// `1 / (1 + ((W^2 - W0^2) / (W B))^(2N))` with `W = tan(pi f / fs)`.
    fn analytic_gain(n: usize, lo: f64, hi: f64, fs: f64, f: f64) -> f64 {
        let t = |x: f64| (PI * x / fs).tan();
        let (w1, w2, w) = (t(lo), t(hi), t(f));
        let x = (w * w - w1 * w2) / (w * (w2 - w1));
        (1.0 / (1.0 + x.powi(2 * n as i32))).sqrt()
    }

    #[test]
    fn design_matches_closed_form_magnitude() {
        let bp = BandPass::butterworth(4, 1.0, 50.0, 500.0).unwrap();
        for f in [0.3, 1.0, 5.0, 10.0, 25.0, 49.0, 50.0, 70.0, 100.0, 200.0] {
            let got = bp.response(f).norm();
            let want = analytic_gain(4, 1.0, 50.0, 500.0, f);
            assert!((got - want).abs() < 1e-9, "f={f}: {got} vs {want}");
        }
        assert_eq!(bp.sections.len(), 4);
        assert_eq!(bp.order, 8);
    }

    #[test]
    fn odd_prototype_order_designs() {
        let bp = BandPass::butterworth(3, 2.0, 20.0, 250.0).unwrap();
        assert_eq!(bp.sections.len(), 3);
        for f in [1.0, 6.0, 30.0] {
            let got = bp.response(f).norm();
            assert!((got - analytic_gain(3, 2.0, 20.0, 250.0, f)).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_band() {
        assert!(BandPass::butterworth(4, 0.0, 50.0, 500.0).is_err());
        assert!(BandPass::butterworth(4, 30.0, 20.0, 500.0).is_err());
        assert!(BandPass::butterworth(4, 1.0, 250.0, 500.0).is_err());
    }

    #[test]
    fn short_signal_rejected() {
        let bp = BandPass::butterworth(4, 1.0, 50.0, 500.0).unwrap();
        assert!(bp.filtfilt(&[0.0; 23]).is_err());
        assert!(bp.filtfilt(&[0.0; 24]).is_ok());
    }
}
