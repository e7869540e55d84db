pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn sum(x: &[f64]) -> f64 {
    dot_ones(x)
}

fn dot_ones(x: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let c = x.chunks_exact(4);
    let r = c.remainder();
    for v in c {
        acc[0] += v[0];
        acc[1] += v[1];
        acc[2] += v[2];
        acc[3] += v[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + r.iter().sum::<f64>()
}

/// Geometry of a stride-1 2-D convolution with zero padding that keeps the
/// output the same size as the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub in_maps: usize,
    pub out_maps: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeom {
    /// Padding before the first row/column; the remainder goes after.
    pub fn pad_top(&self) -> usize {
        (self.kh - 1) / 2
    }
    pub fn pad_left(&self) -> usize {
        (self.kw - 1) / 2
    }
    pub fn in_len(&self) -> usize {
        self.in_maps * self.h * self.w
    }
    pub fn out_len(&self) -> usize {
        self.out_maps * self.h * self.w
    }
    pub fn weight_len(&self) -> usize {
        self.out_maps * self.in_maps * self.kh * self.kw
    }

    /// Input row feeding output row `r` through kernel row `a`, if in range.
    #[inline]
    fn src_row(&self, r: usize, a: usize) -> Option<usize> {
        let rr = (r + a).checked_sub(self.pad_top())?;
        (rr < self.h).then_some(rr)
    }

    /// Output column range `[lo, hi)` that reads a valid input column through
    /// kernel column `b`; the input column is `t + b - pad_left`.
    #[inline]
    fn col_span(&self, b: usize) -> (usize, usize, isize) {
        let shift = b as isize - self.pad_left() as isize;
        let lo = (-shift).max(0) as usize;
        let hi = (self.w as isize - shift).min(self.w as isize).max(0) as usize;
        (lo, hi.max(lo), shift)
    }

    pub fn forward(&self, input: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
        let (h, w) = (self.h, self.w);
        let plane = h * w;
        for o in 0..self.out_maps {
            let out_o = &mut out[o * plane..(o + 1) * plane];
            out_o.fill(bias[o]);
            for i in 0..self.in_maps {
                let in_i = &input[i * plane..(i + 1) * plane];
                for a in 0..self.kh {
                    for r in 0..h {
                        let Some(rr) = self.src_row(r, a) else { continue };
                        let src = &in_i[rr * w..(rr + 1) * w];
                        let dst = &mut out_o[r * w..(r + 1) * w];
                        for b in 0..self.kw {
                            let wt = weight[((o * self.in_maps + i) * self.kh + a) * self.kw + b];
                            let (lo, hi, shift) = self.col_span(b);
                            if lo < hi {
                                let s = (lo as isize + shift) as usize;
                                axpy(wt, &src[s..s + (hi - lo)], &mut dst[lo..hi]);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Accumulates weight/bias gradients and, if requested, the input gradient.
    pub fn backward(
        &self,
        input: &[f64],
        weight: &[f64],
        dout: &[f64],
        dweight: &mut [f64],
        dbias: &mut [f64],
        mut dinput: Option<&mut [f64]>,
    ) {
        let (h, w) = (self.h, self.w);
        let plane = h * w;
        for o in 0..self.out_maps {
            let dout_o = &dout[o * plane..(o + 1) * plane];
            dbias[o] += sum(dout_o);
            for i in 0..self.in_maps {
                let in_i = &input[i * plane..(i + 1) * plane];
                for a in 0..self.kh {
                    for b in 0..self.kw {
                        let widx = ((o * self.in_maps + i) * self.kh + a) * self.kw + b;
                        let (lo, hi, shift) = self.col_span(b);
                        if lo >= hi {
                            continue;
                        }
                        let s = (lo as isize + shift) as usize;
                        let n = hi - lo;
                        let wt = weight[widx];
                        let mut g = 0.0;
                        for r in 0..h {
                            let Some(rr) = self.src_row(r, a) else { continue };
                            let drow = &dout_o[r * w + lo..r * w + hi];
                            g += dot(drow, &in_i[rr * w + s..rr * w + s + n]);
                            if let Some(din) = dinput.as_deref_mut() {
                                let off = i * plane + rr * w + s;
                                axpy(wt, drow, &mut din[off..off + n]);
                            }
                        }
                        dweight[widx] += g;
                    }
                }
            }
        }
    }
}

/// Non-overlapping max pooling with floor semantics on `[map][h][w]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct PoolGeom {
    pub maps: usize,
    pub h: usize,
    pub w: usize,
    pub ph: usize,
    pub pw: usize,
}

impl PoolGeom {
    pub fn out_h(&self) -> usize {
        self.h / self.ph
    }
    pub fn out_w(&self) -> usize {
        self.w / self.pw
    }
    pub fn in_len(&self) -> usize {
        self.maps * self.h * self.w
    }
    pub fn out_len(&self) -> usize {
        self.maps * self.out_h() * self.out_w()
    }

    /// Writes pooled values and, if given, the flat input index of each maximum
    /// (first occurrence wins on ties).
    pub fn forward(&self, input: &[f64], out: &mut [f64], mut argmax: Option<&mut [u32]>) {
        let (oh, ow) = (self.out_h(), self.out_w());
        for m in 0..self.maps {
            for r in 0..oh {
                for c in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for a in 0..self.ph {
                        let row = (m * self.h + r * self.ph + a) * self.w + c * self.pw;
                        for (b, &v) in input[row..row + self.pw].iter().enumerate() {
                            if v > best {
                                best = v;
                                best_idx = row + b;
                            }
                        }
                    }
                    let k = (m * oh + r) * ow + c;
                    out[k] = best;
                    if let Some(am) = argmax.as_deref_mut() {
                        am[k] = best_idx as u32;
                    }
                }
            }
        }
    }

    pub fn backward(&self, dout: &[f64], argmax: &[u32], dinput: &mut [f64]) {
        dinput.fill(0.0);
        for (g, &idx) in dout.iter().zip(argmax) {
            dinput[idx as usize] += g;
        }
    }
}

/// Counter-based uniform draw in [0, 1): a splitmix64 finalizer over the key
/// and position, so dropout masks do not depend on evaluation order.
pub(crate) fn hash_uniform(key: u64, layer: u64, index: u64) -> f64 {
    let mut z = key
        .wrapping_add(layer.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Mixes two words into a well-distributed seed.
pub fn splitmix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..11).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
        assert_eq!(sum(&a), a.iter().sum::<f64>());
    }

    #[test]
    fn same_padding_split() {
        let g = ConvGeom {
            in_maps: 1,
            out_maps: 4,
            h: 16,
            w: 100,
            kh: 2,
            kw: 32,
        };
        assert_eq!((g.pad_top(), g.pad_left()), (0, 15));
        let g = ConvGeom {
            in_maps: 4,
            out_maps: 4,
            h: 8,
            w: 25,
            kh: 8,
            kw: 4,
        };
        assert_eq!((g.pad_top(), g.pad_left()), (3, 1));
    }

    #[test]
    fn pool_floor_and_argmax() {
        let p = PoolGeom {
            maps: 1,
            h: 2,
            w: 9,
            ph: 2,
            pw: 4,
        };
        let x: Vec<f64> = (0..18).map(|v| v as f64).collect();
        let mut out = vec![0.0; p.out_len()];
        let mut am = vec![0u32; p.out_len()];
        p.forward(&x, &mut out, Some(&mut am));
        assert_eq!(out, vec![12.0, 16.0]);
        assert_eq!(am, vec![12, 16]);
    }

    #[test]
    fn hash_uniform_is_spread() {
        let m: f64 = (0..10_000).map(|i| hash_uniform(7, 1, i)).sum::<f64>() / 10_000.0;
        assert!((m - 0.5).abs() < 0.01);
        assert_eq!(hash_uniform(1, 2, 3), hash_uniform(1, 2, 3));
    }
}
