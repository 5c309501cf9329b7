//! Strided 1-D convolution kernels on channels-last buffers.
//!
//! A convolution maps a "long" signal `(batch, long_len, c_long)` to a "short"
//! one `(batch, short_len, c_short)` with weights laid out as
//! `(width, c_long, c_short)`. The transposed convolution is the exact adjoint
//! of that map, so both directions share the same geometry and the same three
//! kernels: long→short, short→long and the weight gradient.
//!
//! Each direction is an im2col/col2im unrolling around one matrix product per
//! example. Batches run in parallel; every reduction happens in a fixed order,
//! so results do not depend on the thread count.

use rayon::prelude::*;

use super::Scalar;

/// Output length and left padding for "same" convolution:
/// `out = ceil(len / stride)` and total padding `(out - 1)·stride + width - len`
/// split with the smaller half on the left.
pub fn same_padding(len: usize, width: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let total = ((out.saturating_sub(1)) * stride + width).saturating_sub(len);
    (out, total / 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub long_len: usize,
    pub short_len: usize,
    pub c_long: usize,
    pub c_short: usize,
    pub width: usize,
    pub stride: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    pub fn new(batch: usize, long_len: usize, c_long: usize, c_short: usize, width: usize, stride: usize) -> Self {
        let (short_len, pad_left) = same_padding(long_len, width, stride);
        Self { batch, long_len, short_len, c_long, c_short, width, stride, pad_left }
    }

    /// Taps `(k, p)` that land inside the long signal for short position `t`.
    #[inline]
    fn taps(&self, t: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let base = (t * self.stride) as isize - self.pad_left as isize;
        (0..self.width).filter_map(move |k| {
            let p = base + k as isize;
            (p >= 0 && (p as usize) < self.long_len).then_some((k, p as usize))
        })
    }

    pub fn weight_len(&self) -> usize {
        self.width * self.c_long * self.c_short
    }
}

/// Unrolls one example into `(short_len, width·c_long)` rows of taps, with
/// zeros where a tap falls in the padding.
fn im2col<T: Scalar>(g: &ConvGeometry, x_b: &[T], col: &mut [T]) {
    let row_len = g.width * g.c_long;
    col.fill(T::zero());
    for (t, row) in col.chunks_exact_mut(row_len).enumerate() {
        for (k, p) in g.taps(t) {
            row[k * g.c_long..(k + 1) * g.c_long].copy_from_slice(&x_b[p * g.c_long..(p + 1) * g.c_long]);
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds tap rows back onto the long signal.
fn col2im_add<T: Scalar>(g: &ConvGeometry, col: &[T], out_b: &mut [T]) {
    let row_len = g.width * g.c_long;
    for (t, row) in col.chunks_exact(row_len).enumerate() {
        for (k, p) in g.taps(t) {
            let src = &row[k * g.c_long..(k + 1) * g.c_long];
            out_b[p * g.c_long..(p + 1) * g.c_long].iter_mut().zip(src).for_each(|(o, &v)| *o += v);
        }
    }
}

/// Cross-correlation, long → short, plus optional bias.
pub fn conv_long_to_short<T: Scalar>(g: &ConvGeometry, long: &[T], weight: &[T], bias: Option<&[T]>) -> Vec<T> {
    debug_assert_eq!(long.len(), g.batch * g.long_len * g.c_long);
    debug_assert_eq!(weight.len(), g.weight_len());
    let mut out = vec![T::zero(); g.batch * g.short_len * g.c_short];
    if out.is_empty() {
        return out;
    }
    let kc = g.width * g.c_long;
    out.par_chunks_mut(g.short_len * g.c_short)
        .zip(long.par_chunks(g.long_len * g.c_long))
        .for_each_init(
            || vec![T::zero(); g.short_len * kc],
            |col, (out_b, x_b)| {
                if let Some(b) = bias {
                    out_b.chunks_exact_mut(g.c_short).for_each(|o| o.copy_from_slice(b));
                }
                im2col(g, x_b, col);
                let cs = g.c_short as isize;
                T::gemm(g.short_len, kc, g.c_short, (col, kc as isize, 1), (weight, cs, 1), T::one(), (out_b, cs, 1));
            },
        );
    out
}

/// Adjoint of [`conv_long_to_short`] (without bias), short → long, plus optional bias
/// on the long channels.
pub fn conv_short_to_long<T: Scalar>(g: &ConvGeometry, short: &[T], weight: &[T], bias: Option<&[T]>) -> Vec<T> {
    debug_assert_eq!(short.len(), g.batch * g.short_len * g.c_short);
    debug_assert_eq!(weight.len(), g.weight_len());
    let mut out = vec![T::zero(); g.batch * g.long_len * g.c_long];
    if out.is_empty() {
        return out;
    }
    let kc = g.width * g.c_long;
    out.par_chunks_mut(g.long_len * g.c_long)
        .zip(short.par_chunks(g.short_len * g.c_short))
        .for_each_init(
            || vec![T::zero(); g.short_len * kc],
            |col, (out_b, y_b)| {
                if let Some(b) = bias {
                    out_b.chunks_exact_mut(g.c_long).for_each(|row| row.copy_from_slice(b));
                }
                let cs = g.c_short as isize;
                // col = y · Wᵀ, with W read as a (width·c_long, c_short) matrix
                T::gemm(g.short_len, g.c_short, kc, (y_b, cs, 1), (weight, 1, cs), T::zero(), (col, kc as isize, 1));
                col2im_add(g, col, out_b);
            },
        );
    out
}

/// Gradient of `<short, conv(long; W)>` with respect to `W`, laid out `(width, c_long, c_short)`.
pub fn conv_weight_grad<T: Scalar>(g: &ConvGeometry, long: &[T], short: &[T]) -> Vec<T> {
    let mut gw = vec![T::zero(); g.weight_len()];
    if gw.is_empty() {
        return gw;
    }
    let kc = g.width * g.c_long;
    let mut col = vec![T::zero(); g.short_len * kc];
    let cs = g.c_short as isize;
    for b in 0..g.batch {
        let x_b = &long[b * g.long_len * g.c_long..(b + 1) * g.long_len * g.c_long];
        let y_b = &short[b * g.short_len * g.c_short..(b + 1) * g.short_len * g.c_short];
        im2col(g, x_b, &mut col);
        T::gemm(kc, g.short_len, g.c_short, (&col, 1, kc as isize), (y_b, cs, 1), T::one(), (&mut gw, cs, 1));
    }
    gw
}

/// Sum over batch and positions, per channel.
pub fn channel_sum<T: Scalar>(x: &[T], channels: usize) -> Vec<T> {
    let mut out = vec![T::zero(); channels];
    for row in x.chunks_exact(channels) {
        out.iter_mut().zip(row).for_each(|(o, &v)| *o += v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_matches_halving_ledger() {
        assert_eq!(same_padding(16384, 31, 2), (8192, 14));
        assert_eq!(same_padding(8, 31, 2), (4, 14));
        assert_eq!(same_padding(8, 1, 1), (8, 0));
        for len in 1..200 {
            for stride in 1..4 {
                assert_eq!(same_padding(len, 31, stride).0, len.div_ceil(stride));
            }
        }
    }

    /// Direct nested-loop definition of the padded strided cross-correlation.
    fn brute_conv(x: &[f64], l: usize, cin: usize, w: &[f64], width: usize, cout: usize, stride: usize) -> Vec<f64> {
        let (lo, pl) = same_padding(l, width, stride);
        let mut y = vec![0.0; lo * cout];
        for t in 0..lo {
            for co in 0..cout {
                let mut acc = 0.0;
                for k in 0..width {
                    let p = (t * stride + k) as isize - pl as isize;
                    if p < 0 || p >= l as isize {
                        continue;
                    }
                    for ci in 0..cin {
                        acc += x[p as usize * cin + ci] * w[(k * cin + ci) * cout + co];
                    }
                }
                y[t * cout + co] = acc;
            }
        }
        y
    }

    #[test]
    fn small_conv_matches_brute_force() {
        let x = super::super::Tensor::<f64>::randn(&[1, 8, 2], 1.0, 1);
        let w = super::super::Tensor::<f64>::randn(&[3, 2, 3], 1.0, 2);
        let g = ConvGeometry::new(1, 8, 2, 3, 3, 2);
        let fast = conv_long_to_short(&g, x.data(), w.data(), None);
        let slow = brute_conv(x.data(), 8, 2, w.data(), 3, 3, 2);
        assert_eq!(fast.len(), 12);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transpose_matches_scatter_loop() {
        let (l, cin, cout, width, stride) = (5, 3, 2, 5, 2);
        let y = super::super::Tensor::<f64>::randn(&[1, l, cin], 1.0, 3);
        // transposed-conv weight (width, cout, cin)
        let w = super::super::Tensor::<f64>::randn(&[width, cout, cin], 1.0, 4);
        let long_len = l * stride;
        let g = ConvGeometry::new(1, long_len, cout, cin, width, stride);
        let fast = conv_short_to_long(&g, y.data(), w.data(), None);
        let (_, pl) = same_padding(long_len, width, stride);
        let mut slow = vec![0.0; long_len * cout];
        for t in 0..l {
            for k in 0..width {
                let p = (t * stride + k) as isize - pl as isize;
                if p < 0 || p >= long_len as isize {
                    continue;
                }
                for co in 0..cout {
                    for ci in 0..cin {
                        slow[p as usize * cout + co] += y.data()[t * cin + ci] * w.data()[(k * cout + co) * cin + ci];
                    }
                }
            }
        }
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
