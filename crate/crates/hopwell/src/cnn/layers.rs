//! Layer primitives: 3x3 same-padding convolution (im2col + GEMM), ReLU,
//! 2x2 max-pooling, batch normalization, inverted dropout and the linear
//! head. Forward functions return the caches their backward passes need.
//!
//! All reductions run in a fixed sequential order so a given input always
//! produces bit-identical output regardless of thread count.

use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayView3, ArrayView4, Axis, s};

use super::scalar::Scalar;

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// Unfolds one sample `(C, H, W)` into `(C*9, H*W)` columns for a 3x3
/// stride-1 pad-1 convolution, writing into `cols[.., col_offset..]`.
fn im2col_3x3<T: Scalar>(x: ArrayView3<T>, cols: &mut Array2<T>, col_offset: usize) {
    let (c_in, h, w) = x.dim();
    for c in 0..c_in {
        let plane = x.index_axis(Axis(0), c);
        let plane = plane.as_slice().expect("contiguous plane");
        for kh in 0..KERNEL {
            for kw in 0..KERNEL {
                let row_idx = c * TAPS + kh * KERNEL + kw;
                let mut row = cols.row_mut(row_idx);
                let row = row.as_slice_mut().expect("contiguous cols row");
                let dst = &mut row[col_offset..col_offset + h * w];
                // ih = oh + kh - 1, iw = ow + kw - 1; zero outside bounds
                let oh_lo = 1usize.saturating_sub(kh);
                let oh_hi = (h + 1 - kh).min(h);
                let ow_lo = 1usize.saturating_sub(kw);
                let ow_hi = (w + 1 - kw).min(w);
                if kh == 0 {
                    dst[..w].fill(T::zero());
                }
                if kh == KERNEL - 1 {
                    dst[(h - 1) * w..].fill(T::zero());
                }
                for oh in oh_lo..oh_hi {
                    let ih = oh + kh - 1;
                    let out_row = &mut dst[oh * w..(oh + 1) * w];
                    if ow_lo > 0 {
                        out_row[..ow_lo].fill(T::zero());
                    }
                    if ow_hi < w {
                        out_row[ow_hi..].fill(T::zero());
                    }
                    let src_lo = ow_lo + kw - 1;
                    let src_hi = ow_hi + kw - 1;
                    out_row[ow_lo..ow_hi]
                        .copy_from_slice(&plane[ih * w + src_lo..ih * w + src_hi]);
                }
            }
        }
    }
}

/// Folds column gradients `(C*9, H*W)` back into an input-shaped gradient,
/// accumulating overlapping taps.
fn col2im_3x3<T: Scalar>(dcols: ArrayView2<T>, col_offset: usize, dx: &mut [T], h: usize, w: usize) {
    let c_in = dcols.nrows() / TAPS;
    for c in 0..c_in {
        let dplane = &mut dx[c * h * w..(c + 1) * h * w];
        for kh in 0..KERNEL {
            for kw in 0..KERNEL {
                let row = dcols.row(c * TAPS + kh * KERNEL + kw);
                let row = row.as_slice().expect("contiguous dcols row");
                let src = &row[col_offset..col_offset + h * w];
                let oh_lo = 1usize.saturating_sub(kh);
                let oh_hi = (h + 1 - kh).min(h);
                let ow_lo = 1usize.saturating_sub(kw);
                let ow_hi = (w + 1 - kw).min(w);
                for oh in oh_lo..oh_hi {
                    let ih = oh + kh - 1;
                    let iw_base = ow_lo + kw - 1;
                    for (off, &g) in src[oh * w + ow_lo..oh * w + ow_hi].iter().enumerate() {
                        dplane[ih * w + iw_base + off] = dplane[ih * w + iw_base + off] + g;
                    }
                }
            }
        }
    }
}

pub struct ConvCache<T: Scalar> {
    /// `(C_in*9, N*H*W)` unfolded input, reused by the weight gradient.
    pub cols: Array2<T>,
    pub in_dim: (usize, usize, usize, usize),
}

/// 3x3 stride-1 pad-1 convolution over a batch. Output spatial dims equal
/// the input's.
pub fn conv_forward<T: Scalar>(
    x: ArrayView4<T>,
    weight: &Array4<T>,
    bias: &Array1<T>,
) -> (Array4<T>, ConvCache<T>) {
    let (n, c_in, h, w) = x.dim();
    let c_out = weight.dim().0;
    let hw = h * w;
    let mut cols = Array2::<T>::zeros((c_in * TAPS, n * hw));
    for i in 0..n {
        im2col_3x3(x.index_axis(Axis(0), i), &mut cols, i * hw);
    }
    let w_mat = weight
        .view()
        .into_shape_with_order((c_out, c_in * TAPS))
        .expect("standard-layout weight");
    let out_mat = w_mat.dot(&cols); // (C_out, N*HW)
    let mut y = Array4::<T>::zeros((n, c_out, h, w));
    for i in 0..n {
        let src = out_mat.slice(s![.., i * hw..(i + 1) * hw]);
        let mut dst = y.index_axis_mut(Axis(0), i);
        let dst = dst.as_slice_mut().expect("contiguous output sample");
        for co in 0..c_out {
            let b = bias[co];
            let src_row = src.row(co);
            let src_row = src_row.as_slice().expect("contiguous gemm row");
            for (d, &v) in dst[co * hw..(co + 1) * hw].iter_mut().zip(src_row) {
                *d = v + b;
            }
        }
    }
    (
        y,
        ConvCache {
            cols,
            in_dim: (n, c_in, h, w),
        },
    )
}

pub struct ConvGrads<T: Scalar> {
    pub dweight: Array4<T>,
    pub dbias: Array1<T>,
    pub dinput: Array4<T>,
}

pub fn conv_backward<T: Scalar>(
    dy: ArrayView4<T>,
    weight: &Array4<T>,
    cache: &ConvCache<T>,
) -> ConvGrads<T> {
    let (n, c_out, h, w) = dy.dim();
    let (_, c_in, _, _) = weight.dim();
    let hw = h * w;
    // gather dY into (C_out, N*HW) matching the cols layout
    let mut dy_mat = Array2::<T>::zeros((c_out, n * hw));
    for i in 0..n {
        let sample = dy.index_axis(Axis(0), i);
        let sample = sample.as_slice().expect("contiguous dy sample");
        for co in 0..c_out {
            let mut row = dy_mat.row_mut(co);
            let row = row.as_slice_mut().expect("contiguous dy_mat row");
            row[i * hw..(i + 1) * hw].copy_from_slice(&sample[co * hw..(co + 1) * hw]);
        }
    }
    let dw_mat = dy_mat.dot(&cache.cols.t()); // (C_out, C_in*9)
    let dweight = dw_mat
        .into_shape_with_order((c_out, c_in, KERNEL, KERNEL))
        .expect("conv weight shape");
    let dbias = Array1::from_iter((0..c_out).map(|co| dy_mat.row(co).iter().fold(T::zero(), |a, &b| a + b)));
    let w_mat = weight
        .view()
        .into_shape_with_order((c_out, c_in * TAPS))
        .expect("standard-layout weight");
    let dcols = w_mat.t().dot(&dy_mat); // (C_in*9, N*HW)
    let (in_n, in_c, in_h, in_w) = cache.in_dim;
    debug_assert_eq!((in_n, in_h, in_w), (n, h, w));
    let mut dinput = Array4::<T>::zeros((in_n, in_c, in_h, in_w));
    for i in 0..n {
        let dst = dinput.index_axis_mut(Axis(0), i);
        let dst = dst.into_slice().expect("contiguous dinput sample");
        col2im_3x3(dcols.view(), i * hw, dst, in_h, in_w);
    }
    ConvGrads {
        dweight,
        dbias,
        dinput,
    }
}

/// ReLU in place; returns the activation mask used by the backward pass.
pub fn relu_forward<T: Scalar>(x: &mut Array4<T>) -> Vec<bool> {
    let data = x.as_slice_mut().expect("contiguous activations");
    let mut mask = vec![false; data.len()];
    for (v, m) in data.iter_mut().zip(mask.iter_mut()) {
        if *v > T::zero() {
            *m = true;
        } else {
            *v = T::zero();
        }
    }
    mask
}

pub fn relu_backward<T: Scalar>(dy: &mut Array4<T>, mask: &[bool]) {
    let data = dy.as_slice_mut().expect("contiguous gradient");
    for (v, &m) in data.iter_mut().zip(mask) {
        if !m {
            *v = T::zero();
        }
    }
}

pub struct PoolCache {
    /// Flat `h*W + w` index of each selected input element, per output cell.
    pub argmax: Vec<u32>,
    pub in_h: usize,
    pub in_w: usize,
}

/// 2x2 stride-2 max-pooling with floor semantics (odd trailing row/col is
/// dropped). Ties go to the first maximum in row-major scan order.
pub fn maxpool_forward<T: Scalar>(x: ArrayView4<T>) -> (Array4<T>, PoolCache) {
    let (n, c, h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Array4::<T>::zeros((n, c, oh, ow));
    let mut argmax = vec![0u32; n * c * oh * ow];
    let ydata = y.as_slice_mut().expect("contiguous pool output");
    let mut cell = 0usize;
    for i in 0..n {
        for ch in 0..c {
            let plane = x.slice(s![i, ch, .., ..]);
            let plane = plane.as_slice().expect("contiguous plane");
            for ph in 0..oh {
                for pw in 0..ow {
                    let (h0, w0) = (ph * 2, pw * 2);
                    let mut best = plane[h0 * w + w0];
                    let mut best_idx = (h0 * w + w0) as u32;
                    for (dh, dw) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = (h0 + dh) * w + w0 + dw;
                        if plane[idx] > best {
                            best = plane[idx];
                            best_idx = idx as u32;
                        }
                    }
                    ydata[cell] = best;
                    argmax[cell] = best_idx;
                    cell += 1;
                }
            }
        }
    }
    (
        y,
        PoolCache {
            argmax,
            in_h: h,
            in_w: w,
        },
    )
}

pub fn maxpool_backward<T: Scalar>(dy: ArrayView4<T>, cache: &PoolCache) -> Array4<T> {
    let (n, c, oh, ow) = dy.dim();
    let mut dx = Array4::<T>::zeros((n, c, cache.in_h, cache.in_w));
    let dyd = dy.as_slice().expect("contiguous pool gradient");
    let plane_len = cache.in_h * cache.in_w;
    let dxd = dx.as_slice_mut().expect("contiguous pool input gradient");
    let mut cell = 0usize;
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * plane_len;
            for _ in 0..oh * ow {
                let idx = base + cache.argmax[cell] as usize;
                dxd[idx] = dxd[idx] + dyd[cell];
                cell += 1;
            }
        }
    }
    dx
}

/// Running statistics of one batch-norm layer (updated in training mode).
#[derive(Debug, Clone)]
pub struct BnCache<T: Scalar> {
    pub xhat: Array4<T>,
    pub inv_std: Vec<T>,
    /// Per-channel batch means/unbiased vars for the running-stat update.
    pub batch_mean: Vec<T>,
    pub batch_var_unbiased: Vec<T>,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch normalization forward in training mode (batch statistics).
/// Does not touch running stats; the caller applies `batch_mean` /
/// `batch_var_unbiased` if it wants them updated.
pub fn batchnorm_forward_train<T: Scalar>(
    x: ArrayView4<T>,
    gamma: &Array1<T>,
    beta: &Array1<T>,
) -> (Array4<T>, BnCache<T>) {
    let (n, c, h, w) = x.dim();
    let count = (n * h * w) as f64;
    let eps = T::from_f64(BN_EPS);
    let mut y = Array4::<T>::zeros((n, c, h, w));
    let mut xhat = Array4::<T>::zeros((n, c, h, w));
    let mut inv_std = vec![T::zero(); c];
    let mut batch_mean = vec![T::zero(); c];
    let mut batch_var_unbiased = vec![T::zero(); c];
    for ch in 0..c {
        let mut sum = T::zero();
        for i in 0..n {
            for v in x.slice(s![i, ch, .., ..]).iter() {
                sum = sum + *v;
            }
        }
        let mean = sum / T::from_f64(count);
        let mut var_sum = T::zero();
        for i in 0..n {
            for v in x.slice(s![i, ch, .., ..]).iter() {
                let d = *v - mean;
                var_sum = var_sum + d * d;
            }
        }
        let var = var_sum / T::from_f64(count); // biased, used for normalization
        let istd = T::one() / (var + eps).sqrt();
        inv_std[ch] = istd;
        batch_mean[ch] = mean;
        batch_var_unbiased[ch] = if count > 1.0 {
            var_sum / T::from_f64(count - 1.0)
        } else {
            var
        };
        let (g, b) = (gamma[ch], beta[ch]);
        for i in 0..n {
            let xs = x.slice(s![i, ch, .., ..]);
            let mut xh = xhat.slice_mut(s![i, ch, .., ..]);
            let mut ys = y.slice_mut(s![i, ch, .., ..]);
            ndarray::Zip::from(&mut ys).and(&mut xh).and(&xs).for_each(|yy, hh, &xx| {
                let norm = (xx - mean) * istd;
                *hh = norm;
                *yy = g * norm + b;
            });
        }
    }
    (
        y,
        BnCache {
            xhat,
            inv_std,
            batch_mean,
            batch_var_unbiased,
        },
    )
}

/// Batch normalization in evaluation mode: uses running statistics only.
pub fn batchnorm_forward_eval<T: Scalar>(
    x: ArrayView4<T>,
    gamma: &Array1<T>,
    beta: &Array1<T>,
    running_mean: &Array1<T>,
    running_var: &Array1<T>,
) -> Array4<T> {
    let (n, c, h, w) = x.dim();
    let eps = T::from_f64(BN_EPS);
    let mut y = Array4::<T>::zeros((n, c, h, w));
    for ch in 0..c {
        let istd = T::one() / (running_var[ch] + eps).sqrt();
        let (g, b, m) = (gamma[ch], beta[ch], running_mean[ch]);
        for i in 0..n {
            let xs = x.slice(s![i, ch, .., ..]);
            let mut ys = y.slice_mut(s![i, ch, .., ..]);
            ndarray::Zip::from(&mut ys).and(&xs).for_each(|yy, &xx| {
                *yy = g * (xx - m) * istd + b;
            });
        }
    }
    y
}

pub struct BnGrads<T: Scalar> {
    pub dgamma: Array1<T>,
    pub dbeta: Array1<T>,
    pub dinput: Array4<T>,
}

pub fn batchnorm_backward<T: Scalar>(
    dy: ArrayView4<T>,
    gamma: &Array1<T>,
    cache: &BnCache<T>,
) -> BnGrads<T> {
    let (n, c, h, w) = dy.dim();
    let count = T::from_f64((n * h * w) as f64);
    let mut dgamma = Array1::<T>::zeros(c);
    let mut dbeta = Array1::<T>::zeros(c);
    let mut dx = Array4::<T>::zeros((n, c, h, w));
    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for i in 0..n {
            let dys = dy.slice(s![i, ch, .., ..]);
            let xhs = cache.xhat.slice(s![i, ch, .., ..]);
            ndarray::Zip::from(&dys).and(&xhs).for_each(|&g, &xh| {
                sum_dy = sum_dy + g;
                sum_dy_xhat = sum_dy_xhat + g * xh;
            });
        }
        dgamma[ch] = sum_dy_xhat;
        dbeta[ch] = sum_dy;
        let scale = gamma[ch] * cache.inv_std[ch] / count;
        for i in 0..n {
            let dys = dy.slice(s![i, ch, .., ..]);
            let xhs = cache.xhat.slice(s![i, ch, .., ..]);
            let mut dxs = dx.slice_mut(s![i, ch, .., ..]);
            ndarray::Zip::from(&mut dxs).and(&dys).and(&xhs).for_each(|out, &g, &xh| {
                *out = scale * (count * g - sum_dy - xh * sum_dy_xhat);
            });
        }
    }
    BnGrads {
        dgamma,
        dbeta,
        dinput: dx,
    }
}

/// Inverted dropout: multiplies by `1/keep` where kept, `0` where dropped,
/// so evaluation needs no rescaling. Returns the multiplier mask.
pub fn dropout_forward<T: Scalar, R: rand::Rng>(
    x: &mut Array4<T>,
    rate: f64,
    rng: &mut R,
) -> Vec<T> {
    let keep = 1.0 - rate;
    let scale = T::from_f64(1.0 / keep);
    let data = x.as_slice_mut().expect("contiguous activations");
    let mut mask = Vec::with_capacity(data.len());
    for v in data.iter_mut() {
        let keep_it = rng.random::<f64>() < keep;
        let m = if keep_it { scale } else { T::zero() };
        *v = *v * m;
        mask.push(m);
    }
    mask
}

pub fn dropout_apply_mask<T: Scalar>(x: &mut Array4<T>, mask: &[T]) {
    let data = x.as_slice_mut().expect("contiguous activations");
    for (v, &m) in data.iter_mut().zip(mask) {
        *v = *v * m;
    }
}

/// Linear head: `y = x · W + b` with `x: (N, D)`, `W: (D, K)`.
pub fn linear_forward<T: Scalar>(x: &Array2<T>, weight: &Array2<T>, bias: &Array1<T>) -> Array2<T> {
    let mut y = x.dot(weight);
    for mut row in y.rows_mut() {
        ndarray::Zip::from(&mut row).and(bias).for_each(|v, &b| *v = *v + b);
    }
    y
}

pub struct LinearGrads<T: Scalar> {
    pub dweight: Array2<T>,
    pub dbias: Array1<T>,
    pub dinput: Array2<T>,
}

pub fn linear_backward<T: Scalar>(
    dy: &Array2<T>,
    x: &Array2<T>,
    weight: &Array2<T>,
) -> LinearGrads<T> {
    let dweight = x.t().dot(dy);
    let dbias = dy.sum_axis(Axis(0));
    let dinput = dy.dot(&weight.t());
    LinearGrads {
        dweight,
        dbias,
        dinput,
    }
}
