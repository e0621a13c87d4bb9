//! Convolution, rectification, and pooling on channel-major `(C, N, H, W)`
//! activations, with their backward passes.

use ndarray::{Array1, Array2, Array4, Axis};

/// Unfolds 3x3 neighbourhoods (zero padding 1) into a `(C * 9, N * H * W)`
/// matrix so a convolution becomes one matrix product.
pub fn im2col(x: &Array4<f64>) -> Array2<f64> {
    let (c, n, h, w) = x.dim();
    let x = x.as_standard_layout();
    let src = x.as_slice().unwrap();
    let cols = n * h * w;
    let mut out = vec![0.0; c * 9 * cols];
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * cols;
                for ni in 0..n {
                    let plane = (ci * n + ni) * h * w;
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let dst_base = row + ni * h * w + y * w;
                        let src_base = plane + sy as usize * w;
                        // valid x range for this horizontal offset
                        let (x0, x1) = match kx {
                            0 => (1, w),
                            1 => (0, w),
                            _ => (0, w.saturating_sub(1)),
                        };
                        for xx in x0..x1 {
                            out[dst_base + xx] = src[src_base + xx + kx - 1];
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((c * 9, cols), out).unwrap()
}

/// Adjoint of [`im2col`]: folds column gradients back to input positions.
pub fn col2im(col: &Array2<f64>, dim: (usize, usize, usize, usize)) -> Array4<f64> {
    let (c, n, h, w) = dim;
    let col = col.as_standard_layout();
    let src = col.as_slice().unwrap();
    let cols = n * h * w;
    let mut out = vec![0.0; c * n * h * w];
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * cols;
                for ni in 0..n {
                    let plane = (ci * n + ni) * h * w;
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src_base = row + ni * h * w + y * w;
                        let dst_base = plane + sy as usize * w;
                        let (x0, x1) = match kx {
                            0 => (1, w),
                            1 => (0, w),
                            _ => (0, w.saturating_sub(1)),
                        };
                        for xx in x0..x1 {
                            out[dst_base + xx + kx - 1] += src[src_base + xx];
                        }
                    }
                }
            }
        }
    }
    Array4::from_shape_vec(dim, out).unwrap()
}

/// 3x3 convolution with padding 1; returns the output and the unfolded input.
pub fn conv_forward(x: &Array4<f64>, weight: &Array2<f64>) -> (Array4<f64>, Array2<f64>) {
    let (_, n, h, w) = x.dim();
    let col = im2col(x);
    let out = weight.dot(&col);
    let out = out
        .into_shape_with_order((weight.nrows(), n, h, w))
        .unwrap();
    (out, col)
}

/// Gradients of a convolution: `(d_weight, d_input)`; the input
/// gradient is skipped when not needed.
pub fn conv_backward(
    grad_out: &Array4<f64>,
    col: &Array2<f64>,
    weight: &Array2<f64>,
    input_dim: (usize, usize, usize, usize),
    need_input: bool,
) -> (Array2<f64>, Option<Array4<f64>>) {
    let cout = grad_out.dim().0;
    let g = grad_out.as_standard_layout();
    let g = g.view().into_shape_with_order((cout, col.ncols())).unwrap();
    let dw = g.dot(&col.t());
    let dx = need_input.then(|| col2im(&weight.t().dot(&g), input_dim));
    (dw, dx)
}

/// Variance floor of batch normalization.
pub const BN_EPS: f64 = 1e-5;

/// Per-channel mean and biased variance of `(C, N, H, W)` activations.
pub fn channel_moments(x: &Array4<f64>) -> (Array1<f64>, Array1<f64>) {
    let c = x.dim().0;
    let mut mean = Array1::zeros(c);
    let mut var = Array1::zeros(c);
    for (ci, plane) in x.outer_iter().enumerate() {
        let m = plane.mean().unwrap_or(0.0);
        mean[ci] = m;
        var[ci] = plane.iter().map(|v| (v - m).powi(2)).sum::<f64>() / plane.len().max(1) as f64;
    }
    (mean, var)
}

/// Normalizes each channel with the given moments and applies the affine
/// map; returns the output, the normalized input, and `1 / sqrt(var + eps)`.
pub fn batch_norm_forward(
    x: &Array4<f64>,
    mean: &Array1<f64>,
    var: &Array1<f64>,
    scale: &Array1<f64>,
    shift: &Array1<f64>,
) -> (Array4<f64>, Array4<f64>, Array1<f64>) {
    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
    let mut xhat = x.clone();
    let mut out = x.clone();
    for ci in 0..x.dim().0 {
        let (m, s) = (mean[ci], inv_std[ci]);
        let (g, b) = (scale[ci], shift[ci]);
        ndarray::Zip::from(xhat.index_axis_mut(Axis(0), ci))
            .and(out.index_axis_mut(Axis(0), ci))
            .for_each(|h, o| {
                *h = (*h - m) * s;
                *o = g * *h + b;
            });
    }
    (out, xhat, inv_std)
}

/// Gradients of batch normalization: `(d_input, d_scale, d_shift)`.
///
/// With `batch_stats` the moments are functions of the batch and the input
/// gradient includes their contribution; otherwise they are constants.
pub fn batch_norm_backward(
    grad: &Array4<f64>,
    xhat: &Array4<f64>,
    scale: &Array1<f64>,
    inv_std: &Array1<f64>,
    batch_stats: bool,
) -> (Array4<f64>, Array1<f64>, Array1<f64>) {
    let c = grad.dim().0;
    let mut d_scale = Array1::zeros(c);
    let mut d_shift = Array1::zeros(c);
    let mut dx = grad.clone();
    for ci in 0..c {
        let g = grad.index_axis(Axis(0), ci);
        let h = xhat.index_axis(Axis(0), ci);
        let sum_g = g.sum();
        let sum_gh = (&g * &h).sum();
        d_shift[ci] = sum_g;
        d_scale[ci] = sum_gh;
        let k = scale[ci] * inv_std[ci];
        let m = g.len() as f64;
        let mut d = dx.index_axis_mut(Axis(0), ci);
        if batch_stats {
            ndarray::Zip::from(&mut d)
                .and(&h)
                .for_each(|v, &hv| *v = k * (*v - sum_g / m - hv * sum_gh / m));
        } else {
            d.mapv_inplace(|v| k * v);
        }
    }
    (dx, d_scale, d_shift)
}

pub fn relu_inplace(x: &mut Array4<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Zeroes gradient entries where the rectified output was zero.
pub fn relu_backward(grad: &mut Array4<f64>, output: &Array4<f64>) {
    ndarray::Zip::from(grad).and(output).for_each(|g, &o| {
        if o <= 0.0 {
            *g = 0.0;
        }
    });
}

/// 2x2 average pooling with stride 2 (even sides required).
pub fn avg_pool(x: &Array4<f64>) -> Array4<f64> {
    let (c, n, h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array4::zeros((c, n, oh, ow));
    for ((ci, ni, y, xx), v) in out.indexed_iter_mut() {
        *v = 0.25
            * (x[[ci, ni, 2 * y, 2 * xx]]
                + x[[ci, ni, 2 * y, 2 * xx + 1]]
                + x[[ci, ni, 2 * y + 1, 2 * xx]]
                + x[[ci, ni, 2 * y + 1, 2 * xx + 1]]);
    }
    out
}

pub fn avg_pool_backward(grad: &Array4<f64>) -> Array4<f64> {
    let (c, n, oh, ow) = grad.dim();
    let mut out = Array4::zeros((c, n, oh * 2, ow * 2));
    for ((ci, ni, y, x), v) in out.indexed_iter_mut() {
        *v = 0.25 * grad[[ci, ni, y / 2, x / 2]];
    }
    out
}

/// Mean over the spatial axes: `(C, N, H, W)` to `(N, C)`.
pub fn global_avg_pool(x: &Array4<f64>) -> Array2<f64> {
    let (c, n, h, w) = x.dim();
    let flat = x.as_standard_layout();
    let flat = flat.view().into_shape_with_order((c, n, h * w)).unwrap();
    flat.mean_axis(Axis(2))
        .unwrap()
        .reversed_axes()
        .as_standard_layout()
        .to_owned()
}

pub fn global_avg_pool_backward(grad: &Array2<f64>, hw: (usize, usize)) -> Array4<f64> {
    let (n, c) = grad.dim();
    let scale = 1.0 / (hw.0 * hw.1) as f64;
    Array4::from_shape_fn((c, n, hw.0, hw.1), |(ci, ni, _, _)| grad[[ni, ci]] * scale)
}
