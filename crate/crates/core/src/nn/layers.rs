//! Batched layer kernels. Activations are `(batch, features)` matrices; conv
//! activations are flattened channels-last, `(batch, len * channels)`.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};

use super::{CONV_KERNEL, CONV_STRIDE};

pub(crate) fn dense_forward(x: ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut y = x.dot(&w.t());
    y += &b;
    y
}

/// Accumulates weight and bias gradients; returns the input gradient if asked.
pub(crate) fn dense_backward(
    x: ArrayView2<f64>,
    w: ArrayView2<f64>,
    dy: ArrayView2<f64>,
    gw: &mut ArrayViewMut2<f64>,
    gb: &mut ArrayViewMut1<f64>,
    need_dx: bool,
) -> Option<Array2<f64>> {
    general_mat_mul(1.0, &dy.t(), &x, 1.0, gw);
    *gb += &dy.sum_axis(Axis(0));
    need_dx.then(|| dy.dot(&w))
}

pub(crate) fn to_channels_last(x: ArrayView2<f64>, channels: usize, len: usize) -> Array2<f64> {
    let n = x.nrows();
    let mut out = Array2::zeros((n, channels * len));
    for (src, mut dst) in x.rows().into_iter().zip(out.rows_mut()) {
        for c in 0..channels {
            for l in 0..len {
                dst[l * channels + c] = src[c * len + l];
            }
        }
    }
    out
}

#[cfg(test)]
pub(crate) fn to_channel_major(x: ArrayView2<f64>, channels: usize, len: usize) -> Array2<f64> {
    let n = x.nrows();
    let mut out = Array2::zeros((n, channels * len));
    for (src, mut dst) in x.rows().into_iter().zip(out.rows_mut()) {
        for c in 0..channels {
            for l in 0..len {
                dst[c * len + l] = src[l * channels + c];
            }
        }
    }
    out
}

/// Each output row `(n, t)` is the contiguous input window
/// `x[n, t * stride * C .. (t * stride + kernel) * C]`.
pub(crate) fn im2col(x: ArrayView2<f64>, in_ch: usize, out_len: usize) -> Array2<f64> {
    let n = x.nrows();
    let width = CONV_KERNEL * in_ch;
    let mut cols = Array2::zeros((n * out_len, width));
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let row_len = x.ncols();
    let dst = cols.as_slice_mut().expect("fresh array");
    for b in 0..n {
        let src = &xs[b * row_len..(b + 1) * row_len];
        for t in 0..out_len {
            let start = t * CONV_STRIDE * in_ch;
            let o = (b * out_len + t) * width;
            dst[o..o + width].copy_from_slice(&src[start..start + width]);
        }
    }
    cols
}

fn col2im(dcols: &Array2<f64>, n: usize, in_ch: usize, in_len: usize, out_len: usize) -> Array2<f64> {
    let width = CONV_KERNEL * in_ch;
    let mut dx = Array2::zeros((n, in_len * in_ch));
    let src = dcols.as_slice().expect("standard layout");
    let row_len = in_len * in_ch;
    let dst = dx.as_slice_mut().expect("fresh array");
    for b in 0..n {
        for t in 0..out_len {
            let start = b * row_len + t * CONV_STRIDE * in_ch;
            let o = (b * out_len + t) * width;
            for (d, s) in dst[start..start + width].iter_mut().zip(&src[o..o + width]) {
                *d += s;
            }
        }
    }
    dx
}

pub(crate) fn conv_forward(
    cols: &Array2<f64>,
    w: ArrayView2<f64>,
    b: ArrayView1<f64>,
    n: usize,
    out_len: usize,
) -> Array2<f64> {
    let out_ch = w.nrows();
    let y = dense_forward(cols.view(), w, b);
    y.into_shape_with_order((n, out_len * out_ch)).expect("contiguous")
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    cols: &Array2<f64>,
    w: ArrayView2<f64>,
    dy: ArrayView2<f64>,
    gw: &mut ArrayViewMut2<f64>,
    gb: &mut ArrayViewMut1<f64>,
    in_ch: usize,
    in_len: usize,
    out_len: usize,
    need_dx: bool,
) -> Option<Array2<f64>> {
    let n = dy.nrows();
    let out_ch = w.nrows();
    let dy = dy.as_standard_layout();
    let dy2 = dy.view().into_shape_with_order((n * out_len, out_ch)).expect("contiguous");
    let dcols = dense_backward(cols.view(), w, dy2, gw, gb, need_dx)?;
    Some(col2im(&dcols, n, in_ch, in_len, out_len))
}
