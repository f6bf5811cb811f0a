//! Raw numeric kernels for the convolution primitive.
//!
//! Stride is always 1. Kernels larger than 1×1 lower each image to an
//! im2col patch matrix so the hot loops run over long contiguous rows;
//! 1×1 kernels skip the lowering since their rows are already contiguous.
//! The forward pass accumulates each output element in the same order as
//! the direct formulation (bias first, then taps in `(ci, kh, kw)`
//! order, with padded taps contributing exact zeros), so its results are
//! bit-identical to the direct loops. All loop orders are fixed, keeping
//! every result bitwise reproducible run-to-run.

use std::cell::RefCell;

use super::Shape;

thread_local! {
    /// Scratch for the per-image patch matrix, reused across calls.
    static COL: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
}

/// Output spatial extent for stride-1 convolution with zero padding.
/// Returns `None` when the dilated kernel does not fit.
pub fn conv2d_output_extent(
    input: usize,
    kernel: usize,
    pad: usize,
    dilation: usize,
) -> Option<usize> {
    let span = dilation * (kernel - 1);
    (input + 2 * pad).checked_sub(span).filter(|e| *e >= 1)
}

/// Padding that keeps the spatial size unchanged for an odd kernel.
pub fn same_padding(kernel: usize, dilation: usize) -> usize {
    debug_assert!(kernel % 2 == 1, "same padding requires an odd kernel");
    dilation * (kernel - 1) / 2
}

/// Valid output-column range for one kernel tap: the `ow` for which
/// `iw = ow + kw*dilation - pw` lands inside `[0, iw_len)`.
#[inline]
fn valid_ow_range(
    ow_len: usize,
    iw_len: usize,
    kw: usize,
    pw: usize,
    dilation: usize,
) -> (usize, usize) {
    let shift = kw * dilation;
    let ow0 = pw.saturating_sub(shift).min(ow_len);
    let ow1 = (iw_len + pw).saturating_sub(shift).min(ow_len);
    (ow0, ow1)
}

/// Write image `n`'s receptive fields into `col`: one row of
/// `xs.c * ks.h * ks.w` taps per output pixel, zeros where a tap lands in
/// the padding. Tap order within a row is `(ci, kh, kw)`, matching the
/// kernel tensor's memory layout.
#[allow(clippy::too_many_arguments)]
fn fill_col(
    x: &[f64],
    xs: Shape,
    n: usize,
    ks: Shape,
    pad: (usize, usize),
    dilation: usize,
    os: Shape,
    col: &mut [f64],
) {
    let (ph, pw) = pad;
    let kk = xs.c * ks.h * ks.w;
    col.fill(0.0);
    for ci in 0..xs.c {
        for kh in 0..ks.h {
            let ih_off = kh * dilation;
            for kw in 0..ks.w {
                let kidx = (ci * ks.h + kh) * ks.w + kw;
                let (ow0, ow1) = valid_ow_range(os.w, xs.w, kw, pw, dilation);
                if ow0 >= ow1 {
                    continue;
                }
                let iw0 = ow0 + kw * dilation - pw;
                for oh in 0..os.h {
                    let ih = oh + ih_off;
                    if ih < ph || ih - ph >= xs.h {
                        continue;
                    }
                    let xb = xs.offset(n, ci, ih - ph, iw0);
                    let base = oh * os.w;
                    for (i, ow) in (ow0..ow1).enumerate() {
                        col[(base + ow) * kk + kidx] = x[xb + i];
                    }
                }
            }
        }
    }
}

/// Cross-correlation forward pass. Overwrites `out`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward(
    x: &[f64],
    xs: Shape,
    k: &[f64],
    ks: Shape,
    bias: Option<&[f64]>,
    pad: (usize, usize),
    dilation: usize,
    out: &mut [f64],
    os: Shape,
) {
    if ks.h == 1 && ks.w == 1 {
        return conv2d_forward_direct(x, xs, k, ks, bias, pad, dilation, out, os);
    }
    let kk = xs.c * ks.h * ks.w;
    let p = os.h * os.w;
    COL.with(|cell| {
        let mut col = cell.borrow_mut();
        col.resize(p * kk, 0.0);
        for n in 0..os.n {
            fill_col(x, xs, n, ks, pad, dilation, os, &mut col);
            for co in 0..os.c {
                let wrow = &k[co * kk..(co + 1) * kk];
                let b = bias.map_or(0.0, |t| t[co]);
                let ob = os.offset(n, co, 0, 0);
                for (pi, o) in out[ob..ob + p].iter_mut().enumerate() {
                    let crow = &col[pi * kk..(pi + 1) * kk];
                    let mut acc = b;
                    for (w, v) in wrow.iter().zip(crow) {
                        acc += w * v;
                    }
                    *o = acc;
                }
            }
        }
    });
}

/// Direct tap-by-tap path, used where the patch matrix would not buy
/// anything.
#[allow(clippy::too_many_arguments)]
fn conv2d_forward_direct(
    x: &[f64],
    xs: Shape,
    k: &[f64],
    ks: Shape,
    bias: Option<&[f64]>,
    pad: (usize, usize),
    dilation: usize,
    out: &mut [f64],
    os: Shape,
) {
    let (ph, pw) = pad;
    for n in 0..os.n {
        for co in 0..os.c {
            let plane = os.offset(n, co, 0, 0);
            out[plane..plane + os.h * os.w].fill(bias.map_or(0.0, |b| b[co]));
            for ci in 0..xs.c {
                for kh in 0..ks.h {
                    let ih_off = kh * dilation;
                    for kw in 0..ks.w {
                        let weight = k[ks.offset(co, ci, kh, kw)];
                        let (ow0, ow1) = valid_ow_range(os.w, xs.w, kw, pw, dilation);
                        if ow0 >= ow1 {
                            continue;
                        }
                        let iw0 = ow0 + kw * dilation - pw;
                        for oh in 0..os.h {
                            let ih = oh + ih_off;
                            if ih < ph || ih - ph >= xs.h {
                                continue;
                            }
                            let ob = os.offset(n, co, oh, ow0);
                            let xb = xs.offset(n, ci, ih - ph, iw0);
                            let xr = &x[xb..xb + (ow1 - ow0)];
                            let or = &mut out[ob..ob + (ow1 - ow0)];
                            for (o, v) in or.iter_mut().zip(xr) {
                                *o += weight * v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint w.r.t. the input: per pixel, combine the kernel rows weighted
/// by the output gradient, then scatter the taps back onto the input.
/// Accumulates into `dx`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_input(
    dout: &[f64],
    os: Shape,
    k: &[f64],
    ks: Shape,
    pad: (usize, usize),
    dilation: usize,
    dx: &mut [f64],
    xs: Shape,
) {
    if ks.h == 1 && ks.w == 1 {
        return conv2d_backward_input_direct(dout, os, k, ks, pad, dilation, dx, xs);
    }
    let (ph, pw) = pad;
    let kk = xs.c * ks.h * ks.w;
    let p = os.h * os.w;
    COL.with(|cell| {
        let mut dcol = cell.borrow_mut();
        dcol.resize(p * kk, 0.0);
        for n in 0..os.n {
            dcol.fill(0.0);
            for co in 0..os.c {
                let wrow = &k[co * kk..(co + 1) * kk];
                let gb = os.offset(n, co, 0, 0);
                for (pi, g) in dout[gb..gb + p].iter().enumerate() {
                    let drow = &mut dcol[pi * kk..(pi + 1) * kk];
                    for (d, w) in drow.iter_mut().zip(wrow) {
                        *d += g * w;
                    }
                }
            }
            for ci in 0..xs.c {
                for kh in 0..ks.h {
                    let ih_off = kh * dilation;
                    for kw in 0..ks.w {
                        let kidx = (ci * ks.h + kh) * ks.w + kw;
                        let (ow0, ow1) = valid_ow_range(os.w, xs.w, kw, pw, dilation);
                        if ow0 >= ow1 {
                            continue;
                        }
                        let iw0 = ow0 + kw * dilation - pw;
                        for oh in 0..os.h {
                            let ih = oh + ih_off;
                            if ih < ph || ih - ph >= xs.h {
                                continue;
                            }
                            let db = xs.offset(n, ci, ih - ph, iw0);
                            let base = oh * os.w;
                            for (i, ow) in (ow0..ow1).enumerate() {
                                dx[db + i] += dcol[(base + ow) * kk + kidx];
                            }
                        }
                    }
                }
            }
        }
    });
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward_input_direct(
    dout: &[f64],
    os: Shape,
    k: &[f64],
    ks: Shape,
    pad: (usize, usize),
    dilation: usize,
    dx: &mut [f64],
    xs: Shape,
) {
    let (ph, pw) = pad;
    for n in 0..os.n {
        for co in 0..os.c {
            for ci in 0..xs.c {
                for kh in 0..ks.h {
                    let ih_off = kh * dilation;
                    for kw in 0..ks.w {
                        let weight = k[ks.offset(co, ci, kh, kw)];
                        let (ow0, ow1) = valid_ow_range(os.w, xs.w, kw, pw, dilation);
                        if ow0 >= ow1 {
                            continue;
                        }
                        let iw0 = ow0 + kw * dilation - pw;
                        for oh in 0..os.h {
                            let ih = oh + ih_off;
                            if ih < ph || ih - ph >= xs.h {
                                continue;
                            }
                            let gb = os.offset(n, co, oh, ow0);
                            let db = xs.offset(n, ci, ih - ph, iw0);
                            let gr = &dout[gb..gb + (ow1 - ow0)];
                            let dr = &mut dx[db..db + (ow1 - ow0)];
                            for (d, g) in dr.iter_mut().zip(gr) {
                                *d += weight * g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint w.r.t. the kernel: per output pixel, add the gradient-scaled
/// patch row onto the kernel row. Accumulates into `dk`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_kernel(
    dout: &[f64],
    os: Shape,
    x: &[f64],
    xs: Shape,
    pad: (usize, usize),
    dilation: usize,
    dk: &mut [f64],
    ks: Shape,
) {
    if ks.h == 1 && ks.w == 1 {
        return conv2d_backward_kernel_direct(dout, os, x, xs, pad, dilation, dk, ks);
    }
    let kk = xs.c * ks.h * ks.w;
    let p = os.h * os.w;
    COL.with(|cell| {
        let mut col = cell.borrow_mut();
        col.resize(p * kk, 0.0);
        for n in 0..os.n {
            fill_col(x, xs, n, ks, pad, dilation, os, &mut col);
            for co in 0..os.c {
                let gb = os.offset(n, co, 0, 0);
                let krow = &mut dk[co * kk..(co + 1) * kk];
                for (pi, g) in dout[gb..gb + p].iter().enumerate() {
                    let crow = &col[pi * kk..(pi + 1) * kk];
                    for (d, v) in krow.iter_mut().zip(crow) {
                        *d += g * v;
                    }
                }
            }
        }
    });
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward_kernel_direct(
    dout: &[f64],
    os: Shape,
    x: &[f64],
    xs: Shape,
    pad: (usize, usize),
    dilation: usize,
    dk: &mut [f64],
    ks: Shape,
) {
    let (ph, pw) = pad;
    for n in 0..os.n {
        for co in 0..os.c {
            for ci in 0..xs.c {
                for kh in 0..ks.h {
                    let ih_off = kh * dilation;
                    for kw in 0..ks.w {
                        let (ow0, ow1) = valid_ow_range(os.w, xs.w, kw, pw, dilation);
                        if ow0 >= ow1 {
                            continue;
                        }
                        let iw0 = ow0 + kw * dilation - pw;
                        let mut acc = 0.0;
                        for oh in 0..os.h {
                            let ih = oh + ih_off;
                            if ih < ph || ih - ph >= xs.h {
                                continue;
                            }
                            let gb = os.offset(n, co, oh, ow0);
                            let xb = xs.offset(n, ci, ih - ph, iw0);
                            let gr = &dout[gb..gb + (ow1 - ow0)];
                            let xr = &x[xb..xb + (ow1 - ow0)];
                            for (g, v) in gr.iter().zip(xr) {
                                acc += g * v;
                            }
                        }
                        dk[ks.offset(co, ci, kh, kw)] += acc;
                    }
                }
            }
        }
    }
}

/// Adjoint w.r.t. the bias: per-channel sum of `dout`. Accumulates into `db`.
pub fn conv2d_backward_bias(dout: &[f64], os: Shape, db: &mut [f64]) {
    for n in 0..os.n {
        for co in 0..os.c {
            let base = os.offset(n, co, 0, 0);
            let mut acc = 0.0;
            for v in &dout[base..base + os.h * os.w] {
                acc += v;
            }
            db[co] += acc;
        }
    }
}
