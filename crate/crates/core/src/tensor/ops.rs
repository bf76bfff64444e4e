//! Forward and backward kernels for the supported layers.
//!
//! Each backward kernel receives the upstream gradient and returns exact
//! analytic input gradients; the gradcheck suite verifies every kernel
//! against central finite differences.

use super::{NdArray, TensorError};

fn shape_err(expected: &[usize], got: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        expected: expected.to_vec(),
        got: got.to_vec(),
    }
}

/// out[n][o] = sum_i x[n][i] * w[i][o] + b[o]
pub(super) fn affine_forward(
    x: &NdArray,
    w: &NdArray,
    b: &NdArray,
) -> Result<NdArray, TensorError> {
    let (&[n, i], &[wi, o]) = (
        <&[usize; 2]>::try_from(x.shape()).map_err(|_| shape_err(&[0, 0], x.shape()))?,
        <&[usize; 2]>::try_from(w.shape()).map_err(|_| shape_err(&[0, 0], w.shape()))?,
    );
    if wi != i {
        return Err(shape_err(&[i, o], w.shape()));
    }
    if b.shape() != [o] {
        return Err(shape_err(&[o], b.shape()));
    }
    let mut out = vec![0.0; n * o];
    for row in 0..n {
        let out_row = &mut out[row * o..(row + 1) * o];
        out_row.copy_from_slice(b.data());
        for k in 0..i {
            let xv = x.data()[row * i + k];
            let w_row = &w.data()[k * o..(k + 1) * o];
            for (ov, wv) in out_row.iter_mut().zip(w_row) {
                *ov += xv * wv;
            }
        }
    }
    Ok(NdArray::from_vec(&[n, o], out))
}

pub(super) fn affine_backward(
    x: &NdArray,
    w: &NdArray,
    go: &NdArray,
) -> (NdArray, NdArray, NdArray) {
    let (n, i) = (x.shape()[0], x.shape()[1]);
    let o = w.shape()[1];
    let mut dx = NdArray::zeros(x.shape());
    let mut dw = NdArray::zeros(w.shape());
    let mut db = NdArray::zeros(&[o]);
    for row in 0..n {
        let go_row = &go.data()[row * o..(row + 1) * o];
        for k in 0..i {
            let w_row = &w.data()[k * o..(k + 1) * o];
            let mut acc = 0.0;
            for (gv, wv) in go_row.iter().zip(w_row) {
                acc += gv * wv;
            }
            dx.data_mut()[row * i + k] = acc;
            let xv = x.data()[row * i + k];
            let dw_row = &mut dw.data_mut()[k * o..(k + 1) * o];
            for (dwv, gv) in dw_row.iter_mut().zip(go_row) {
                *dwv += xv * gv;
            }
        }
        for (dbv, gv) in db.data_mut().iter_mut().zip(go_row) {
            *dbv += gv;
        }
    }
    (dx, dw, db)
}

/// Geometry of a conv or pool op, resolved and validated once.
#[derive(Debug, Clone, Copy)]
pub(super) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

fn out_extent(input: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let span = (input + 2 * padding).checked_sub(k)?;
    if span % stride != 0 {
        return None;
    }
    Some(span / stride + 1)
}

pub(super) fn conv_geom(
    x_shape: &[usize],
    k_shape: &[usize],
    b_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Result<ConvGeom, TensorError> {
    let &[n, c, h, w] =
        <&[usize; 4]>::try_from(x_shape).map_err(|_| shape_err(&[0, 0, 0, 0], x_shape))?;
    let &[f, kc, kh, kw] =
        <&[usize; 4]>::try_from(k_shape).map_err(|_| shape_err(&[0, 0, 0, 0], k_shape))?;
    if kc != c {
        return Err(shape_err(&[f, c, kh, kw], k_shape));
    }
    if b_shape != [f] {
        return Err(shape_err(&[f], b_shape));
    }
    if stride == 0 {
        return Err(TensorError::InvalidGeometry("stride must be positive".into()));
    }
    let (oh, ow) = match (
        out_extent(h, kh, stride, padding),
        out_extent(w, kw, stride, padding),
    ) {
        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => (oh, ow),
        _ => {
            return Err(TensorError::InvalidGeometry(format!(
                "conv over {h}x{w} with kernel {kh}x{kw}, stride {stride}, padding {padding} \
                 has no integer output extent"
            )))
        }
    };
    Ok(ConvGeom {
        n,
        c,
        h,
        w,
        f,
        kh,
        kw,
        stride,
        padding,
        oh,
        ow,
    })
}

/// Cross-correlation with zero padding. Out-of-range taps contribute 0.
pub(super) fn conv2d_forward(x: &NdArray, k: &NdArray, b: &NdArray, g: &ConvGeom) -> NdArray {
    let mut out = NdArray::zeros(&[g.n, g.f, g.oh, g.ow]);
    for n in 0..g.n {
        for f in 0..g.f {
            for oh in 0..g.oh {
                for ow in 0..g.ow {
                    let mut acc = b.data()[f];
                    for c in 0..g.c {
                        for kh in 0..g.kh {
                            let ih = (oh * g.stride + kh) as isize - g.padding as isize;
                            if ih < 0 || ih >= g.h as isize {
                                continue;
                            }
                            for kw in 0..g.kw {
                                let iw = (ow * g.stride + kw) as isize - g.padding as isize;
                                if iw < 0 || iw >= g.w as isize {
                                    continue;
                                }
                                let xi = ((n * g.c + c) * g.h + ih as usize) * g.w + iw as usize;
                                let ki = ((f * g.c + c) * g.kh + kh) * g.kw + kw;
                                acc += x.data()[xi] * k.data()[ki];
                            }
                        }
                    }
                    let oi = ((n * g.f + f) * g.oh + oh) * g.ow + ow;
                    out.data_mut()[oi] = acc;
                }
            }
        }
    }
    out
}

pub(super) fn conv2d_backward(
    x: &NdArray,
    k: &NdArray,
    g: &ConvGeom,
    go: &NdArray,
) -> (NdArray, NdArray, NdArray) {
    let mut dx = NdArray::zeros(x.shape());
    let mut dk = NdArray::zeros(k.shape());
    let mut db = NdArray::zeros(&[g.f]);
    for n in 0..g.n {
        for f in 0..g.f {
            for oh in 0..g.oh {
                for ow in 0..g.ow {
                    let oi = ((n * g.f + f) * g.oh + oh) * g.ow + ow;
                    let gov = go.data()[oi];
                    db.data_mut()[f] += gov;
                    for c in 0..g.c {
                        for kh in 0..g.kh {
                            let ih = (oh * g.stride + kh) as isize - g.padding as isize;
                            if ih < 0 || ih >= g.h as isize {
                                continue;
                            }
                            for kw in 0..g.kw {
                                let iw = (ow * g.stride + kw) as isize - g.padding as isize;
                                if iw < 0 || iw >= g.w as isize {
                                    continue;
                                }
                                let xi = ((n * g.c + c) * g.h + ih as usize) * g.w + iw as usize;
                                let ki = ((f * g.c + c) * g.kh + kh) * g.kw + kw;
                                dx.data_mut()[xi] += gov * k.data()[ki];
                                dk.data_mut()[ki] += gov * x.data()[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dk, db)
}

/// Per-window maximum. Windows must tile the input exactly. Returns the
/// pooled output and the flat input index of each window's argmax (first
/// occurrence on ties) for the backward pass.
pub(super) fn maxpool_forward(
    x: &NdArray,
    window: usize,
    stride: usize,
) -> Result<(NdArray, Vec<usize>), TensorError> {
    let &[n, c, h, w] = <&[usize; 4]>::try_from(x.shape())
        .map_err(|_| shape_err(&[0, 0, 0, 0], x.shape()))?;
    if window == 0 || stride == 0 {
        return Err(TensorError::InvalidGeometry(
            "pool window and stride must be positive".into(),
        ));
    }
    let fits = |extent: usize| extent >= window && (extent - window) % stride == 0;
    if !fits(h) || !fits(w) {
        return Err(TensorError::InvalidGeometry(format!(
            "pool window {window} stride {stride} does not tile {h}x{w}"
        )));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = NdArray::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0usize; n * c * oh * ow];
    for ni in 0..n {
        for ci in 0..c {
            for ohi in 0..oh {
                for owi in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for wh in 0..window {
                        for ww in 0..window {
                            let ih = ohi * stride + wh;
                            let iw = owi * stride + ww;
                            let xi = ((ni * c + ci) * h + ih) * w + iw;
                            // Strict > keeps the first occurrence on ties.
                            if x.data()[xi] > best {
                                best = x.data()[xi];
                                best_idx = xi;
                            }
                        }
                    }
                    let oi = ((ni * c + ci) * oh + ohi) * ow + owi;
                    out.data_mut()[oi] = best;
                    argmax[oi] = best_idx;
                }
            }
        }
    }
    Ok((out, argmax))
}

pub(super) fn maxpool_backward(x_shape: &[usize], argmax: &[usize], go: &NdArray) -> NdArray {
    let mut dx = NdArray::zeros(x_shape);
    for (oi, &xi) in argmax.iter().enumerate() {
        dx.data_mut()[xi] += go.data()[oi];
    }
    dx
}

pub(super) fn relu_forward(x: &NdArray) -> NdArray {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    NdArray::from_vec(x.shape(), data)
}

pub(super) fn relu_backward(x: &NdArray, go: &NdArray) -> NdArray {
    // Subgradient at exactly 0 is 0.
    let data = x
        .data()
        .iter()
        .zip(go.data())
        .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
        .collect();
    NdArray::from_vec(x.shape(), data)
}

pub(super) fn sigmoid_forward(x: &NdArray) -> NdArray {
    let data = x.data().iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
    NdArray::from_vec(x.shape(), data)
}

pub(super) fn sigmoid_backward(out: &NdArray, go: &NdArray) -> NdArray {
    let data = out
        .data()
        .iter()
        .zip(go.data())
        .map(|(&s, &gv)| gv * s * (1.0 - s))
        .collect();
    NdArray::from_vec(out.shape(), data)
}

pub(super) fn mse_forward(pred: &NdArray, target: &NdArray) -> Result<NdArray, TensorError> {
    if pred.shape() != target.shape() {
        return Err(shape_err(pred.shape(), target.shape()));
    }
    if pred.is_empty() {
        return Err(shape_err(&[1], pred.shape()));
    }
    let n = pred.len() as f64;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum();
    Ok(NdArray::scalar(sum / n))
}

pub(super) fn mse_backward(pred: &NdArray, target: &NdArray, go: f64) -> NdArray {
    let n = pred.len() as f64;
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| go * 2.0 * (p - t) / n)
        .collect();
    NdArray::from_vec(pred.shape(), data)
}
