//! The closed operator set of the engine.
//!
//! Each operation validates shapes, computes the forward result, and (when
//! the graph is recording and any input is tracked) records a backward
//! closure that routes the output gradient to its inputs.

use super::{Graph, Tensor};
use crate::{Error, Result, Scalar};

fn any_tracked<T: Scalar>(inputs: &[&Tensor<T>]) -> bool {
    inputs.iter().any(|t| t.requires_grad())
}

fn make_output<T: Scalar>(g: &Graph<T>, shape: &[usize], data: Vec<T>, tracked: bool) -> Tensor<T> {
    let out = Tensor::from_vec(shape, data).expect("internal shape bug");
    if tracked && g.is_recording() {
        out.set_requires_grad(true);
    }
    out
}

pub fn conv_out_len(len: usize, k: usize, stride: usize, padding: usize) -> usize {
    (len + 2 * padding - k) / stride + 1
}

/// 1D cross-correlation over the temporal axis.
///
/// `x`: B x Cin x L, `w`: Cout x Cin x k, `b`: Cout.
pub fn conv1d<T: Scalar>(
    g: &Graph<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ws = w.shape();
    if xs.len() != 3 || ws.len() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "conv1d expects 3D input and kernel, got {xs:?} and {ws:?}"
        )));
    }
    let (bsz, cin, len) = (xs[0], xs[1], xs[2]);
    let (cout, wcin, k) = (ws[0], ws[1], ws[2]);
    if cin != wcin {
        return Err(Error::ShapeMismatch(format!(
            "conv1d: input has {cin} channels but kernel expects {wcin}"
        )));
    }
    if stride < 1 {
        return Err(Error::InvalidArg("conv1d: stride must be >= 1".into()));
    }
    if len + 2 * padding < k {
        return Err(Error::InvalidArg(format!(
            "conv1d: padded length {} shorter than kernel {k}",
            len + 2 * padding
        )));
    }
    if let Some(b) = b {
        if b.shape() != [cout] {
            return Err(Error::ShapeMismatch(format!(
                "conv1d: bias shape {:?} != [{cout}]",
                b.shape()
            )));
        }
    }
    let lout = conv_out_len(len, k, stride, padding);

    let xd = x.data_clone();
    let wd = w.data_clone();
    let bd = b.map(|b| b.data_clone());
    let mut y = vec![T::zero(); bsz * cout * lout];
    for bi in 0..bsz {
        for co in 0..cout {
            let bias = bd.as_ref().map_or(T::zero(), |v| v[co]);
            let ybase = (bi * cout + co) * lout;
            for t in 0..lout {
                let mut acc = bias;
                let start = t * stride;
                for ci in 0..cin {
                    let xbase = (bi * cin + ci) * len;
                    let wbase = (co * cin + ci) * k;
                    for j in 0..k {
                        let pos = start + j;
                        if pos >= padding && pos - padding < len {
                            acc = acc + wd[wbase + j] * xd[xbase + pos - padding];
                        }
                    }
                }
                y[ybase + t] = acc;
            }
        }
    }

    let tracked = any_tracked(&[x, w].into_iter().chain(b).collect::<Vec<_>>());
    let out = make_output(g, &[bsz, cout, lout], y, tracked);
    if tracked && g.is_recording() {
        let (x, w, b, out_c) = (x.clone(), w.clone(), b.cloned(), out.clone());
        g.record(move || {
            let Some(gy) = out_c.grad() else { return };
            let xd = x.data_clone();
            let wd = w.data_clone();
            if x.requires_grad() {
                let mut gx = vec![T::zero(); xd.len()];
                for bi in 0..bsz {
                    for co in 0..cout {
                        let ybase = (bi * cout + co) * lout;
                        for t in 0..lout {
                            let go = gy[ybase + t];
                            let start = t * stride;
                            for ci in 0..cin {
                                let xbase = (bi * cin + ci) * len;
                                let wbase = (co * cin + ci) * k;
                                for j in 0..k {
                                    let pos = start + j;
                                    if pos >= padding && pos - padding < len {
                                        gx[xbase + pos - padding] =
                                            gx[xbase + pos - padding] + go * wd[wbase + j];
                                    }
                                }
                            }
                        }
                    }
                }
                x.accumulate_grad(&gx);
            }
            if w.requires_grad() {
                let mut gw = vec![T::zero(); wd.len()];
                for bi in 0..bsz {
                    for co in 0..cout {
                        let ybase = (bi * cout + co) * lout;
                        for t in 0..lout {
                            let go = gy[ybase + t];
                            let start = t * stride;
                            for ci in 0..cin {
                                let xbase = (bi * cin + ci) * len;
                                let wbase = (co * cin + ci) * k;
                                for j in 0..k {
                                    let pos = start + j;
                                    if pos >= padding && pos - padding < len {
                                        gw[wbase + j] =
                                            gw[wbase + j] + go * xd[xbase + pos - padding];
                                    }
                                }
                            }
                        }
                    }
                }
                w.accumulate_grad(&gw);
            }
            if let Some(b) = &b {
                if b.requires_grad() {
                    let mut gb = vec![T::zero(); cout];
                    for bi in 0..bsz {
                        for co in 0..cout {
                            let ybase = (bi * cout + co) * lout;
                            for t in 0..lout {
                                gb[co] = gb[co] + gy[ybase + t];
                            }
                        }
                    }
                    b.accumulate_grad(&gb);
                }
            }
        });
    }
    Ok(out)
}

/// Batch normalization over batch x time per channel, training mode.
///
/// Returns the normalized output plus the biased batch mean/variance so the
/// caller can update its running statistics.
#[allow(clippy::type_complexity)]
pub fn batchnorm1d_train<T: Scalar>(
    g: &Graph<T>,
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let xs = x.shape();
    if xs.len() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "batchnorm1d expects B x C x L, got {xs:?}"
        )));
    }
    let (bsz, c, len) = (xs[0], xs[1], xs[2]);
    let n = bsz * len;
    if n < 2 {
        return Err(Error::InvalidArg(
            "batchnorm1d train mode needs batch*time >= 2".into(),
        ));
    }
    check_vec_shape(gamma, c, "batchnorm1d gamma")?;
    check_vec_shape(beta, c, "batchnorm1d beta")?;

    let xd = x.data_clone();
    let gd = gamma.data_clone();
    let betad = beta.data_clone();
    let n_t = T::from_f64(n as f64);

    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ci in 0..c {
        let mut s = T::zero();
        for bi in 0..bsz {
            let base = (bi * c + ci) * len;
            for t in 0..len {
                s = s + xd[base + t];
            }
        }
        mean[ci] = s / n_t;
        let mut v = T::zero();
        for bi in 0..bsz {
            let base = (bi * c + ci) * len;
            for t in 0..len {
                let d = xd[base + t] - mean[ci];
                v = v + d * d;
            }
        }
        var[ci] = v / n_t;
    }

    let invstd: Vec<T> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut y = vec![T::zero(); xd.len()];
    for bi in 0..bsz {
        for ci in 0..c {
            let base = (bi * c + ci) * len;
            for t in 0..len {
                let h = (xd[base + t] - mean[ci]) * invstd[ci];
                xhat[base + t] = h;
                y[base + t] = gd[ci] * h + betad[ci];
            }
        }
    }

    let tracked = any_tracked(&[x, gamma, beta]);
    let out = make_output(g, &xs, y, tracked);
    if tracked && g.is_recording() {
        let (x, gamma, beta, out_c) = (x.clone(), gamma.clone(), beta.clone(), out.clone());
        let invstd_c = invstd.clone();
        g.record(move || {
            let Some(gy) = out_c.grad() else { return };
            let gd = gamma.data_clone();
            // per-channel reductions of gy and gy*xhat
            let mut sum_gy = vec![T::zero(); c];
            let mut sum_gyh = vec![T::zero(); c];
            for bi in 0..bsz {
                for ci in 0..c {
                    let base = (bi * c + ci) * len;
                    for t in 0..len {
                        sum_gy[ci] = sum_gy[ci] + gy[base + t];
                        sum_gyh[ci] = sum_gyh[ci] + gy[base + t] * xhat[base + t];
                    }
                }
            }
            if gamma.requires_grad() {
                gamma.accumulate_grad(&sum_gyh);
            }
            if beta.requires_grad() {
                beta.accumulate_grad(&sum_gy);
            }
            if x.requires_grad() {
                let n_t = T::from_f64(n as f64);
                let mut gx = vec![T::zero(); bsz * c * len];
                for bi in 0..bsz {
                    for ci in 0..c {
                        let coeff = gd[ci] * invstd_c[ci] / n_t;
                        let base = (bi * c + ci) * len;
                        for t in 0..len {
                            gx[base + t] = coeff
                                * (n_t * gy[base + t]
                                    - sum_gy[ci]
                                    - xhat[base + t] * sum_gyh[ci]);
                        }
                    }
                }
                x.accumulate_grad(&gx);
            }
        });
    }
    Ok((out, mean, var))
}

/// Batch normalization using fixed (running) statistics, eval mode.
pub fn batchnorm1d_eval<T: Scalar>(
    g: &Graph<T>,
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &[T],
    var: &[T],
    eps: T,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    if xs.len() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "batchnorm1d expects B x C x L, got {xs:?}"
        )));
    }
    let (bsz, c, len) = (xs[0], xs[1], xs[2]);
    check_vec_shape(gamma, c, "batchnorm1d gamma")?;
    check_vec_shape(beta, c, "batchnorm1d beta")?;
    if mean.len() != c || var.len() != c {
        return Err(Error::ShapeMismatch(
            "batchnorm1d eval: running stats length != channel count".into(),
        ));
    }
    let xd = x.data_clone();
    let gd = gamma.data_clone();
    let betad = beta.data_clone();
    let invstd: Vec<T> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
    let mut y = vec![T::zero(); xd.len()];
    let mut xhat = vec![T::zero(); xd.len()];
    for bi in 0..bsz {
        for ci in 0..c {
            let base = (bi * c + ci) * len;
            for t in 0..len {
                let h = (xd[base + t] - mean[ci]) * invstd[ci];
                xhat[base + t] = h;
                y[base + t] = gd[ci] * h + betad[ci];
            }
        }
    }
    let tracked = any_tracked(&[x, gamma, beta]);
    let out = make_output(g, &xs, y, tracked);
    if tracked && g.is_recording() {
        let (x, gamma, beta, out_c) = (x.clone(), gamma.clone(), beta.clone(), out.clone());
        g.record(move || {
            let Some(gy) = out_c.grad() else { return };
            let gd = gamma.data_clone();
            if x.requires_grad() {
                let mut gx = vec![T::zero(); bsz * c * len];
                for bi in 0..bsz {
                    for ci in 0..c {
                        let base = (bi * c + ci) * len;
                        for t in 0..len {
                            gx[base + t] = gy[base + t] * gd[ci] * invstd[ci];
                        }
                    }
                }
                x.accumulate_grad(&gx);
            }
            if gamma.requires_grad() || beta.requires_grad() {
                let mut ggamma = vec![T::zero(); c];
                let mut gbeta = vec![T::zero(); c];
                for bi in 0..bsz {
                    for ci in 0..c {
                        let base = (bi * c + ci) * len;
                        for t in 0..len {
                            ggamma[ci] = ggamma[ci] + gy[base + t] * xhat[base + t];
                            gbeta[ci] = gbeta[ci] + gy[base + t];
                        }
                    }
                }
                if gamma.requires_grad() {
                    gamma.accumulate_grad(&ggamma);
                }
                if beta.requires_grad() {
                    beta.accumulate_grad(&gbeta);
                }
            }
        });
    }
    Ok(out)
}

pub fn relu<T: Scalar>(g: &Graph<T>, x: &Tensor<T>) -> Tensor<T> {
    let xd = x.data_clone();
    let y: Vec<T> = xd.iter().map(|&v| v.max(T::zero())).collect();
    let tracked = x.requires_grad();
    let out = make_output(g, &x.shape(), y, tracked);
    if tracked && g.is_recording() {
        let (x, out_c) = (x.clone(), out.clone());
        g.record(move || {
            let Some(gy) = out_c.grad() else { return };
            let xd = x.data_clone();
            let gx: Vec<T> = xd
                .iter()
                .zip(&gy)
                .map(|(&v, &go)| if v > T::zero() { go } else { T::zero() })
                .collect();
            x.accumulate_grad(&gx);
        });
    }
    out
}

pub fn sigmoid<T: Scalar>(g: &Graph<T>, x: &Tensor<T>) -> Tensor<T> {
    let xd = x.data_clone();
    let y: Vec<T> = xd.iter().map(|&v| sigmoid_scalar(v)).collect();
    let tracked = x.requires_grad();
    let out = make_output(g, &x.shape(), y.clone(), tracked);
    if tracked && g.is_recording() {
        let (x, out_c) = (x.clone(), out.clone());
        g.record(move || {
            let Some(gy) = out_c.grad() else { return };
            let gx: Vec<T> = y
                .iter()
                .zip(&gy)
                .map(|(&s, &go)| go * s * (T::one() - s))
                .collect();
            x.accumulate_grad(&gx);
        });
    }
    out
}

pub fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    // split on sign to avoid overflow in exp
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Windowed maximum with implicit negative-infinity padding; the gradient
/// routes to the first maximal position of each window.
pub fn maxpool1d<T: Scalar>(
    g: &Graph<T>,
    x: &Tensor<T>,
    k: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    if k == 0 {
        return Err(Error::InvalidArg("maxpool1d: kernel must be positive".into()));
    }
    if stride == 0 {
        return Err(Error::InvalidArg("maxpool1d: stride must be positive".into()));
    }
    let xs = x.shape();
    if xs.len() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "maxpool1d expects B x C x L, got {xs:?}"
        )));
    }
    let (bsz, c, len) = (xs[0], xs[1], xs[2]);
    if len + 2 * padding < k {
        return Err(Error::InvalidArg(format!(
            "maxpool1d: padded length {} shorter than window {k}",
            len + 2 * padding
        )));
    }
    let lout = conv_out_len(len, k, stride, padding);
    let xd = x.data_clone();
    let mut y = vec![T::zero(); bsz * c * lout];
    let mut argmax = vec![usize::MAX; bsz * c * lout];
    for bi in 0..bsz {
        for ci in 0..c {
            let base = (bi * c + ci) * len;
            let obase = (bi * c + ci) * lout;
            for t in 0..lout {
                let start = t * stride;
                let mut best = T::neg_infinity();
                let mut best_idx = usize::MAX;
                for j in 0..k {
                    let pos = start + j;
                    if pos >= padding && pos - padding < len {
                        let v = xd[base + pos - padding];
                        if v > best {
                            best = v;
                            best_idx = base + pos - padding;
                        }
                    }
                }
                y[obase + t] = best;
                argmax[obase + t] = best_idx;
            }
        }
    }
    let tracked = x.requires_grad();
    let out = make_output(g, &[bsz, c, lout], y, tracked);
    if tracked && g.is_recording() {
        let (x, out_c) = (x.clone(), out.clone());
        g.record(move || {
            let Some(gy) = out_c.grad() else { return };
            let mut gx = vec![T::zero(); bsz * c * len];
            for (o, &src) in argmax.iter().enumerate() {
                if src != usize::MAX {
                    gx[src] = gx[src] + gy[o];
                }
            }
            x.accumulate_grad(&gx);
        });
    }
    Ok(out)
}

/// Per-channel temporal mean: B x C x L -> B x C.
pub fn global_avg_pool1d<T: Scalar>(g: &Graph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let xs = x.shape();
    if xs.len() != 3 || xs[2] == 0 {
        return Err(Error::ShapeMismatch(format!(
            "global_avg_pool1d expects B x C x L with L >= 1, got {xs:?}"
        )));
    }
    let (bsz, c, len) = (xs[0], xs[1], xs[2]);
    let len_t = T::from_f64(len as f64);
    let xd = x.data_clone();
    let mut y = vec![T::zero(); bsz * c];
    for bi in 0..bsz {
        for ci in 0..c {
            let base = (bi * c + ci) * len;
            let mut s = T::zero();
            for t in 0..len {
                s = s + xd[base + t];
            }
            y[bi * c + ci] = s / len_t;
        }
    }
    let tracked = x.requires_grad();
    let out = make_output(g, &[bsz, c], y, tracked);
    if tracked && g.is_recording() {
        let (x, out_c) = (x.clone(), out.clone());
        g.record(move || {
            let Some(gy) = out_c.grad() else { return };
            let mut gx = vec![T::zero(); bsz * c * len];
            for bi in 0..bsz {
                for ci in 0..c {
                    let go = gy[bi * c + ci] / len_t;
                    let base = (bi * c + ci) * len;
                    for t in 0..len {
                        gx[base + t] = go;
                    }
                }
            }
            x.accumulate_grad(&gx);
        });
    }
    Ok(out)
}

/// Affine map per row: `x` B x Din, `w` Dout x Din, optional bias Dout.
pub fn linear<T: Scalar>(
    g: &Graph<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ws = w.shape();
    if xs.len() != 2 || ws.len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "linear expects 2D input and weight, got {xs:?} and {ws:?}"
        )));
    }
    let (bsz, din) = (xs[0], xs[1]);
    let (dout, wdin) = (ws[0], ws[1]);
    if din != wdin {
        return Err(Error::ShapeMismatch(format!(
            "linear: input dim {din} != weight dim {wdin}"
        )));
    }
    if let Some(b) = b {
        if b.shape() != [dout] {
            return Err(Error::ShapeMismatch(format!(
                "linear: bias shape {:?} != [{dout}]",
                b.shape()
            )));
        }
    }
    let xd = x.data_clone();
    let wd = w.data_clone();
    let bd = b.map(|b| b.data_clone());
    let mut y = vec![T::zero(); bsz * dout];
    for bi in 0..bsz {
        for o in 0..dout {
            let mut acc = bd.as_ref().map_or(T::zero(), |v| v[o]);
            let xbase = bi * din;
            let wbase = o * din;
            for i in 0..din {
                acc = acc + xd[xbase + i] * wd[wbase + i];
            }
            y[bi * dout + o] = acc;
        }
    }
    let tracked = any_tracked(&[x, w].into_iter().chain(b).collect::<Vec<_>>());
    let out = make_output(g, &[bsz, dout], y, tracked);
    if tracked && g.is_recording() {
        let (x, w, b, out_c) = (x.clone(), w.clone(), b.cloned(), out.clone());
        g.record(move || {
            let Some(gy) = out_c.grad() else { return };
            let xd = x.data_clone();
            let wd = w.data_clone();
            if x.requires_grad() {
                let mut gx = vec![T::zero(); bsz * din];
                for bi in 0..bsz {
                    for o in 0..dout {
                        let go = gy[bi * dout + o];
                        let wbase = o * din;
                        for i in 0..din {
                            gx[bi * din + i] = gx[bi * din + i] + go * wd[wbase + i];
                        }
                    }
                }
                x.accumulate_grad(&gx);
            }
            if w.requires_grad() {
                let mut gw = vec![T::zero(); dout * din];
                for bi in 0..bsz {
                    for o in 0..dout {
                        let go = gy[bi * dout + o];
                        let wbase = o * din;
                        for i in 0..din {
                            gw[wbase + i] = gw[wbase + i] + go * xd[bi * din + i];
                        }
                    }
                }
                w.accumulate_grad(&gw);
            }
            if let Some(b) = &b {
                if b.requires_grad() {
                    let mut gb = vec![T::zero(); dout];
                    for bi in 0..bsz {
                        for o in 0..dout {
                            gb[o] = gb[o] + gy[bi * dout + o];
                        }
                    }
                    b.accumulate_grad(&gb);
                }
            }
        });
    }
    Ok(out)
}

/// Row-wise softmax with max-subtraction for stability.
pub fn softmax<T: Scalar>(g: &Graph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let xs = x.shape();
    if xs.len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "softmax expects B x K, got {xs:?}"
        )));
    }
    let (bsz, k) = (xs[0], xs[1]);
    let xd = x.data_clone();
    let mut y = vec![T::zero(); bsz * k];
    for bi in 0..bsz {
        let row = &xd[bi * k..(bi + 1) * k];
        let m = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for (j, &v) in row.iter().enumerate() {
            let e = (v - m).exp();
            y[bi * k + j] = e;
            denom = denom + e;
        }
        for j in 0..k {
            y[bi * k + j] = y[bi * k + j] / denom;
        }
    }
    let tracked = x.requires_grad();
    let out = make_output(g, &xs, y.clone(), tracked);
    if tracked && g.is_recording() {
        let (x, out_c) = (x.clone(), out.clone());
        g.record(move || {
            let Some(gy) = out_c.grad() else { return };
            let mut gx = vec![T::zero(); bsz * k];
            for bi in 0..bsz {
                let mut dot = T::zero();
                for j in 0..k {
                    dot = dot + gy[bi * k + j] * y[bi * k + j];
                }
                for j in 0..k {
                    gx[bi * k + j] = y[bi * k + j] * (gy[bi * k + j] - dot);
                }
            }
            x.accumulate_grad(&gx);
        });
    }
    Ok(out)
}

/// Elementwise sum of two same-shape tensors (residual connections).
pub fn add<T: Scalar>(g: &Graph<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "add: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let y: Vec<T> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&u, &v)| u + v)
        .collect();
    let tracked = any_tracked(&[a, b]);
    let out = make_output(g, &a.shape(), y, tracked);
    if tracked && g.is_recording() {
        let (a, b, out_c) = (a.clone(), b.clone(), out.clone());
        g.record(move || {
            let Some(gy) = out_c.grad() else { return };
            if a.requires_grad() {
                a.accumulate_grad(&gy);
            }
            if b.requires_grad() {
                b.accumulate_grad(&gy);
            }
        });
    }
    Ok(out)
}

/// Elementwise product (used by test oracles, e.g. sum(x*x)).
pub fn mul<T: Scalar>(g: &Graph<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "mul: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let y: Vec<T> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&u, &v)| u * v)
        .collect();
    let tracked = any_tracked(&[a, b]);
    let out = make_output(g, &a.shape(), y, tracked);
    if tracked && g.is_recording() {
        let (a, b, out_c) = (a.clone(), b.clone(), out.clone());
        g.record(move || {
            let Some(gy) = out_c.grad() else { return };
            if a.requires_grad() {
                let ga: Vec<T> = gy
                    .iter()
                    .zip(b.data().iter())
                    .map(|(&go, &v)| go * v)
                    .collect();
                a.accumulate_grad(&ga);
            }
            if b.requires_grad() {
                let gb: Vec<T> = gy
                    .iter()
                    .zip(a.data().iter())
                    .map(|(&go, &u)| go * u)
                    .collect();
                b.accumulate_grad(&gb);
            }
        });
    }
    Ok(out)
}

/// Sum of all elements to a scalar.
pub fn sum<T: Scalar>(g: &Graph<T>, x: &Tensor<T>) -> Tensor<T> {
    let s = x.data().iter().fold(T::zero(), |acc, &v| acc + v);
    let tracked = x.requires_grad();
    let out = make_output(g, &[], vec![s], tracked);
    if tracked && g.is_recording() {
        let (x, out_c) = (x.clone(), out.clone());
        g.record(move || {
            let Some(gy) = out_c.grad() else { return };
            let gx = vec![gy[0]; x.numel()];
            x.accumulate_grad(&gx);
        });
    }
    out
}

/// Channel-wise rescaling: `x` B x C x L multiplied by gates `s` B x C
/// (the excitation step of an SE block).
pub fn scale_channels<T: Scalar>(g: &Graph<T>, x: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ss = s.shape();
    if xs.len() != 3 || ss.len() != 2 || xs[0] != ss[0] || xs[1] != ss[1] {
        return Err(Error::ShapeMismatch(format!(
            "scale_channels: x {xs:?} vs gates {ss:?}"
        )));
    }
    let (bsz, c, len) = (xs[0], xs[1], xs[2]);
    let xd = x.data_clone();
    let sd = s.data_clone();
    let mut y = vec![T::zero(); xd.len()];
    for bi in 0..bsz {
        for ci in 0..c {
            let gate = sd[bi * c + ci];
            let base = (bi * c + ci) * len;
            for t in 0..len {
                y[base + t] = xd[base + t] * gate;
            }
        }
    }
    let tracked = any_tracked(&[x, s]);
    let out = make_output(g, &xs, y, tracked);
    if tracked && g.is_recording() {
        let (x, s, out_c) = (x.clone(), s.clone(), out.clone());
        g.record(move || {
            let Some(gy) = out_c.grad() else { return };
            let xd = x.data_clone();
            let sd = s.data_clone();
            if x.requires_grad() {
                let mut gx = vec![T::zero(); xd.len()];
                for bi in 0..bsz {
                    for ci in 0..c {
                        let gate = sd[bi * c + ci];
                        let base = (bi * c + ci) * len;
                        for t in 0..len {
                            gx[base + t] = gy[base + t] * gate;
                        }
                    }
                }
                x.accumulate_grad(&gx);
            }
            if s.requires_grad() {
                let mut gs = vec![T::zero(); bsz * c];
                for bi in 0..bsz {
                    for ci in 0..c {
                        let base = (bi * c + ci) * len;
                        let mut acc = T::zero();
                        for t in 0..len {
                            acc = acc + gy[base + t] * xd[base + t];
                        }
                        gs[bi * c + ci] = acc;
                    }
                }
                s.accumulate_grad(&gs);
            }
        });
    }
    Ok(out)
}

/// L2-normalize each row of a B x P matrix (cosine-similarity prep).
pub fn l2_normalize_rows<T: Scalar>(g: &Graph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let xs = x.shape();
    if xs.len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "l2_normalize_rows expects B x P, got {xs:?}"
        )));
    }
    let (bsz, p) = (xs[0], xs[1]);
    let xd = x.data_clone();
    let mut norms = vec![T::zero(); bsz];
    for bi in 0..bsz {
        let mut s = T::zero();
        for j in 0..p {
            let v = xd[bi * p + j];
            s = s + v * v;
        }
        norms[bi] = s.sqrt();
        if norms[bi] == T::zero() {
            return Err(Error::InvalidArg(format!(
                "l2_normalize_rows: row {bi} has zero norm"
            )));
        }
    }
    let mut y = vec![T::zero(); bsz * p];
    for bi in 0..bsz {
        for j in 0..p {
            y[bi * p + j] = xd[bi * p + j] / norms[bi];
        }
    }
    let tracked = x.requires_grad();
    let out = make_output(g, &xs, y.clone(), tracked);
    if tracked && g.is_recording() {
        let (x, out_c) = (x.clone(), out.clone());
        g.record(move || {
            let Some(gy) = out_c.grad() else { return };
            // d/dx (x/|x|) = (I - y y^T)/|x|
            let mut gx = vec![T::zero(); bsz * p];
            for bi in 0..bsz {
                let mut dot = T::zero();
                for j in 0..p {
                    dot = dot + gy[bi * p + j] * y[bi * p + j];
                }
                for j in 0..p {
                    gx[bi * p + j] = (gy[bi * p + j] - y[bi * p + j] * dot) / norms[bi];
                }
            }
            x.accumulate_grad(&gx);
        });
    }
    Ok(out)
}

/// `a` (M x P) times `b` transposed (N x P) -> M x N (similarity matrices).
pub fn matmul_nt<T: Scalar>(g: &Graph<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let ash = a.shape();
    let bsh = b.shape();
    if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[1] {
        return Err(Error::ShapeMismatch(format!(
            "matmul_nt: {ash:?} x {bsh:?}^T"
        )));
    }
    let (m, p) = (ash[0], ash[1]);
    let n = bsh[0];
    let ad = a.data_clone();
    let bd = b.data_clone();
    let mut y = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = T::zero();
            for kk in 0..p {
                acc = acc + ad[i * p + kk] * bd[j * p + kk];
            }
            y[i * n + j] = acc;
        }
    }
    let tracked = any_tracked(&[a, b]);
    let out = make_output(g, &[m, n], y, tracked);
    if tracked && g.is_recording() {
        let (a, b, out_c) = (a.clone(), b.clone(), out.clone());
        g.record(move || {
            let Some(gy) = out_c.grad() else { return };
            let ad = a.data_clone();
            let bd = b.data_clone();
            if a.requires_grad() {
                let mut ga = vec![T::zero(); m * p];
                for i in 0..m {
                    for j in 0..n {
                        let go = gy[i * n + j];
                        for kk in 0..p {
                            ga[i * p + kk] = ga[i * p + kk] + go * bd[j * p + kk];
                        }
                    }
                }
                a.accumulate_grad(&ga);
            }
            if b.requires_grad() {
                let mut gb = vec![T::zero(); n * p];
                for i in 0..m {
                    for j in 0..n {
                        let go = gy[i * n + j];
                        for kk in 0..p {
                            gb[j * p + kk] = gb[j * p + kk] + go * ad[i * p + kk];
                        }
                    }
                }
                b.accumulate_grad(&gb);
            }
        });
    }
    Ok(out)
}

fn check_vec_shape<T: Scalar>(t: &Tensor<T>, c: usize, what: &str) -> Result<()> {
    if t.shape() != [c] {
        return Err(Error::ShapeMismatch(format!(
            "{what}: shape {:?} != [{c}]",
            t.shape()
        )));
    }
    Ok(())
}
