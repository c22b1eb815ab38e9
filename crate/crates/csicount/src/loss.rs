//! Training objectives: NT-Xent contrastive loss, cross-entropy, focal
//! loss, and the adversarial discriminator/generator pair.
//!
//! The classification losses are fused log-sum-exp ops with analytic
//! backward passes; NT-Xent composes the engine's row-normalize and
//! similarity-matrix ops with a fused anchor-wise cross-entropy so that
//! gradients flow back into the projections automatically.

use crate::ndtensor::{ops, Graph, Tensor};
use crate::{Error, Result, Scalar};

/// Projections of 2N augmented views where rows 2i and 2i+1 form a
/// positive pair, plus the softmax temperature.
pub struct ContrastiveBatch<T> {
    pub projections: Tensor<T>,
    pub temperature: T,
}

fn softplus<T: Scalar>(x: T) -> T {
    // max(x,0) + ln(1 + e^-|x|)
    x.max(T::zero()) + (T::one() + (-x.abs()).exp()).ln()
}

/// NT-Xent over all 2N anchors with cosine similarity, mean reduction.
pub fn nt_xent<T: Scalar>(g: &Graph<T>, batch: &ContrastiveBatch<T>) -> Result<Tensor<T>> {
    let shape = batch.projections.shape();
    if shape.len() != 2 || shape[0] < 2 || shape[0] % 2 != 0 {
        return Err(Error::InvalidArg(format!(
            "nt_xent expects 2N x P projections with N >= 1, got {shape:?}"
        )));
    }
    if batch.temperature <= T::zero() {
        return Err(Error::InvalidArg("nt_xent: temperature must be > 0".into()));
    }
    let zn = ops::l2_normalize_rows(g, &batch.projections)?;
    let sim = ops::matmul_nt(g, &zn, &zn)?;
    pairwise_info_nce(g, &sim, batch.temperature)
}

/// Anchor-wise cross-entropy over a 2N x 2N cosine-similarity matrix:
/// the diagonal is excluded from each denominator and the target of anchor
/// i is its partner i^1. Mean over anchors.
fn pairwise_info_nce<T: Scalar>(g: &Graph<T>, sim: &Tensor<T>, tau: T) -> Result<Tensor<T>> {
    let n2 = sim.shape()[0];
    let sd = sim.data_clone();
    let n2_t = T::from_f64(n2 as f64);

    let mut total = T::zero();
    // per-anchor masked softmax, saved for backward
    let mut probs = vec![T::zero(); n2 * n2];
    for i in 0..n2 {
        let partner = i ^ 1;
        let mut m = T::neg_infinity();
        for k in 0..n2 {
            if k != i {
                m = m.max(sd[i * n2 + k] / tau);
            }
        }
        let mut denom = T::zero();
        for k in 0..n2 {
            if k != i {
                let e = (sd[i * n2 + k] / tau - m).exp();
                probs[i * n2 + k] = e;
                denom = denom + e;
            }
        }
        for k in 0..n2 {
            probs[i * n2 + k] = probs[i * n2 + k] / denom;
        }
        let lse = m + denom.ln();
        total = total + lse - sd[i * n2 + partner] / tau;
    }
    let loss_val = total / n2_t;

    let tracked = sim.requires_grad();
    let out = Tensor::scalar(loss_val);
    if tracked && g.is_recording() {
        out.set_requires_grad(true);
        let (sim, out_c) = (sim.clone(), out.clone());
        g.record(move || {
            let Some(gy) = out_c.grad() else { return };
            let go = gy[0];
            let mut gs = vec![T::zero(); n2 * n2];
            for i in 0..n2 {
                let partner = i ^ 1;
                for k in 0..n2 {
                    if k == i {
                        continue;
                    }
                    let target = if k == partner { T::one() } else { T::zero() };
                    gs[i * n2 + k] = go * (probs[i * n2 + k] - target) / (tau * n2_t);
                }
            }
            sim.accumulate_grad(&gs);
        });
    }
    Ok(out)
}

fn check_labels(labels: &[usize], bsz: usize, k: usize) -> Result<()> {
    if labels.len() != bsz {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for batch of {bsz}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArg(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    Ok(())
}

/// Row-wise softmax in plain vectors (shared by the fused losses).
fn softmax_rows<T: Scalar>(logits: &[T], bsz: usize, k: usize) -> Vec<T> {
    let mut p = vec![T::zero(); bsz * k];
    for bi in 0..bsz {
        let row = &logits[bi * k..(bi + 1) * k];
        let m = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for (j, &v) in row.iter().enumerate() {
            let e = (v - m).exp();
            p[bi * k + j] = e;
            denom = denom + e;
        }
        for j in 0..k {
            p[bi * k + j] = p[bi * k + j] / denom;
        }
    }
    p
}

/// Mean of -log softmax(logits)[label], computed via log-sum-exp.
pub fn cross_entropy<T: Scalar>(
    g: &Graph<T>,
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<Tensor<T>> {
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "cross_entropy expects B x K logits, got {shape:?}"
        )));
    }
    let (bsz, k) = (shape[0], shape[1]);
    check_labels(labels, bsz, k)?;
    let ld = logits.data_clone();
    let b_t = T::from_f64(bsz as f64);

    let mut total = T::zero();
    for (bi, &lab) in labels.iter().enumerate() {
        let row = &ld[bi * k..(bi + 1) * k];
        let m = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).fold(T::zero(), |a, e| a + e).ln();
        total = total + lse - row[lab];
    }
    let out = Tensor::scalar(total / b_t);

    if logits.requires_grad() && g.is_recording() {
        out.set_requires_grad(true);
        let (logits_c, out_c) = (logits.clone(), out.clone());
        let labels = labels.to_vec();
        g.record(move || {
            let Some(gy) = out_c.grad() else { return };
            let go = gy[0];
            let ld = logits_c.data_clone();
            let mut p = softmax_rows(&ld, bsz, k);
            for (bi, &lab) in labels.iter().enumerate() {
                p[bi * k + lab] = p[bi * k + lab] - T::one();
            }
            for v in p.iter_mut() {
                *v = *v * go / b_t;
            }
            logits_c.accumulate_grad(&p);
        });
    }
    Ok(out)
}

/// Mean of -(1 - p_t)^gamma * log p_t, p_t the true-class probability.
/// gamma = 0 reduces to cross-entropy.
pub fn focal_loss<T: Scalar>(
    g: &Graph<T>,
    logits: &Tensor<T>,
    labels: &[usize],
    gamma: T,
) -> Result<Tensor<T>> {
    if gamma < T::zero() {
        return Err(Error::InvalidArg("focal_loss: gamma must be >= 0".into()));
    }
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "focal_loss expects B x K logits, got {shape:?}"
        )));
    }
    let (bsz, k) = (shape[0], shape[1]);
    check_labels(labels, bsz, k)?;
    let ld = logits.data_clone();
    let b_t = T::from_f64(bsz as f64);
    let p = softmax_rows(&ld, bsz, k);

    let mut total = T::zero();
    for (bi, &lab) in labels.iter().enumerate() {
        let pt = p[bi * k + lab];
        let focus = (T::one() - pt).max(T::zero()).powf(gamma);
        total = total - focus * pt.ln();
    }
    let out = Tensor::scalar(total / b_t);

    if logits.requires_grad() && g.is_recording() {
        out.set_requires_grad(true);
        let (logits_c, out_c) = (logits.clone(), out.clone());
        let labels = labels.to_vec();
        g.record(move || {
            let Some(gy) = out_c.grad() else { return };
            let go = gy[0];
            let ld = logits_c.data_clone();
            let p = softmax_rows(&ld, bsz, k);
            let mut grad = vec![T::zero(); bsz * k];
            for (bi, &lab) in labels.iter().enumerate() {
                let pt = p[bi * k + lab];
                let one_m = (T::one() - pt).max(T::zero());
                // dL/dpt with L = -(1-pt)^g ln pt
                let dl_dpt = if gamma == T::zero() {
                    -pt.recip()
                } else {
                    gamma * one_m.powf(gamma - T::one()) * pt.ln() - one_m.powf(gamma) / pt
                };
                for j in 0..k {
                    let delta = if j == lab { T::one() } else { T::zero() };
                    // dpt/dz_j = pt (delta - p_j)
                    grad[bi * k + j] = go * dl_dpt * pt * (delta - p[bi * k + j]) / b_t;
                }
            }
            logits_c.accumulate_grad(&grad);
        });
    }
    Ok(out)
}

fn flat_logits<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<usize> {
    let s = t.shape();
    let ok = s.len() == 1 || (s.len() == 2 && s[1] == 1);
    if !ok || t.numel() == 0 {
        return Err(Error::ShapeMismatch(format!(
            "{what}: expected non-empty B or B x 1 logits, got {s:?}"
        )));
    }
    Ok(t.numel())
}

/// Binary cross-entropy on raw domain logits, source labeled 1 and target
/// labeled 0: -mean log sigma(d_src) - mean log(1 - sigma(d_tgt)).
pub fn adda_discriminator_loss<T: Scalar>(
    g: &Graph<T>,
    d_src: &Tensor<T>,
    d_tgt: &Tensor<T>,
) -> Result<Tensor<T>> {
    let ns = flat_logits(d_src, "adda_discriminator_loss src")?;
    let nt = flat_logits(d_tgt, "adda_discriminator_loss tgt")?;
    let (ns_t, nt_t) = (T::from_f64(ns as f64), T::from_f64(nt as f64));
    let sd = d_src.data_clone();
    let td = d_tgt.data_clone();
    // -log sigma(x) = softplus(-x); -log(1 - sigma(x)) = softplus(x)
    let src_term = sd.iter().map(|&v| softplus(-v)).fold(T::zero(), |a, v| a + v) / ns_t;
    let tgt_term = td.iter().map(|&v| softplus(v)).fold(T::zero(), |a, v| a + v) / nt_t;
    let out = Tensor::scalar(src_term + tgt_term);

    let tracked = d_src.requires_grad() || d_tgt.requires_grad();
    if tracked && g.is_recording() {
        out.set_requires_grad(true);
        let (src, tgt, out_c) = (d_src.clone(), d_tgt.clone(), out.clone());
        g.record(move || {
            let Some(gy) = out_c.grad() else { return };
            let go = gy[0];
            if src.requires_grad() {
                let gs: Vec<T> = src
                    .data_clone()
                    .iter()
                    .map(|&v| go * (ops::sigmoid_scalar(v) - T::one()) / ns_t)
                    .collect();
                src.accumulate_grad(&gs);
            }
            if tgt.requires_grad() {
                let gt: Vec<T> = tgt
                    .data_clone()
                    .iter()
                    .map(|&v| go * ops::sigmoid_scalar(v) / nt_t)
                    .collect();
                tgt.accumulate_grad(&gt);
            }
        });
    }
    Ok(out)
}

/// Non-saturating generator objective: -mean log sigma(d_tgt).
pub fn adda_generator_loss<T: Scalar>(g: &Graph<T>, d_tgt: &Tensor<T>) -> Result<Tensor<T>> {
    let n = flat_logits(d_tgt, "adda_generator_loss")?;
    let n_t = T::from_f64(n as f64);
    let td = d_tgt.data_clone();
    let val = td.iter().map(|&v| softplus(-v)).fold(T::zero(), |a, v| a + v) / n_t;
    let out = Tensor::scalar(val);

    if d_tgt.requires_grad() && g.is_recording() {
        out.set_requires_grad(true);
        let (tgt, out_c) = (d_tgt.clone(), out.clone());
        g.record(move || {
            let Some(gy) = out_c.grad() else { return };
            let go = gy[0];
            let gt: Vec<T> = tgt
                .data_clone()
                .iter()
                .map(|&v| go * (ops::sigmoid_scalar(v) - T::one()) / n_t)
                .collect();
            tgt.accumulate_grad(&gt);
        });
    }
    Ok(out)
}
