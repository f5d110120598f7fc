//! Photometric losses: `(1 − λ)·L1 + λ·(1 − SSIM)/2`, with analytic
//! per-pixel gradients.
//!
//! L1 is the mean absolute error over all values. SSIM is computed per
//! channel and averaged over channels.

use crate::error::{Error, Result};
use crate::raster::{RenderOutput, UpstreamGrads};
use crate::scene::{ChangeMask, ImageBuffer};
use crate::ssim::ssim_mean_grad;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub l1: f64,
    /// Mean SSIM, computed only when λ > 0.
    pub ssim: Option<f64>,
}

/// Loss between interleaved `pred` and `target` planes and its gradient
/// w.r.t. `pred`.
pub fn image_loss(
    pred: &[f64],
    target: &[f64],
    width: usize,
    height: usize,
    channels: usize,
    lambda: f64,
) -> Result<(LossValue, Vec<f64>)> {
    let n = width * height * channels;
    if pred.len() != n || target.len() != n {
        return Err(Error::mismatch(format!(
            "loss over {width}x{height}x{channels} got {} and {} values",
            pred.len(),
            target.len()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("λ_dssim {lambda} outside [0, 1]")));
    }
    let inv_n = 1.0 / n as f64;
    let mut l1 = 0.0;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let d = pred[i] - target[i];
        l1 += d.abs();
        // sign(0) = 0 so a perfect match has zero gradient
        grad[i] = (1.0 - lambda) * inv_n * if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
    }
    l1 *= inv_n;

    // with λ = 0 the SSIM term is skipped and its weight below is zero
    let mut ssim = 1.0;
    if lambda > 0.0 {
        ssim = 0.0;
        let mut xp = vec![0.0; width * height];
        let mut yp = vec![0.0; width * height];
        for c in 0..channels {
            for q in 0..width * height {
                xp[q] = pred[q * channels + c];
                yp[q] = target[q * channels + c];
            }
            let (s, g) = ssim_mean_grad(&xp, &yp, width, height);
            ssim += s / channels as f64;
            let k = -0.5 * lambda / channels as f64;
            for q in 0..width * height {
                grad[q * channels + c] += k * g[q];
            }
        }
    }
    let total = (1.0 - lambda) * l1 + lambda * (1.0 - ssim) * 0.5;
    let ssim = (lambda > 0.0).then_some(ssim);
    Ok((LossValue { total, l1, ssim }, grad))
}

/// RGB loss against `target`; gradients land in the `rgb` upstream buffer.
pub fn loss_rgb(render: &RenderOutput, target: &ImageBuffer, lambda: f64) -> Result<(LossValue, UpstreamGrads)> {
    if !render.rgb.same_size(target) || target.channels != 3 {
        return Err(Error::mismatch(format!(
            "render {}x{} vs target {}x{}x{}",
            render.width(),
            render.height(),
            target.width,
            target.height,
            target.channels
        )));
    }
    let (w, h) = (target.width, target.height);
    let (v, g) = image_loss(&render.rgb.data, &target.data, w, h, 3, lambda)?;
    let mut up = UpstreamGrads::zeros(w, h);
    up.rgb = g;
    Ok((v, up))
}

/// Change-channel loss against a (possibly continuous) mask; gradients land
/// in the `change` upstream buffer only.
pub fn loss_change(render: &RenderOutput, target: &ChangeMask, lambda: f64) -> Result<(LossValue, UpstreamGrads)> {
    if (render.width(), render.height()) != (target.width, target.height) {
        return Err(Error::mismatch(format!(
            "render {}x{} vs mask {}x{}",
            render.width(),
            render.height(),
            target.width,
            target.height
        )));
    }
    let (w, h) = (target.width, target.height);
    let (v, g) = image_loss(&render.change.data, &target.values, w, h, 1, lambda)?;
    let mut up = UpstreamGrads::zeros(w, h);
    up.change = g;
    Ok((v, up))
}
