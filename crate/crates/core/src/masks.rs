//! Candidate change masks: structure-aware (low SSIM), feature-aware (patch
//! embedding difference), their product, alpha filtering of rendered masks,
//! and binarization.

use crate::error::{Error, Result};
use crate::scene::{ChangeMask, FeatureMap, ImageBuffer};
pub use crate::ssim::{ssim_map, SsimMap};

/// SSIM at or below this is structural change.
pub const SSIM_CHANGE_THRESHOLD: f64 = 0.5;
/// Feature-difference values below this are zeroed.
pub const FEATURE_FLOOR: f64 = 0.5;
/// Rendered alpha at or above this counts as observed.
pub const ALPHA_SEEN_THRESHOLD: f64 = 0.5;

fn check_same(a: (usize, usize), b: (usize, usize), what: &str) -> Result<()> {
    if a != b {
        return Err(Error::mismatch(format!(
            "{what}: {}x{} vs {}x{}",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}

/// Binary mask of pixels whose SSIM is ≤ 0.5.
pub fn structure_mask(i_ren: &ImageBuffer, i_inf: &ImageBuffer) -> Result<ChangeMask> {
    Ok(structure_mask_from_ssim(&ssim_map(i_ren, i_inf)?))
}

/// Threshold an SSIM map (inclusive at 0.5).
pub fn structure_mask_from_ssim(s: &SsimMap) -> ChangeMask {
    let values = s
        .values
        .iter()
        .map(|&v| if v <= SSIM_CHANGE_THRESHOLD { 1.0 } else { 0.0 })
        .collect();
    ChangeMask::from_parts_unchecked(s.width, s.height, values, true)
}

/// Per-patch summed absolute feature difference, min-max normalized to
/// [0, 1] (all zeros when every patch has the same difference), before any
/// thresholding. Row-major over the grid.
pub fn feature_diff_grid(f_ren: &FeatureMap, f_inf: &FeatureMap) -> Result<Vec<f64>> {
    if (f_ren.grid_h, f_ren.grid_w, f_ren.dim) != (f_inf.grid_h, f_inf.grid_w, f_inf.dim) {
        return Err(Error::mismatch(format!(
            "feature maps {}x{}x{} vs {}x{}x{}",
            f_ren.grid_h, f_ren.grid_w, f_ren.dim, f_inf.grid_h, f_inf.grid_w, f_inf.dim
        )));
    }
    let d: Vec<f64> = f_ren
        .data
        .chunks_exact(f_ren.dim)
        .zip(f_inf.data.chunks_exact(f_inf.dim))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).abs()).sum())
        .collect();
    let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Ok(vec![0.0; d.len()]);
    }
    Ok(d.into_iter().map(|v| (v - lo) / (hi - lo)).collect())
}

/// Feature-aware mask: normalized patch differences, bicubic-upsampled to the
/// output size, clamped to [0, 1], with values below 0.5 zeroed. Values at or
/// above 0.5 keep their magnitude.
pub fn feature_diff_mask(f_ren: &FeatureMap, f_inf: &FeatureMap, out_w: usize, out_h: usize) -> Result<ChangeMask> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidArgument(format!("output size {out_w}x{out_h}")));
    }
    let grid = feature_diff_grid(f_ren, f_inf)?;
    let up = upsample_bicubic(&grid, f_ren.grid_w, f_ren.grid_h, out_w, out_h);
    let values = up
        .into_iter()
        .map(|v| {
            let v = v.clamp(0.0, 1.0);
            if v < FEATURE_FLOOR {
                0.0
            } else {
                v
            }
        })
        .collect();
    Ok(ChangeMask::from_parts_unchecked(out_w, out_h, values, false))
}

/// Catmull-Rom cubic kernel (a = -0.5).
fn cubic_weight(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Source taps and weights for resampling `n_in` samples onto `n_out`, using
/// pixel-center alignment and edge clamping.
fn resample_taps(n_in: usize, n_out: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let i0 = src.floor();
            let t = src - i0;
            let mut idx = [0usize; 4];
            let mut w = [0.0; 4];
            for k in 0..4 {
                let i = i0 as isize - 1 + k as isize;
                idx[k] = i.clamp(0, n_in as isize - 1) as usize;
                w[k] = cubic_weight(t - (k as f64 - 1.0));
            }
            (idx, w)
        })
        .collect()
}

/// Separable bicubic resampling of a row-major `in_w × in_h` grid.
pub fn upsample_bicubic(grid: &[f64], in_w: usize, in_h: usize, out_w: usize, out_h: usize) -> Vec<f64> {
    let tx = resample_taps(in_w, out_w);
    let ty = resample_taps(in_h, out_h);
    let mut rows = vec![0.0; in_h * out_w];
    for y in 0..in_h {
        for (x, (idx, w)) in tx.iter().enumerate() {
            rows[y * out_w + x] = (0..4).map(|k| w[k] * grid[y * in_w + idx[k]]).sum();
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for (y, (idx, w)) in ty.iter().enumerate() {
        for x in 0..out_w {
            out[y * out_w + x] = (0..4).map(|k| w[k] * rows[idx[k] * out_w + x]).sum();
        }
    }
    out
}

/// Elementwise product of the feature-aware and structure-aware masks.
pub fn combine_masks(m_f: &ChangeMask, m_s: &ChangeMask) -> Result<ChangeMask> {
    check_same((m_f.width, m_f.height), (m_s.width, m_s.height), "combine_masks")?;
    let values = m_f.values.iter().zip(&m_s.values).map(|(a, b)| a * b).collect();
    Ok(ChangeMask::from_parts_unchecked(
        m_f.width,
        m_f.height,
        values,
        m_f.is_binary() && m_s.is_binary(),
    ))
}

/// Zero out rendered change wherever the rendered alpha is below 0.5.
pub fn filter_unseen(m_ren: &ChangeMask, a_ren: &ImageBuffer) -> Result<ChangeMask> {
    if a_ren.channels != 1 {
        return Err(Error::mismatch("alpha must be single-channel"));
    }
    check_same((m_ren.width, m_ren.height), (a_ren.width, a_ren.height), "filter_unseen")?;
    let values = m_ren
        .values
        .iter()
        .zip(&a_ren.data)
        .map(|(m, a)| if *a >= ALPHA_SEEN_THRESHOLD { *m } else { 0.0 })
        .collect();
    Ok(ChangeMask::from_parts_unchecked(
        m_ren.width,
        m_ren.height,
        values,
        m_ren.is_binary(),
    ))
}

/// 1 where the value is ≥ `threshold`, else 0.
pub fn binarize(m: &ChangeMask, threshold: f64) -> Result<ChangeMask> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside [0, 1]")));
    }
    let values = m
        .values
        .iter()
        .map(|&v| if v >= threshold { 1.0 } else { 0.0 })
        .collect();
    Ok(ChangeMask::from_parts_unchecked(m.width, m.height, values, true))
}
