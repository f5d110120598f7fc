//! Windowed SSIM with an 11×11 Gaussian window (σ = 1.5), C1 = (0.01 L)²,
//! C2 = (0.03 L)², L = 1. At the borders the window is truncated to the image
//! and renormalized. Also provides the gradient of mean SSIM used by the
//! training losses.

use crate::error::{Error, Result};
use crate::scene::ImageBuffer;

pub const WINDOW_RADIUS: usize = 5;
pub const WINDOW_SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

/// Per-pixel SSIM values in [-1, 1], row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SsimMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl SsimMap {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Normalized 1D Gaussian taps, length `2 * WINDOW_RADIUS + 1`.
pub fn window_1d() -> [f64; 2 * WINDOW_RADIUS + 1] {
    let mut g = [0.0; 2 * WINDOW_RADIUS + 1];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - WINDOW_RADIUS as f64;
        *v = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Separable zero-padded correlation with the window (the window is symmetric,
/// so this is also its own transpose).
fn blur(src: &[f64], w: usize, h: usize, g: &[f64]) -> Vec<f64> {
    let r = WINDOW_RADIUS as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for k in -r..=r {
                let xx = x as isize + k;
                if xx >= 0 && (xx as usize) < w {
                    acc += g[(k + r) as usize] * row[xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for k in -r..=r {
            let yy = y as isize + k;
            if yy < 0 || yy as usize >= h {
                continue;
            }
            let gk = g[(k + r) as usize];
            let src_row = &tmp[yy as usize * w..(yy as usize + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src_row) {
                *d += gk * s;
            }
        }
    }
    out
}

/// In-image window mass at every pixel (product of the 1D masses).
fn window_mass(w: usize, h: usize, g: &[f64]) -> Vec<f64> {
    let mass_1d = |n: usize| -> Vec<f64> {
        let r = WINDOW_RADIUS as isize;
        (0..n as isize)
            .map(|i| {
                (-r..=r)
                    .filter(|k| i + k >= 0 && ((i + k) as usize) < n)
                    .map(|k| g[(k + r) as usize])
                    .sum()
            })
            .collect()
    };
    let (mx, my) = (mass_1d(w), mass_1d(h));
    let mut z = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            z[y * w + x] = mx[x] * my[y];
        }
    }
    z
}

struct Stats {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    m_xx: Vec<f64>,
    m_yy: Vec<f64>,
    m_xy: Vec<f64>,
    mass: Vec<f64>,
}

fn local_stats(x: &[f64], y: &[f64], w: usize, h: usize, g: &[f64]) -> Stats {
    let mass = window_mass(w, h, g);
    let norm = |v: Vec<f64>| v.into_iter().zip(&mass).map(|(a, z)| a / z).collect::<Vec<_>>();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    Stats {
        mu_x: norm(blur(x, w, h, g)),
        mu_y: norm(blur(y, w, h, g)),
        m_xx: norm(blur(&xx, w, h, g)),
        m_yy: norm(blur(&yy, w, h, g)),
        m_xy: norm(blur(&xy, w, h, g)),
        mass,
    }
}

#[inline]
fn ssim_terms(mx: f64, my: f64, mxx: f64, myy: f64, mxy: f64) -> (f64, f64, f64, f64) {
    let a1 = 2.0 * mx * my + C1;
    let a2 = 2.0 * (mxy - mx * my) + C2;
    let b1 = mx * mx + my * my + C1;
    let b2 = (mxx - mx * mx) + (myy - my * my) + C2;
    (a1, a2, b1, b2)
}

/// SSIM of two equal-size planar channels.
pub fn ssim_plane(x: &[f64], y: &[f64], w: usize, h: usize) -> Vec<f64> {
    let g = window_1d();
    let s = local_stats(x, y, w, h, &g);
    (0..w * h)
        .map(|i| {
            let (a1, a2, b1, b2) = ssim_terms(s.mu_x[i], s.mu_y[i], s.m_xx[i], s.m_yy[i], s.m_xy[i]);
            (a1 * a2) / (b1 * b2)
        })
        .collect()
}

/// Per-pixel SSIM. Three-channel inputs are converted to luma first.
pub fn ssim_map(a: &ImageBuffer, b: &ImageBuffer) -> Result<SsimMap> {
    if !a.same_size(b) {
        return Err(Error::mismatch(format!(
            "ssim inputs {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let (la, lb) = (a.luma(), b.luma());
    Ok(SsimMap {
        width: a.width,
        height: a.height,
        values: ssim_plane(&la.data, &lb.data, a.width, a.height),
    })
}

/// Mean SSIM of one channel pair and its gradient w.r.t. every pixel of `x`.
pub fn ssim_mean_grad(x: &[f64], y: &[f64], w: usize, h: usize) -> (f64, Vec<f64>) {
    let g = window_1d();
    let s = local_stats(x, y, w, h, &g);
    let n = (w * h) as f64;
    let mut mean = 0.0;
    // d(mean S)/d(stat) at each window center, divided by the window mass so
    // that blurring applies the transposed (renormalized) window.
    let mut d_mu = vec![0.0; w * h];
    let mut d_mxx = vec![0.0; w * h];
    let mut d_mxy = vec![0.0; w * h];
    for i in 0..w * h {
        let (mx, my) = (s.mu_x[i], s.mu_y[i]);
        let (a1, a2, b1, b2) = ssim_terms(mx, my, s.m_xx[i], s.m_yy[i], s.m_xy[i]);
        let den = b1 * b2;
        let ssim = a1 * a2 / den;
        mean += ssim;
        let ds_dmu = (2.0 * my * a2 - 2.0 * my * a1) / den - ssim * (2.0 * mx / b1 - 2.0 * mx / b2);
        let ds_dmxx = -ssim / b2;
        let ds_dmxy = 2.0 * a1 / den;
        let k = 1.0 / (n * s.mass[i]);
        d_mu[i] = ds_dmu * k;
        d_mxx[i] = ds_dmxx * k;
        d_mxy[i] = ds_dmxy * k;
    }
    let t_mu = blur(&d_mu, w, h, &g);
    let t_xx = blur(&d_mxx, w, h, &g);
    let t_xy = blur(&d_mxy, w, h, &g);
    let grad = (0..w * h)
        .map(|q| t_mu[q] + 2.0 * x[q] * t_xx[q] + y[q] * t_xy[q])
        .collect();
    (mean / n, grad)
}
