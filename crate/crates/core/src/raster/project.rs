//! EWA projection of a 3D Gaussian into the image plane.

use nalgebra::{Matrix2x3, Matrix3, Vector3};

use super::sh::{num_coeffs, sh_basis};
use super::{COV_DILATION, NEAR_PLANE, SIGMA_CUTOFF};
use crate::scene::{sigmoid, Camera, Gaussian3D};

/// SH degrees used when shading colors and change.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShDegrees {
    pub color: u8,
    pub change: u8,
}

impl Default for ShDegrees {
    fn default() -> Self {
        Self { color: 3, change: 0 }
    }
}

/// Screen-space footprint and shading of one Gaussian for one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedGaussian {
    /// Index into the source cloud.
    pub index: usize,
    pub mean: [f64; 2],
    /// Dilated 2D covariance (xx, xy, yy), pixels².
    pub cov: [f64; 3],
    /// Inverse of `cov`.
    pub conic: [f64; 3],
    /// Camera-space z of the mean.
    pub depth: f64,
    pub color: [f64; 3],
    pub change: f64,
    pub opacity: f64,
    pub change_opacity: f64,
    /// Inclusive pixel range touched by the 3σ ellipse: x0, x1, y0, y1.
    pub pixel_rect: [usize; 4],
}

pub(crate) fn jacobian(cam: &Camera, p: &Vector3<f64>) -> Matrix2x3<f64> {
    let (x, y, z) = (p.x, p.y, p.z);
    let iz = 1.0 / z;
    Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * x * iz * iz,
        0.0,
        cam.fy * iz,
        -cam.fy * y * iz * iz,
    )
}

/// Unit view direction from the camera center to `position`, and the distance.
pub(crate) fn view_direction(cam: &Camera, position: &Vector3<f64>) -> ([f64; 3], f64) {
    let v = position - cam.center();
    let n = v.norm();
    if n > 0.0 {
        ([v.x / n, v.y / n, v.z / n], n)
    } else {
        ([0.0, 0.0, 1.0], 0.0)
    }
}

/// Raw SH sums per color channel (before the +0.5 offset).
pub(crate) fn color_raw(g: &Gaussian3D, degree: u8, basis: &[f64; 16]) -> [f64; 3] {
    let n = num_coeffs(degree.min(3));
    let mut out = [0.0; 3];
    for (k, y) in basis.iter().enumerate().take(n) {
        for (c, o) in out.iter_mut().enumerate() {
            *o += y * g.sh_color[k][c] as f64;
        }
    }
    out
}

pub(crate) fn change_raw(g: &Gaussian3D, degree: u8, basis: &[f64; 16]) -> f64 {
    let n = num_coeffs(degree.min(3));
    let mut raw = g.change_dc as f64;
    for k in 1..n {
        raw += basis[k] * g.change_rest[k - 1] as f64;
    }
    raw
}

/// Project `g` into `cam`. Returns `None` when the mean is at or behind the
/// near plane, the covariance is degenerate, or the 3σ ellipse covers no pixel
/// center.
pub fn project(g: &Gaussian3D, index: usize, cam: &Camera, degrees: ShDegrees) -> Option<ProjectedGaussian> {
    let mu = Vector3::new(g.position[0] as f64, g.position[1] as f64, g.position[2] as f64);
    let p = cam.rotation_w2c * mu + cam.translation_w2c;
    if !(p.z > NEAR_PLANE) {
        return None;
    }
    let sigma: Matrix3<f64> = g.covariance().ok()?;
    let t = jacobian(cam, &p) * cam.rotation_w2c;
    let c2 = t * sigma * t.transpose();
    let cov = [
        c2[(0, 0)] + COV_DILATION,
        0.5 * (c2[(0, 1)] + c2[(1, 0)]),
        c2[(1, 1)] + COV_DILATION,
    ];
    let det = cov[0] * cov[2] - cov[1] * cov[1];
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = [cov[2] / det, -cov[1] / det, cov[0] / det];
    let mean = [cam.fx * p.x / p.z + cam.cx, cam.fy * p.y / p.z + cam.cy];

    // Bounding box of dᵀ Σ⁻¹ d ≤ cutoff² is mean ± cutoff·sqrt(diag Σ).
    let rx = SIGMA_CUTOFF * cov[0].sqrt();
    let ry = SIGMA_CUTOFF * cov[2].sqrt();
    let rect = pixel_range(mean[0], rx, cam.width).zip(pixel_range(mean[1], ry, cam.height))?;

    let (dir, _) = view_direction(cam, &mu);
    let basis = sh_basis(dir);
    let raw = color_raw(g, degrees.color, &basis);
    let color = raw.map(|r| (r + 0.5).clamp(0.0, 1.0));
    let change = sigmoid(change_raw(g, degrees.change, &basis));

    Some(ProjectedGaussian {
        index,
        mean,
        cov,
        conic,
        depth: p.z,
        color,
        change,
        opacity: g.opacity(),
        change_opacity: g.change_opacity(),
        pixel_rect: [rect.0 .0, rect.0 .1, rect.1 .0, rect.1 .1],
    })
}

/// Inclusive range of pixel indices whose centers (i + 0.5) lie in
/// [center - radius, center + radius], clipped to the image.
fn pixel_range(center: f64, radius: f64, size: usize) -> Option<(usize, usize)> {
    if !center.is_finite() || !radius.is_finite() {
        return None;
    }
    let lo = (center - radius - 0.5).ceil().max(0.0);
    let hi = (center + radius - 0.5).floor().min(size as f64 - 1.0);
    if lo > hi {
        None
    } else {
        Some((lo as usize, hi as usize))
    }
}
