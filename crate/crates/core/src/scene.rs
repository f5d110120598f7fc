//! Scene domain types: Gaussians, clouds, cameras, images, masks and feature
//! grids, plus the activation conventions shared by every other module.
//!
//! Stored Gaussian parameters are `f32` (the on-disk precision of splat PLY
//! files); all geometry and rendering math runs in `f64`.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Number of SH coefficients per color channel at degree 3.
pub const SH_COEFFS: usize = 16;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Rotation matrix of a (w, x, y, z) quaternion. The input is normalized first.
pub fn quat_to_rotation(q: [f64; 4]) -> Result<Matrix3<f64>> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::DegenerateRotation);
    }
    let [w, x, y, z] = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
    Ok(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// (w, x, y, z) quaternion of a proper rotation matrix (Shepperd's method).
pub fn rotation_to_quat(r: &Matrix3<f64>) -> [f64; 4] {
    let tr = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
    let q = if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        [
            0.25 * s,
            (r[(2, 1)] - r[(1, 2)]) / s,
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(1, 0)] - r[(0, 1)]) / s,
        ]
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        [
            (r[(2, 1)] - r[(1, 2)]) / s,
            0.25 * s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
        ]
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        [
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            0.25 * s,
            (r[(1, 2)] + r[(2, 1)]) / s,
        ]
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        [
            (r[(1, 0)] - r[(0, 1)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
            (r[(1, 2)] + r[(2, 1)]) / s,
            0.25 * s,
        ]
    };
    if q[0] < 0.0 {
        [-q[0], -q[1], -q[2], -q[3]]
    } else {
        q
    }
}

/// 3D covariance `R S Sᵀ Rᵀ` with `S = diag(exp(log_scale))`.
pub fn cov3d(rotation: [f64; 4], log_scale: [f64; 3]) -> Result<Matrix3<f64>> {
    let r = quat_to_rotation(rotation)?;
    let m = r * Matrix3::from_diagonal(&Vector3::new(
        log_scale[0].exp(),
        log_scale[1].exp(),
        log_scale[2].exp(),
    ));
    let cov = m * m.transpose();
    // exact symmetry
    Ok((cov + cov.transpose()) * 0.5)
}

/// One anisotropic Gaussian with color and change channels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian3D {
    pub position: [f32; 3],
    /// Unit quaternion, (w, x, y, z).
    pub rotation: [f32; 4],
    pub log_scale: [f32; 3],
    pub opacity_logit: f32,
    /// `sh_color[k][c]`: coefficient `k` of color channel `c`.
    pub sh_color: [[f32; 3]; SH_COEFFS],
    /// Degree-0 change coefficient, pre-sigmoid.
    pub change_dc: f32,
    /// Higher-order change coefficients. Only read when the cloud's
    /// `change_sh_degree` is above zero; zero otherwise.
    pub change_rest: [f32; SH_COEFFS - 1],
    pub change_opacity_logit: f32,
}

/// Activated value that new change channels start from.
pub const CHANGE_INIT: f64 = 0.01;

impl Gaussian3D {
    /// Gaussian with the given geometry and a constant (view-independent) color.
    pub fn new(position: [f64; 3], log_scale: [f64; 3], rotation: [f64; 4], opacity: f64, rgb: [f64; 3]) -> Self {
        let mut sh_color = [[0.0f32; 3]; SH_COEFFS];
        for c in 0..3 {
            sh_color[0][c] = rgb_to_sh_dc(rgb[c]) as f32;
        }
        let n = (rotation.iter().map(|v| v * v).sum::<f64>()).sqrt();
        let rotation = if n > 0.0 {
            rotation.map(|v| (v / n) as f32)
        } else {
            [1.0, 0.0, 0.0, 0.0]
        };
        Self {
            position: position.map(|v| v as f32),
            rotation,
            log_scale: log_scale.map(|v| v as f32),
            opacity_logit: logit(opacity) as f32,
            sh_color,
            change_dc: logit(CHANGE_INIT) as f32,
            change_rest: [0.0; SH_COEFFS - 1],
            change_opacity_logit: logit(CHANGE_INIT) as f32,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit as f64)
    }

    pub fn change_opacity(&self) -> f64 {
        sigmoid(self.change_opacity_logit as f64)
    }

    /// Degree-0 change magnitude.
    pub fn change_magnitude(&self) -> f64 {
        sigmoid(self.change_dc as f64)
    }

    pub fn scale(&self) -> [f64; 3] {
        self.log_scale.map(|v| (v as f64).exp())
    }

    pub fn position_f64(&self) -> [f64; 3] {
        self.position.map(|v| v as f64)
    }

    pub fn rotation_f64(&self) -> [f64; 4] {
        self.rotation.map(|v| v as f64)
    }

    pub fn covariance(&self) -> Result<Matrix3<f64>> {
        cov3d(self.rotation_f64(), self.log_scale.map(|v| v as f64))
    }

    /// Reset both change channels to the activated initialization value.
    pub fn reset_change(&mut self) {
        self.change_dc = logit(CHANGE_INIT) as f32;
        self.change_rest = [0.0; SH_COEFFS - 1];
        self.change_opacity_logit = logit(CHANGE_INIT) as f32;
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.sh_color.iter().flatten().all(|v| v.is_finite())
            && self.change_dc.is_finite()
            && self.change_rest.iter().all(|v| v.is_finite())
            && self.change_opacity_logit.is_finite()
    }
}

/// DC coefficient producing `rgb` under the +0.5 SH offset convention.
pub fn rgb_to_sh_dc(rgb: f64) -> f64 {
    (rgb - 0.5) / crate::raster::sh::SH_C0
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCloud {
    pub gaussians: Vec<Gaussian3D>,
    /// Radius of the smallest sphere containing the training camera centers.
    pub scene_extent: f64,
    /// Active SH degree of the color channels (0..=3).
    pub sh_degree: u8,
    /// SH degree of the change channel; 0 keeps change view-independent.
    pub change_sh_degree: u8,
}

impl GaussianCloud {
    pub fn new(gaussians: Vec<Gaussian3D>, scene_extent: f64) -> Result<Self> {
        if gaussians.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if !(scene_extent > 0.0) || !scene_extent.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "scene extent must be positive, got {scene_extent}"
            )));
        }
        Ok(Self {
            gaussians,
            scene_extent,
            sh_degree: 3,
            change_sh_degree: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }
}

/// Pinhole camera with a world-to-camera pose (x right, y down, z forward).
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation_w2c: Matrix3<f64>,
    pub translation_w2c: Vector3<f64>,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation_w2c: Matrix3<f64>,
        translation_w2c: Vector3<f64>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidCamera(format!("image size {width}x{height}")));
        }
        if !(fx > 0.0 && fy > 0.0) || !fx.is_finite() || !fy.is_finite() {
            return Err(Error::InvalidCamera(format!("focal lengths fx={fx} fy={fy}")));
        }
        let orth = (rotation_w2c.transpose() * rotation_w2c - Matrix3::identity()).abs().max();
        let det = rotation_w2c.determinant();
        if !(orth <= 1e-6) || !((det - 1.0).abs() <= 1e-6) {
            return Err(Error::InvalidCamera(format!(
                "rotation is not proper orthonormal (|RᵀR - I| = {orth:e}, det = {det})"
            )));
        }
        if !translation_w2c.iter().all(|v| v.is_finite()) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::InvalidCamera("non-finite parameters".into()));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation_w2c,
            translation_w2c,
        })
    }

    /// Camera from a COLMAP-style (w, x, y, z) quaternion and translation.
    #[allow(clippy::too_many_arguments)]
    pub fn from_quaternion(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        qvec: [f64; 4],
        tvec: [f64; 3],
    ) -> Result<Self> {
        let r = quat_to_rotation(qvec)?;
        Self::new(fx, fy, cx, cy, width, height, r, Vector3::from(tvec))
    }

    /// Camera at `eye` looking at `target`. `up` is a world-space hint.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fov_x_deg: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("eye coincides with target".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("up vector parallel to view direction".into()))?;
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(r * eye);
        let f = width as f64 / (2.0 * (fov_x_deg.to_radians() / 2.0).tan());
        Self::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height, r, t)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation_w2c.transpose() * self.translation_w2c)
    }

    pub fn quaternion(&self) -> [f64; 4] {
        rotation_to_quat(&self.rotation_w2c)
    }
}

/// Row-major float image with 1 or 3 channels, values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!("{channels} channels")));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("size {width}x{height}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidImage(format!(
                "data length {} != {width}x{height}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidImage(format!("value {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_size(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Single-channel luma (Rec.601 weights); 1-channel images are returned as-is.
    pub fn luma(&self) -> ImageBuffer {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).clamp(0.0, 1.0))
            .collect();
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// One channel as a planar buffer.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(self.channels).copied().collect()
    }
}

/// Per-pixel change values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ChangeMask {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    binary: bool,
}

impl ChangeMask {
    /// Continuous mask.
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::InvalidMask(format!(
                "{} values for {width}x{height}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidMask(format!("value {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            values,
            binary: false,
        })
    }

    /// Binary mask; every value must be exactly 0 or 1.
    pub fn new_binary(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let mut m = Self::new(width, height, values)?;
        if let Some(v) = m.values.iter().find(|v| **v != 0.0 && **v != 1.0) {
            return Err(Error::InvalidMask(format!("non-binary value {v}")));
        }
        m.binary = true;
        Ok(m)
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
            binary: true,
        }
    }

    pub fn is_binary(&self) -> bool {
        self.binary
    }

    /// True when every value is 0 or 1, whatever the flag says.
    pub fn has_binary_values(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0 || *v == 1.0)
    }

    pub fn count_nonzero(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn as_image(&self) -> ImageBuffer {
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.values.clone(),
        }
    }

    pub(crate) fn from_parts_unchecked(width: usize, height: usize, values: Vec<f64>, binary: bool) -> Self {
        Self {
            width,
            height,
            values,
            binary,
        }
    }
}

/// Patch-grid embeddings: `grid_h × grid_w` cells of `dim` floats each.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub grid_h: usize,
    pub grid_w: usize,
    pub dim: usize,
    pub patch_size: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(grid_h: usize, grid_w: usize, dim: usize, patch_size: usize, data: Vec<f32>) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 || dim == 0 || patch_size == 0 {
            return Err(Error::InvalidFeatureMap(format!(
                "grid {grid_h}x{grid_w}, dim {dim}, patch size {patch_size}"
            )));
        }
        let expected = grid_h * grid_w * dim;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(Self {
            grid_h,
            grid_w,
            dim,
            patch_size,
            data,
        })
    }

    pub fn cell(&self, gy: usize, gx: usize) -> &[f32] {
        let start = (gy * self.grid_w + gx) * self.dim;
        &self.data[start..start + self.dim]
    }
}

/// Radius of the smallest sphere enclosing `points` (Welzl-style incremental
/// construction).
pub fn enclosing_sphere_radius(points: &[Vector3<f64>]) -> f64 {
    enclosing_sphere(points).1
}

pub fn enclosing_sphere(points: &[Vector3<f64>]) -> (Vector3<f64>, f64) {
    if points.is_empty() {
        return (Vector3::zeros(), 0.0);
    }
    let scale = points.iter().map(|p| p.norm()).fold(1.0, f64::max);
    let eps = 1e-10 * scale;
    let inside = |b: &(Vector3<f64>, f64), p: &Vector3<f64>| (p - b.0).norm() <= b.1 + eps;

    let mut ball = (points[0], 0.0);
    for i in 1..points.len() {
        if inside(&ball, &points[i]) {
            continue;
        }
        ball = (points[i], 0.0);
        for j in 0..i {
            if inside(&ball, &points[j]) {
                continue;
            }
            ball = ball2(&points[i], &points[j]);
            for k in 0..j {
                if inside(&ball, &points[k]) {
                    continue;
                }
                ball = ball3(&points[i], &points[j], &points[k]);
                for l in 0..k {
                    if inside(&ball, &points[l]) {
                        continue;
                    }
                    ball = ball4(&points[i], &points[j], &points[k], &points[l]);
                }
            }
        }
    }
    ball
}

fn ball2(a: &Vector3<f64>, b: &Vector3<f64>) -> (Vector3<f64>, f64) {
    let c = (a + b) * 0.5;
    (c, (a - c).norm())
}

fn ball3(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> (Vector3<f64>, f64) {
    let u = b - a;
    let v = c - a;
    let w = u.cross(&v);
    let w2 = w.norm_squared();
    if w2 <= 1e-24 * u.norm_squared().max(v.norm_squared()).max(1e-300) {
        // collinear: diametral ball of the farthest pair
        let cands = [ball2(a, b), ball2(a, c), ball2(b, c)];
        return cands
            .into_iter()
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
    }
    let offset = (v.cross(&w) * u.norm_squared() + w.cross(&u) * v.norm_squared()) / (2.0 * w2);
    let center = a + offset;
    (center, offset.norm())
}

fn ball4(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>, d: &Vector3<f64>) -> (Vector3<f64>, f64) {
    let m = Matrix3::from_rows(&[
        (b - a).transpose() * 2.0,
        (c - a).transpose() * 2.0,
        (d - a).transpose() * 2.0,
    ]);
    let rhs = Vector3::new(
        b.norm_squared() - a.norm_squared(),
        c.norm_squared() - a.norm_squared(),
        d.norm_squared() - a.norm_squared(),
    );
    match m.try_inverse() {
        Some(inv) => {
            let center = inv * rhs;
            (center, (a - center).norm())
        }
        None => {
            // coplanar: the smallest circumscribed 3-ball containing all four
            let pts = [a, b, c, d];
            let mut best: Option<(Vector3<f64>, f64)> = None;
            for skip in 0..4 {
                let t: Vec<_> = (0..4).filter(|&i| i != skip).map(|i| pts[i]).collect();
                let cand = ball3(t[0], t[1], t[2]);
                if (pts[skip] - cand.0).norm() <= cand.1 * (1.0 + 1e-9) + 1e-12
                    && best.map_or(true, |b| cand.1 < b.1)
                {
                    best = Some(cand);
                }
            }
            best.unwrap_or_else(|| ball2(a, d))
        }
    }
}
