//! Analytic reverse of the forward compositing and projection.
//!
//! Per-pixel gradients are accumulated into tile-private buffers (one slot per
//! entry of the tile's list) and reduced into per-Gaussian screen-space
//! gradients in fixed tile order, so results do not depend on thread count.

use nalgebra::{Matrix2, Matrix3, Vector3};
use rayon::prelude::*;

use super::project::{change_raw, color_raw, jacobian, view_direction};
use super::sh::{num_coeffs, sh_basis, sh_basis_grad};
use super::{kernel, RenderCache, ALPHA_MAX, TILE_SIZE, TRANSMITTANCE_MIN};
use crate::error::{Error, Result};
use crate::raster::ProjectedGaussian;
use crate::scene::{quat_to_rotation, sigmoid, Camera, Gaussian3D, GaussianCloud, SH_COEFFS};

/// Upstream per-pixel gradients, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct UpstreamGrads {
    pub width: usize,
    pub height: usize,
    /// ∂L/∂rgb, 3 values per pixel.
    pub rgb: Vec<f64>,
    pub change: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl UpstreamGrads {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            rgb: vec![0.0; 3 * n],
            change: vec![0.0; n],
            alpha: vec![0.0; n],
        }
    }
}

/// Gradient of the loss w.r.t. every stored parameter of one Gaussian.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GaussianGrad {
    pub position: [f64; 3],
    pub rotation: [f64; 4],
    pub log_scale: [f64; 3],
    pub opacity_logit: f64,
    pub sh_color: [[f64; 3]; SH_COEFFS],
    pub change_dc: f64,
    pub change_rest: [f64; SH_COEFFS - 1],
    pub change_opacity_logit: f64,
}

impl GaussianGrad {
    pub fn is_zero(&self) -> bool {
        *self == GaussianGrad::default()
    }
}

#[derive(Clone, Debug)]
pub struct CloudGradients {
    pub grads: Vec<GaussianGrad>,
    /// ∂L/∂(projected mean) in pixels, per Gaussian.
    pub mean2d: Vec<[f64; 2]>,
    /// Whether the Gaussian survived projection in this view.
    pub visible: Vec<bool>,
    pub width: usize,
    pub height: usize,
}

impl CloudGradients {
    /// Norm of the screen-space mean gradient in normalized device units
    /// (pixel gradient scaled by half the image size), the quantity the
    /// densification threshold is expressed in.
    pub fn densify_norm(&self, i: usize) -> f64 {
        let [gx, gy] = self.mean2d[i];
        let sx = gx * self.width as f64 * 0.5;
        let sy = gy * self.height as f64 * 0.5;
        (sx * sx + sy * sy).sqrt()
    }
}

/// Screen-space gradient of one projected Gaussian.
#[derive(Clone, Copy, Debug, Default)]
struct Grad2D {
    mean: [f64; 2],
    /// Full-matrix gradient of the conic: (xx, each off-diagonal entry, yy).
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    change: f64,
    change_opacity: f64,
}

impl Grad2D {
    fn add(&mut self, o: &Grad2D) {
        self.mean[0] += o.mean[0];
        self.mean[1] += o.mean[1];
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
        self.change += o.change;
        self.change_opacity += o.change_opacity;
    }

    #[inline]
    fn add_kernel(&mut self, p: &ProjectedGaussian, grad_g: f64, g: f64, dx: f64, dy: f64) {
        let gp = grad_g * g;
        self.mean[0] += gp * (p.conic[0] * dx + p.conic[1] * dy);
        self.mean[1] += gp * (p.conic[1] * dx + p.conic[2] * dy);
        self.conic[0] -= 0.5 * gp * dx * dx;
        self.conic[1] -= 0.5 * gp * dx * dy;
        self.conic[2] -= 0.5 * gp * dy * dy;
    }
}

#[derive(Clone, Copy)]
struct Contribution {
    slot: u32,
    g: f64,
    dx: f64,
    dy: f64,
    a: f64,
    t: f64,
    clamped: bool,
}

/// Backward pass for a forward [`render`](super::render) of the same cloud and camera.
pub fn rasterize_backward(
    cloud: &GaussianCloud,
    cam: &Camera,
    cache: &RenderCache,
    upstream: &UpstreamGrads,
) -> Result<CloudGradients> {
    let (w, h) = (cache.width, cache.height);
    if upstream.width != w
        || upstream.height != h
        || upstream.rgb.len() != 3 * w * h
        || upstream.change.len() != w * h
        || upstream.alpha.len() != w * h
    {
        return Err(Error::mismatch(format!(
            "upstream gradients {}x{} do not match render {w}x{h}",
            upstream.width, upstream.height
        )));
    }
    if cam.width != w || cam.height != h {
        return Err(Error::mismatch("camera does not match render cache"));
    }

    let per_tile: Vec<Vec<Grad2D>> = (0..cache.tile_lists.len())
        .into_par_iter()
        .map(|t| backward_tile(cache, t, upstream))
        .collect();

    let mut screen = vec![Grad2D::default(); cache.projected.len()];
    for (list, grads) in cache.tile_lists.iter().zip(&per_tile) {
        for (&k, g) in list.iter().zip(grads) {
            screen[k as usize].add(g);
        }
    }

    let per_gaussian: Vec<GaussianGrad> = cache
        .projected
        .par_iter()
        .zip(screen.par_iter())
        .map(|(p, g2)| backprop_gaussian(&cloud.gaussians[p.index], cam, cache, p, g2))
        .collect();

    let n = cloud.len();
    let mut out = CloudGradients {
        grads: vec![GaussianGrad::default(); n],
        mean2d: vec![[0.0; 2]; n],
        visible: vec![false; n],
        width: w,
        height: h,
    };
    for ((p, g2), g) in cache.projected.iter().zip(&screen).zip(per_gaussian) {
        out.grads[p.index] = g;
        out.mean2d[p.index] = g2.mean;
        out.visible[p.index] = true;
    }
    Ok(out)
}

fn backward_tile(cache: &RenderCache, t: usize, up: &UpstreamGrads) -> Vec<Grad2D> {
    let list = &cache.tile_lists[t];
    let mut grads = vec![Grad2D::default(); list.len()];
    if list.is_empty() {
        return grads;
    }
    let projected = &cache.projected;
    let (x0, y0) = ((t % cache.tiles_x) * TILE_SIZE, (t / cache.tiles_x) * TILE_SIZE);
    let (x1, y1) = ((x0 + TILE_SIZE).min(cache.width), (y0 + TILE_SIZE).min(cache.height));
    let mut rgb_chain: Vec<Contribution> = Vec::with_capacity(list.len());
    let mut change_chain: Vec<Contribution> = Vec::with_capacity(list.len());

    for y in y0..y1 {
        for x in x0..x1 {
            let i = y * cache.width + x;
            let g_rgb = [up.rgb[3 * i], up.rgb[3 * i + 1], up.rgb[3 * i + 2]];
            let g_alpha = up.alpha[i];
            let g_change = up.change[i];
            let want_rgb = g_rgb != [0.0; 3] || g_alpha != 0.0;
            let want_change = g_change != 0.0;
            if !want_rgb && !want_change {
                continue;
            }
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);

            // Replay the forward pass for this pixel.
            rgb_chain.clear();
            change_chain.clear();
            let (mut tr, mut tc) = (1.0, 1.0);
            let (mut rgb_done, mut change_done) = (false, false);
            for (slot, &k) in list.iter().enumerate() {
                if rgb_done && change_done {
                    break;
                }
                let p = &projected[k as usize];
                let Some((g, dx, dy)) = kernel(p, px, py) else {
                    continue;
                };
                if !rgb_done {
                    let raw = p.opacity * g;
                    let a = raw.min(ALPHA_MAX);
                    rgb_chain.push(Contribution {
                        slot: slot as u32,
                        g,
                        dx,
                        dy,
                        a,
                        t: tr,
                        clamped: raw > ALPHA_MAX,
                    });
                    tr *= 1.0 - a;
                    rgb_done = tr < TRANSMITTANCE_MIN;
                }
                if !change_done {
                    let raw = p.change_opacity * g;
                    let a = raw.min(ALPHA_MAX);
                    change_chain.push(Contribution {
                        slot: slot as u32,
                        g,
                        dx,
                        dy,
                        a,
                        t: tc,
                        clamped: raw > ALPHA_MAX,
                    });
                    tc *= 1.0 - a;
                    change_done = tc < TRANSMITTANCE_MIN;
                }
            }

            if want_rgb {
                let t_final = tr;
                let mut suffix = [0.0f64; 3];
                for c in rgb_chain.iter().rev() {
                    let p = &projected[list[c.slot as usize] as usize];
                    let inv = 1.0 / (1.0 - c.a);
                    let mut g_a = g_alpha * t_final * inv;
                    let w = c.a * c.t;
                    let gs = &mut grads[c.slot as usize];
                    for ch in 0..3 {
                        g_a += g_rgb[ch] * (p.color[ch] * c.t - suffix[ch] * inv);
                        gs.color[ch] += g_rgb[ch] * w;
                        suffix[ch] += p.color[ch] * w;
                    }
                    if !c.clamped {
                        gs.opacity += g_a * c.g;
                        gs.add_kernel(p, g_a * p.opacity, c.g, c.dx, c.dy);
                    }
                }
            }
            if want_change {
                let mut suffix = 0.0f64;
                for c in change_chain.iter().rev() {
                    let p = &projected[list[c.slot as usize] as usize];
                    let inv = 1.0 / (1.0 - c.a);
                    let w = c.a * c.t;
                    let g_a = g_change * (p.change * c.t - suffix * inv);
                    let gs = &mut grads[c.slot as usize];
                    gs.change += g_change * w;
                    suffix += p.change * w;
                    if !c.clamped {
                        gs.change_opacity += g_a * c.g;
                        gs.add_kernel(p, g_a * p.change_opacity, c.g, c.dx, c.dy);
                    }
                }
            }
        }
    }
    grads
}

/// Chain screen-space gradients back to the stored parameters of one Gaussian.
fn backprop_gaussian(
    g: &Gaussian3D,
    cam: &Camera,
    cache: &RenderCache,
    p: &ProjectedGaussian,
    g2: &Grad2D,
) -> GaussianGrad {
    let mut out = GaussianGrad::default();
    let w = &cam.rotation_w2c;
    let mu = Vector3::new(g.position[0] as f64, g.position[1] as f64, g.position[2] as f64);
    let pc = w * mu + cam.translation_w2c;
    let (x, y, z) = (pc.x, pc.y, pc.z);
    let iz = 1.0 / z;

    // Conic -> 2D covariance: ∂L/∂C = -K (∂L/∂K) K.
    let k = Matrix2::new(p.conic[0], p.conic[1], p.conic[1], p.conic[2]);
    let gk = Matrix2::new(g2.conic[0], g2.conic[1], g2.conic[1], g2.conic[2]);
    let gc = -(k * gk * k);

    // C = T Σ Tᵀ + λI with T = J W.
    let q = g.rotation.map(|v| v as f64);
    let qn_norm = (q.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let rot = quat_to_rotation(q).unwrap_or_else(|_| Matrix3::identity());
    let s = g.log_scale.map(|v| (v as f64).exp());
    let m = rot * Matrix3::from_diagonal(&Vector3::new(s[0], s[1], s[2]));
    let sigma = m * m.transpose();
    let j = jacobian(cam, &pc);
    let t = j * w;
    let g_sigma = t.transpose() * gc * t;
    let g_t = 2.0 * gc * t * sigma;
    let g_j = g_t * w.transpose();

    let mut gp = Vector3::zeros();
    let (fx, fy) = (cam.fx, cam.fy);
    // J = [[fx/z, 0, -fx x/z²], [0, fy/z, -fy y/z²]]
    gp.z += g_j[(0, 0)] * (-fx * iz * iz);
    gp.x += g_j[(0, 2)] * (-fx * iz * iz);
    gp.z += g_j[(0, 2)] * (2.0 * fx * x * iz * iz * iz);
    gp.z += g_j[(1, 1)] * (-fy * iz * iz);
    gp.y += g_j[(1, 2)] * (-fy * iz * iz);
    gp.z += g_j[(1, 2)] * (2.0 * fy * y * iz * iz * iz);
    // mean = (fx x/z + cx, fy y/z + cy)
    gp.x += g2.mean[0] * fx * iz;
    gp.z -= g2.mean[0] * fx * x * iz * iz;
    gp.y += g2.mean[1] * fy * iz;
    gp.z -= g2.mean[1] * fy * y * iz * iz;
    let mut g_mu = w.transpose() * gp;

    // Shading: color and change depend on the view direction.
    let (dir, dist) = view_direction(cam, &mu);
    let basis = sh_basis(dir);
    let basis_grad = sh_basis_grad(dir);
    let mut g_dir = [0.0f64; 3];

    let color_n = num_coeffs(cache.degrees.color);
    let raw = color_raw(g, cache.degrees.color, &basis);
    for ch in 0..3 {
        let v = raw[ch] + 0.5;
        if !(v > 0.0 && v < 1.0) || g2.color[ch] == 0.0 {
            continue;
        }
        let gcol = g2.color[ch];
        for kk in 0..color_n {
            out.sh_color[kk][ch] = gcol * basis[kk];
            let coef = g.sh_color[kk][ch] as f64;
            for a in 0..3 {
                g_dir[a] += gcol * coef * basis_grad[kk][a];
            }
        }
    }

    let change_n = num_coeffs(cache.degrees.change);
    let cv = sigmoid(change_raw(g, cache.degrees.change, &basis));
    let g_change_raw = g2.change * cv * (1.0 - cv);
    out.change_dc = g_change_raw;
    for kk in 1..change_n {
        out.change_rest[kk - 1] = g_change_raw * basis[kk];
        let coef = g.change_rest[kk - 1] as f64;
        for a in 0..3 {
            g_dir[a] += g_change_raw * coef * basis_grad[kk][a];
        }
    }
    if dist > 0.0 {
        let d = Vector3::from(dir);
        let gd = Vector3::from(g_dir);
        g_mu += (gd - d * d.dot(&gd)) / dist;
    }
    out.position = [g_mu.x, g_mu.y, g_mu.z];

    // Σ = M Mᵀ, M = R diag(s)
    let g_m = 2.0 * g_sigma * m;
    let mut g_rot = Matrix3::zeros();
    for kk in 0..3 {
        let mut gs = 0.0;
        for i in 0..3 {
            gs += g_m[(i, kk)] * rot[(i, kk)];
            g_rot[(i, kk)] = g_m[(i, kk)] * s[kk];
        }
        out.log_scale[kk] = gs * s[kk];
    }
    out.rotation = quaternion_grad(q, qn_norm, &g_rot);

    let a = p.opacity;
    out.opacity_logit = g2.opacity * a * (1.0 - a);
    let ac = p.change_opacity;
    out.change_opacity_logit = g2.change_opacity * ac * (1.0 - ac);
    out
}

/// ∂L/∂q for an unnormalized (w, x, y, z) quaternion given ∂L/∂R.
fn quaternion_grad(q: [f64; 4], norm: f64, gr: &Matrix3<f64>) -> [f64; 4] {
    if !(norm > 0.0) {
        return [0.0; 4];
    }
    let [w, x, y, z] = q.map(|v| v / norm);
    let g = |i: usize, j: usize| gr[(i, j)];
    let gw = 2.0
        * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let gx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2)
            + z * g(2, 0)
            + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let gy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
            - w * g(2, 0)
            + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let gz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));
    let gn = [gw, gx, gy, gz];
    let qn = [w, x, y, z];
    let dot: f64 = gn.iter().zip(&qn).map(|(a, b)| a * b).sum();
    [
        (gn[0] - qn[0] * dot) / norm,
        (gn[1] - qn[1] * dot) / norm,
        (gn[2] - qn[2] * dot) / norm,
        (gn[3] - qn[3] * dot) / norm,
    ]
}
