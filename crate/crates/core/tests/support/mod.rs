//! Independent reference implementations and scene generators shared by the
//! integration tests and the acceptance suite.

#![allow(dead_code)]

use changesplat::raster::sh::sh_basis;
use changesplat::raster::{render, rasterize_backward, GaussianGrad, RenderOutput, UpstreamGrads};
use changesplat::scene::{cov3d, sigmoid, Camera, Gaussian3D, GaussianCloud};
use changesplat::ssim::{C1, C2, WINDOW_RADIUS, WINDOW_SIGMA};
use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-pixel renderer: one global depth sort, every Gaussian tested at every
/// pixel, no tiles and no early termination.
pub fn brute_force_render(cloud: &GaussianCloud, cam: &Camera) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    struct Splat {
        depth: f64,
        index: usize,
        mean: Vector2<f64>,
        inv: Matrix2<f64>,
        color: [f64; 3],
        change: f64,
        opacity: f64,
        change_opacity: f64,
    }
    let mut splats = Vec::new();
    for (index, g) in cloud.gaussians.iter().enumerate() {
        let mu = Vector3::from(g.position.map(|v| v as f64));
        let p = cam.rotation_w2c * mu + cam.translation_w2c;
        if p.z <= 0.01 {
            continue;
        }
        let sigma = cov3d(g.rotation.map(|v| v as f64), g.log_scale.map(|v| v as f64)).unwrap();
        let j = Matrix2x3::new(
            cam.fx / p.z,
            0.0,
            -cam.fx * p.x / (p.z * p.z),
            0.0,
            cam.fy / p.z,
            -cam.fy * p.y / (p.z * p.z),
        );
        let t = j * cam.rotation_w2c;
        let cov = t * sigma * t.transpose() + Matrix2::identity() * 0.3;
        let Some(inv) = cov.try_inverse() else { continue };
        let dir = (mu - cam.center()).normalize();
        let basis = sh_basis([dir.x, dir.y, dir.z]);
        let ncol = (cloud.sh_degree as usize + 1).pow(2);
        let nchg = (cloud.change_sh_degree as usize + 1).pow(2);
        let mut color = [0.5; 3];
        for c in 0..3 {
            for k in 0..ncol {
                color[c] += basis[k] * g.sh_color[k][c] as f64;
            }
            color[c] = color[c].clamp(0.0, 1.0);
        }
        let mut raw = g.change_dc as f64;
        for k in 1..nchg {
            raw += basis[k] * g.change_rest[k - 1] as f64;
        }
        splats.push(Splat {
            depth: p.z,
            index,
            mean: Vector2::new(cam.fx * p.x / p.z + cam.cx, cam.fy * p.y / p.z + cam.cy),
            inv,
            color,
            change: sigmoid(raw),
            opacity: sigmoid(g.opacity_logit as f64),
            change_opacity: sigmoid(g.change_opacity_logit as f64),
        });
    }
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    let (w, h) = (cam.width, cam.height);
    let mut rgb = vec![0.0; w * h * 3];
    let mut change = vec![0.0; w * h];
    let mut alpha = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let px = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            let (mut t, mut tc) = (1.0, 1.0);
            let i = y * w + x;
            for s in &splats {
                let d = px - s.mean;
                let q = (d.transpose() * s.inv * d)[(0, 0)];
                if q > 9.0 {
                    continue;
                }
                let g = (-0.5 * q).exp();
                let a = (s.opacity * g).min(0.99);
                for c in 0..3 {
                    rgb[i * 3 + c] += s.color[c] * a * t;
                }
                t *= 1.0 - a;
                let ac = (s.change_opacity * g).min(0.99);
                change[i] += s.change * ac * tc;
                tc *= 1.0 - ac;
            }
            alpha[i] = 1.0 - t;
        }
    }
    (rgb, change, alpha)
}

/// Direct sliding-window SSIM with explicit 2D weights, truncated and
/// renormalized at the borders.
pub fn reference_ssim(x: &[f64], y: &[f64], w: usize, h: usize) -> Vec<f64> {
    let r = WINDOW_RADIUS as isize;
    let sig2 = 2.0 * WINDOW_SIGMA * WINDOW_SIGMA;
    let mut out = vec![0.0; w * h];
    for py in 0..h as isize {
        for px in 0..w as isize {
            let (mut z, mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in -r..=r {
                for dx in -r..=r {
                    let (qx, qy) = (px + dx, py + dy);
                    if qx < 0 || qy < 0 || qx >= w as isize || qy >= h as isize {
                        continue;
                    }
                    let wt = (-((dx * dx + dy * dy) as f64) / sig2).exp();
                    let i = qy as usize * w + qx as usize;
                    z += wt;
                    sx += wt * x[i];
                    sy += wt * y[i];
                    sxx += wt * x[i] * x[i];
                    syy += wt * y[i] * y[i];
                    sxy += wt * x[i] * y[i];
                }
            }
            let (mx, my) = (sx / z, sy / z);
            let vx = sxx / z - mx * mx;
            let vy = syy / z - my * my;
            let cxy = sxy / z - mx * my;
            out[py as usize * w + px as usize] =
                ((2.0 * mx * my + C1) * (2.0 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
        }
    }
    out
}

pub fn random_unit_quat(rng: &mut ChaCha8Rng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = [0.0; 4].map(|_: f64| rng.random_range(-1.0..1.0));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            return q.map(|v| v / n);
        }
    }
}

/// Random cloud in front of a 64×64 camera looking down +z from the origin.
pub fn random_scene(seed: u64, n: usize, size: usize) -> (GaussianCloud, Camera) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = Camera::look_at(
        Vector3::new(0.0, 0.0, -4.0),
        Vector3::zeros(),
        Vector3::new(0.0, -1.0, 0.0),
        60.0,
        size,
        size,
    )
    .unwrap();
    let gaussians = (0..n)
        .map(|_| {
            let pos = [
                rng.random_range(-2.5..2.5),
                rng.random_range(-2.5..2.5),
                rng.random_range(-3.0..3.0),
            ];
            let s = [0.0; 3].map(|_: f64| rng.random_range(-3.5f64..-1.0));
            let mut g = Gaussian3D::new(
                pos,
                s,
                random_unit_quat(&mut rng),
                rng.random_range(0.05..0.999),
                [rng.random(), rng.random(), rng.random()],
            );
            for k in 1..16 {
                g.sh_color[k] = [0.0; 3].map(|_: f32| rng.random_range(-0.3..0.3));
            }
            for v in &mut g.change_rest {
                *v = rng.random_range(-0.5..0.5);
            }
            g.change_dc = rng.random_range(-4.0..4.0);
            g.change_opacity_logit = rng.random_range(-4.0..5.0);
            g
        })
        .collect();
    let mut cloud = GaussianCloud::new(gaussians, 3.0).unwrap();
    cloud.change_sh_degree = (seed % 4) as u8;
    (cloud, cam)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest per-channel deviation between the tiled renderer and the oracle.
pub fn oracle_deviation(cloud: &GaussianCloud, cam: &Camera) -> f64 {
    let out = changesplat::raster::rasterize(cloud, cam).unwrap();
    let (rgb, change, alpha) = brute_force_render(cloud, cam);
    max_abs_diff(&out.rgb.data, &rgb)
        .max(max_abs_diff(&out.change.data, &change))
        .max(max_abs_diff(&out.alpha.data, &alpha))
}

/// Scenes for gradient checks: a few large, semi-transparent Gaussians whose
/// 3σ ellipses cover the whole image, so that no kernel cutoff, clamp or early
/// termination is active and the image is a smooth function of every
/// parameter.
pub fn gradient_scene(seed: u64, n: usize) -> (GaussianCloud, Camera) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = 16;
    let cam = Camera::look_at(
        Vector3::new(0.3, -0.2, -5.0),
        Vector3::zeros(),
        Vector3::new(0.0, -1.0, 0.0),
        40.0,
        size,
        size,
    )
    .unwrap();
    let gaussians = (0..n)
        .map(|i| {
            let pos = [
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
                -1.0 + 0.6 * i as f64 + rng.random_range(0.0..0.2),
            ];
            let s = [0.0; 3].map(|_: f64| rng.random_range(1.8f64..2.5).ln());
            let mut g = Gaussian3D::new(
                pos,
                s,
                random_unit_quat(&mut rng),
                rng.random_range(0.2..0.55),
                [0.0; 3].map(|_: f64| rng.random_range(0.25..0.75)),
            );
            for k in 1..16 {
                g.sh_color[k] = [0.0; 3].map(|_: f32| rng.random_range(-0.05..0.05));
            }
            for v in &mut g.change_rest {
                *v = rng.random_range(-0.3..0.3);
            }
            g.change_dc = rng.random_range(-1.5..1.5);
            g.change_opacity_logit = rng.random_range(-1.0..0.5);
            g
        })
        .collect();
    let mut cloud = GaussianCloud::new(gaussians, 3.0).unwrap();
    cloud.change_sh_degree = 3;
    (cloud, cam)
}

pub struct Weights {
    pub up: UpstreamGrads,
}

impl Weights {
    pub fn random(seed: u64, w: usize, h: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut up = UpstreamGrads::zeros(w, h);
        up.rgb.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        up.change.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        up.alpha.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        Self { up }
    }

    pub fn loss(&self, out: &RenderOutput) -> f64 {
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        dot(&self.up.rgb, &out.rgb.data) + dot(&self.up.change, &out.change.data) + dot(&self.up.alpha, &out.alpha.data)
    }
}

/// Named accessor for one scalar parameter of a Gaussian and its gradient.
pub struct Param {
    pub group: &'static str,
    pub name: String,
    get: Box<dyn Fn(&mut Gaussian3D) -> &mut f32>,
    grad: Box<dyn Fn(&GaussianGrad) -> f64>,
}

pub fn all_params() -> Vec<Param> {
    let mut v: Vec<Param> = Vec::new();
    for k in 0..3 {
        v.push(Param {
            group: "position",
            name: format!("position[{k}]"),
            get: Box::new(move |g| &mut g.position[k]),
            grad: Box::new(move |d| d.position[k]),
        });
        v.push(Param {
            group: "log_scale",
            name: format!("log_scale[{k}]"),
            get: Box::new(move |g| &mut g.log_scale[k]),
            grad: Box::new(move |d| d.log_scale[k]),
        });
    }
    for k in 0..4 {
        v.push(Param {
            group: "rotation",
            name: format!("rotation[{k}]"),
            get: Box::new(move |g| &mut g.rotation[k]),
            grad: Box::new(move |d| d.rotation[k]),
        });
    }
    v.push(Param {
        group: "opacity_logit",
        name: "opacity_logit".into(),
        get: Box::new(|g| &mut g.opacity_logit),
        grad: Box::new(|d| d.opacity_logit),
    });
    for k in 0..16 {
        for c in 0..3 {
            v.push(Param {
                group: "sh_color",
                name: format!("sh_color[{k}][{c}]"),
                get: Box::new(move |g| &mut g.sh_color[k][c]),
                grad: Box::new(move |d| d.sh_color[k][c]),
            });
        }
    }
    v.push(Param {
        group: "change_dc",
        name: "change_dc".into(),
        get: Box::new(|g| &mut g.change_dc),
        grad: Box::new(|d| d.change_dc),
    });
    for k in 0..15 {
        v.push(Param {
            group: "change_rest",
            name: format!("change_rest[{k}]"),
            get: Box::new(move |g| &mut g.change_rest[k]),
            grad: Box::new(move |d| d.change_rest[k]),
        });
    }
    v.push(Param {
        group: "change_opacity_logit",
        name: "change_opacity_logit".into(),
        get: Box::new(|g| &mut g.change_opacity_logit),
        grad: Box::new(|d| d.change_opacity_logit),
    });
    v
}

pub struct GradCheck {
    pub worst_rel: f64,
    pub worst_name: String,
    pub checked: usize,
    pub groups: Vec<&'static str>,
}

/// Compare analytic gradients with central differences (step 1e-3 on the
/// stored parameter). Parameters are f32, so the quotient uses the step that
/// was actually applied after rounding. Relative error is measured against
/// `max(|analytic|, |numeric|, floor)`; the floor keeps gradients that are
/// zero up to rounding from dominating.
pub fn check_gradients(cloud: &GaussianCloud, cam: &Camera, seed: u64) -> GradCheck {
    let w = Weights::random(seed, cam.width, cam.height);
    let (_, cache) = render(cloud, cam).unwrap();
    let analytic = rasterize_backward(cloud, cam, &cache, &w.up).unwrap();
    let h = 1e-3f32;
    let floor = 1e-4;
    let mut out = GradCheck {
        worst_rel: 0.0,
        worst_name: String::new(),
        checked: 0,
        groups: Vec::new(),
    };
    for (i, _) in cloud.gaussians.iter().enumerate() {
        for p in all_params() {
            let mut plus = cloud.clone();
            let mut minus = cloud.clone();
            let x = *(p.get)(&mut plus.gaussians[i]);
            let (xp, xm) = (x + h, x - h);
            *(p.get)(&mut plus.gaussians[i]) = xp;
            *(p.get)(&mut minus.gaussians[i]) = xm;
            let lp = w.loss(&render(&plus, cam).unwrap().0);
            let lm = w.loss(&render(&minus, cam).unwrap().0);
            let numeric = (lp - lm) / (xp as f64 - xm as f64);
            let a = (p.grad)(&analytic.grads[i]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if rel > out.worst_rel {
                out.worst_rel = rel;
                out.worst_name = format!("gaussian {i} {} (analytic {a:.6e}, numeric {numeric:.6e})", p.name);
            }
            if !out.groups.contains(&p.group) {
                out.groups.push(p.group);
            }
            out.checked += 1;
        }
    }
    out
}
