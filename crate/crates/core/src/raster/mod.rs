//! Tile-based CPU rasterizer for RGB, change, alpha and depth channels, with
//! an analytic backward pass.
//!
//! Each Gaussian contributes `a = min(0.99, α·exp(-½ dᵀΣ⁻¹d))` inside its 3σ
//! ellipse and nothing outside it. Contributions are composited front to back
//! in camera-depth order (ties broken by cloud index). The RGB chain uses α,
//! the change chain uses α̃ with its own transmittance; each chain stops once
//! its transmittance drops below 1e-4 (after adding the contribution that
//! crossed the threshold). The background is black.

pub mod backward;
pub mod project;
pub mod sh;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scene::{Camera, GaussianCloud, ImageBuffer};

pub use backward::{rasterize_backward, CloudGradients, GaussianGrad, UpstreamGrads};
pub use project::{project, ProjectedGaussian, ShDegrees};

pub const TILE_SIZE: usize = 16;
pub const COV_DILATION: f64 = 0.3;
pub const ALPHA_MAX: f64 = 0.99;
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
pub const NEAR_PLANE: f64 = 0.01;
/// Kernel support in standard deviations.
pub const SIGMA_CUTOFF: f64 = 3.0;

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub rgb: ImageBuffer,
    pub change: ImageBuffer,
    /// `1 - T_final` of the RGB chain.
    pub alpha: ImageBuffer,
    /// Alpha-weighted camera-space depth (not normalized).
    pub depth: Vec<f64>,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.rgb.width
    }

    pub fn height(&self) -> usize {
        self.rgb.height
    }
}

/// Per-pass state the backward pass replays from.
#[derive(Clone, Debug)]
pub struct RenderCache {
    pub projected: Vec<ProjectedGaussian>,
    /// Per tile, indices into `projected` in compositing order.
    pub(crate) tile_lists: Vec<Vec<u32>>,
    pub(crate) tiles_x: usize,
    pub(crate) width: usize,
    pub(crate) height: usize,
    pub degrees: ShDegrees,
    /// RGB-chain transmittance after compositing, per pixel.
    pub final_transmittance: Vec<f64>,
}

impl RenderCache {
    pub fn num_tiles(&self) -> usize {
        self.tile_lists.len()
    }
}

pub(crate) fn degrees_of(cloud: &GaussianCloud) -> ShDegrees {
    ShDegrees {
        color: cloud.sh_degree.min(3),
        change: cloud.change_sh_degree.min(3),
    }
}

/// Kernel weight of `p` at pixel center (`px`, `py`), or `None` outside the
/// 3σ ellipse. Also returns the offset `pixel - mean`.
#[inline]
pub(crate) fn kernel(p: &ProjectedGaussian, px: f64, py: f64) -> Option<(f64, f64, f64)> {
    let dx = px - p.mean[0];
    let dy = py - p.mean[1];
    let q = p.conic[0] * dx * dx + 2.0 * p.conic[1] * dx * dy + p.conic[2] * dy * dy;
    if q > SIGMA_CUTOFF * SIGMA_CUTOFF {
        return None;
    }
    Some(((-0.5 * q).exp(), dx, dy))
}

pub fn rasterize(cloud: &GaussianCloud, cam: &Camera) -> Result<RenderOutput> {
    render(cloud, cam).map(|(out, _)| out)
}

/// Forward pass, returning the cache needed by [`rasterize_backward`].
pub fn render(cloud: &GaussianCloud, cam: &Camera) -> Result<(RenderOutput, RenderCache)> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let degrees = degrees_of(cloud);
    let projected: Vec<ProjectedGaussian> = cloud
        .gaussians
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| project(g, i, cam, degrees))
        .collect();
    let (width, height) = (cam.width, cam.height);
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let tile_lists = bin_tiles(&projected, tiles_x, tiles_y);

    let tile_out: Vec<TileForward> = (0..tile_lists.len())
        .into_par_iter()
        .map(|t| render_tile(&projected, &tile_lists[t], t % tiles_x, t / tiles_x, width, height))
        .collect();

    let n = width * height;
    let mut rgb = vec![0.0; n * 3];
    let mut change = vec![0.0; n];
    let mut alpha = vec![0.0; n];
    let mut depth = vec![0.0; n];
    let mut final_t = vec![1.0; n];
    for (t, out) in tile_out.iter().enumerate() {
        let (x0, y0) = ((t % tiles_x) * TILE_SIZE, (t / tiles_x) * TILE_SIZE);
        let tw = (width - x0).min(TILE_SIZE);
        for (k, px) in out.pixels.iter().enumerate() {
            let (x, y) = (x0 + k % tw, y0 + k / tw);
            let i = y * width + x;
            rgb[i * 3..i * 3 + 3].copy_from_slice(&px.rgb);
            change[i] = px.change;
            alpha[i] = 1.0 - px.transmittance;
            depth[i] = px.depth;
            final_t[i] = px.transmittance;
        }
    }
    let clamp01 = |v: Vec<f64>| v.into_iter().map(|x| x.clamp(0.0, 1.0)).collect::<Vec<_>>();
    let output = RenderOutput {
        rgb: ImageBuffer {
            width,
            height,
            channels: 3,
            data: clamp01(rgb),
        },
        change: ImageBuffer {
            width,
            height,
            channels: 1,
            data: clamp01(change),
        },
        alpha: ImageBuffer {
            width,
            height,
            channels: 1,
            data: clamp01(alpha),
        },
        depth,
    };
    let cache = RenderCache {
        projected,
        tile_lists,
        tiles_x,
        width,
        height,
        degrees,
        final_transmittance: final_t,
    };
    Ok((output, cache))
}

/// Assign projected Gaussians to the tiles their pixel rectangle touches, each
/// tile list sorted by (depth, cloud index).
fn bin_tiles(projected: &[ProjectedGaussian], tiles_x: usize, tiles_y: usize) -> Vec<Vec<u32>> {
    let mut order: Vec<u32> = (0..projected.len() as u32).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&projected[a as usize], &projected[b as usize]);
        pa.depth.total_cmp(&pb.depth).then(pa.index.cmp(&pb.index))
    });
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    for &k in &order {
        let [x0, x1, y0, y1] = projected[k as usize].pixel_rect;
        for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
            for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                lists[ty * tiles_x + tx].push(k);
            }
        }
    }
    lists
}

#[derive(Clone, Copy, Default)]
struct PixelForward {
    rgb: [f64; 3],
    change: f64,
    depth: f64,
    transmittance: f64,
}

struct TileForward {
    pixels: Vec<PixelForward>,
}

fn render_tile(
    projected: &[ProjectedGaussian],
    list: &[u32],
    tx: usize,
    ty: usize,
    width: usize,
    height: usize,
) -> TileForward {
    let (x0, y0) = (tx * TILE_SIZE, ty * TILE_SIZE);
    let (x1, y1) = ((x0 + TILE_SIZE).min(width), (y0 + TILE_SIZE).min(height));
    let mut pixels = Vec::with_capacity((x1 - x0) * (y1 - y0));
    for y in y0..y1 {
        for x in x0..x1 {
            pixels.push(composite_pixel(projected, list, x as f64 + 0.5, y as f64 + 0.5));
        }
    }
    TileForward { pixels }
}

#[inline]
fn composite_pixel(projected: &[ProjectedGaussian], list: &[u32], px: f64, py: f64) -> PixelForward {
    let mut out = PixelForward {
        transmittance: 1.0,
        ..Default::default()
    };
    let mut t = 1.0;
    let mut tc = 1.0;
    let mut rgb_done = false;
    let mut change_done = false;
    for &k in list {
        if rgb_done && change_done {
            break;
        }
        let p = &projected[k as usize];
        let Some((g, _, _)) = kernel(p, px, py) else {
            continue;
        };
        if !rgb_done {
            let a = (p.opacity * g).min(ALPHA_MAX);
            let w = a * t;
            out.rgb[0] += p.color[0] * w;
            out.rgb[1] += p.color[1] * w;
            out.rgb[2] += p.color[2] * w;
            out.depth += p.depth * w;
            t *= 1.0 - a;
            rgb_done = t < TRANSMITTANCE_MIN;
        }
        if !change_done {
            let a = (p.change_opacity * g).min(ALPHA_MAX);
            out.change += p.change * a * tc;
            tc *= 1.0 - a;
            change_done = tc < TRANSMITTANCE_MIN;
        }
    }
    out.transmittance = t;
    out
}
