//! Synthetic multi-view change scenes with exact ground truth.
//!
//! All randomness comes from `ChaCha8Rng` (the ChaCha stream cipher with 8
//! rounds, seeded from a `u64` via `SeedableRng::seed_from_u64`), so scenes
//! are reproducible across platforms.
//!
//! A world is a textured floor of flattened Gaussians at `z = 0` spanning
//! `[-1, 1]²` plus compact object clusters standing on it. World up is `+z`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{
    write_colmap_model, write_image, write_mask, ColmapCamera, ColmapFormat, ColmapImage, ColmapModel, ColmapPoint,
    PinholeModel,
};
use crate::raster::rasterize;
use crate::scene::{rgb_to_sh_dc, Camera, ChangeMask, Gaussian3D, GaussianCloud, ImageBuffer};

/// Photometric threshold of the ground-truth change masks.
pub const GT_TAU: f64 = 0.05;
/// Fraction of a world's Gaussians spent on the floor.
pub const FLOOR_FRACTION: f64 = 0.6;
const OBJECT_SPREAD: f64 = 0.12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// Ring of cameras at a fixed elevation.
    Orbit,
    /// Fibonacci-lattice points on the upper hemisphere.
    Hemisphere,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthWorld {
    pub cloud: GaussianCloud,
    /// Indices of each object cluster's Gaussians (floor excluded).
    pub clusters: Vec<Vec<usize>>,
    pub cluster_centers: Vec<[f64; 3]>,
}

fn random_rotation(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let q = [0.0; 4].map(|_: f64| n.sample(rng));
        if q.iter().map(|v| v * v).sum::<f64>() > 1e-6 {
            return q;
        }
    }
}

/// Gaussians of one object cluster around `center`.
pub fn object_cluster(rng: &mut ChaCha8Rng, center: [f64; 3], count: usize, color: [f64; 3]) -> Vec<Gaussian3D> {
    let spread = Normal::new(0.0, OBJECT_SPREAD).expect("positive spread");
    (0..count)
        .map(|_| {
            let p = [
                center[0] + spread.sample(rng),
                center[1] + spread.sample(rng),
                (center[2] + spread.sample(rng)).max(0.06),
            ];
            let s = [0.0; 3].map(|_: f64| rng.random_range(0.05f64..0.1).ln());
            // per-Gaussian shading gives objects some texture
            let shade: f64 = rng.random_range(0.35..1.1);
            let rgb = color.map(|c| (c * shade + rng.random_range(-0.04..0.04)).clamp(0.02, 0.98));
            Gaussian3D::new(p, s, random_rotation(rng), 0.95, rgb)
        })
        .collect()
}

/// Object colors, well apart in both hue and luma.
pub const PALETTE: [[f64; 3]; 8] = [
    [0.85, 0.12, 0.10],
    [0.15, 0.70, 0.20],
    [0.12, 0.22, 0.85],
    [0.92, 0.82, 0.12],
    [0.75, 0.15, 0.70],
    [0.10, 0.75, 0.80],
    [0.95, 0.50, 0.08],
    [0.95, 0.95, 0.92],
];

/// Floor plus `n_clusters` objects, `n_gaussians` in total.
pub fn generate_world(seed: u64, n_gaussians: usize, n_clusters: usize) -> Result<SynthWorld> {
    if n_gaussians == 0 {
        return Err(Error::InvalidArgument("need at least one gaussian".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_objects = if n_clusters == 0 {
        0
    } else {
        ((n_gaussians as f64 * (1.0 - FLOOR_FRACTION)).round() as usize).max(n_clusters.min(n_gaussians))
    };
    let n_floor = n_gaussians - n_objects;
    let mut gaussians = Vec::with_capacity(n_gaussians);

    if n_floor > 0 {
        let side = (n_floor as f64).sqrt().ceil() as usize;
        let spacing = 2.0 / side as f64;
        let mut cells: Vec<(usize, usize)> = (0..side * side).map(|k| (k % side, k / side)).collect();
        // drop surplus cells deterministically, spread over the grid
        while cells.len() > n_floor {
            let k = rng.random_range(0..cells.len());
            cells.remove(k);
        }
        for (ix, iy) in cells {
            let p = [
                -1.0 + (ix as f64 + 0.5) * spacing + rng.random_range(-0.15..0.15) * spacing,
                -1.0 + (iy as f64 + 0.5) * spacing + rng.random_range(-0.15..0.15) * spacing,
                0.0,
            ];
            let sxy = 0.6 * spacing;
            let s = [sxy * rng.random_range(0.9..1.2), sxy * rng.random_range(0.9..1.2), 0.01].map(f64::ln);
            let yaw = rng.random_range(0.0..std::f64::consts::PI);
            let q = [(yaw / 2.0).cos(), 0.0, 0.0, (yaw / 2.0).sin()];
            let base: f64 = rng.random_range(0.15..0.85);
            let rgb = [0.0; 3].map(|_: f64| (base + rng.random_range(-0.08f64..0.08)).clamp(0.0, 1.0));
            gaussians.push(Gaussian3D::new(p, s, q, 0.97, rgb));
        }
    }

    let mut clusters = Vec::new();
    let mut centers: Vec<[f64; 3]> = Vec::new();
    let mut palette = PALETTE;
    palette.shuffle(&mut rng);
    for k in 0..n_clusters.min(n_objects) {
        let count = n_objects / n_clusters + usize::from(k < n_objects % n_clusters);
        let center = free_spot(&mut rng, &centers);
        let color = palette[k % palette.len()];
        let start = gaussians.len();
        gaussians.extend(object_cluster(&mut rng, center, count, color));
        clusters.push((start..gaussians.len()).collect());
        centers.push(center);
    }
    Ok(SynthWorld {
        cloud: GaussianCloud::new(gaussians, 1.0)?,
        clusters,
        cluster_centers: centers,
    })
}

/// Object center on the floor, kept away from existing centers when possible.
pub fn free_spot(rng: &mut ChaCha8Rng, taken: &[[f64; 3]]) -> [f64; 3] {
    let mut best = [0.0, 0.0, 0.2];
    let mut best_gap = -1.0;
    for _ in 0..64 {
        let c = [rng.random_range(-0.65..0.65), rng.random_range(-0.65..0.65), rng.random_range(0.15..0.25)];
        let gap = taken
            .iter()
            .map(|t| ((c[0] - t[0]).powi(2) + (c[1] - t[1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        if gap >= 0.5 {
            return c;
        }
        if gap > best_gap {
            best_gap = gap;
            best = c;
        }
    }
    best
}

pub fn centroid(cloud: &GaussianCloud) -> Vector3<f64> {
    let mut c = Vector3::zeros();
    for g in &cloud.gaussians {
        c += Vector3::from(g.position_f64());
    }
    c / cloud.len().max(1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraRig {
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    /// Distance from the look-at point.
    pub radius: f64,
    /// Orbit elevation in degrees.
    pub elevation_deg: f64,
    /// Azimuth of the first camera, in degrees.
    pub azimuth_offset_deg: f64,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            fov_deg: 50.0,
            radius: 3.0,
            elevation_deg: 35.0,
            azimuth_offset_deg: 0.0,
        }
    }
}

/// Cameras on `layout` around `target`, all at distance `rig.radius`.
pub fn camera_layout(layout: Layout, n: usize, target: Vector3<f64>, rig: &CameraRig) -> Result<Vec<Camera>> {
    let up = Vector3::new(0.0, 0.0, 1.0);
    let offset = rig.azimuth_offset_deg.to_radians();
    let dirs: Vec<Vector3<f64>> = match layout {
        Layout::Orbit => {
            let e = rig.elevation_deg.to_radians();
            (0..n)
                .map(|k| {
                    let a = offset + std::f64::consts::TAU * k as f64 / n as f64;
                    Vector3::new(e.cos() * a.cos(), e.cos() * a.sin(), e.sin())
                })
                .collect()
        }
        Layout::Hemisphere => {
            // Fibonacci lattice restricted to elevations between 15° and 75°
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            let (z0, z1) = (15f64.to_radians().sin(), 75f64.to_radians().sin());
            (0..n)
                .map(|k| {
                    let z = z0 + (z1 - z0) * (k as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let a = offset + golden * k as f64;
                    Vector3::new(r * a.cos(), r * a.sin(), z)
                })
                .collect()
        }
    };
    dirs.into_iter()
        .map(|d| Camera::look_at(target + d * rig.radius, target, up, rig.fov_deg, rig.width, rig.height))
        .collect()
}

/// World plus cameras looking at its centroid.
pub fn generate_scene(
    seed: u64,
    n_gaussians: usize,
    n_cameras: usize,
    layout: Layout,
) -> Result<(GaussianCloud, Vec<Camera>)> {
    if n_cameras < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 cameras, got {n_cameras}")));
    }
    let world = generate_world(seed, n_gaussians, 5.min(n_gaussians / 8))?;
    let target = centroid(&world.cloud);
    let cameras = camera_layout(layout, n_cameras, target, &CameraRig::default())?;
    let mut cloud = world.cloud;
    cloud.scene_extent = crate::train::scene_extent(&cameras);
    Ok((cloud, cameras))
}

#[derive(Clone, Debug, PartialEq)]
pub enum ChangeOp {
    Remove { indices: Vec<usize> },
    Move { indices: Vec<usize>, delta: [f64; 3] },
    Recolor { indices: Vec<usize>, rgb: [f64; 3] },
    /// Append new Gaussians; they occupy the indices after the surviving ones.
    Add { gaussians: Vec<Gaussian3D> },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChangeScript {
    pub ops: Vec<ChangeOp>,
}

impl ChangeScript {
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = BTreeSet::new();
        for op in &self.ops {
            let idx = match op {
                ChangeOp::Remove { indices } | ChangeOp::Move { indices, .. } | ChangeOp::Recolor { indices, .. } => {
                    indices
                }
                ChangeOp::Add { .. } => continue,
            };
            for &i in idx {
                if i >= n {
                    return Err(Error::InvalidArgument(format!("change index {i} out of range for {n} gaussians")));
                }
                if !seen.insert(i) {
                    return Err(Error::InvalidArgument(format!("gaussian {i} appears in more than one change")));
                }
            }
        }
        Ok(())
    }
}

/// Apply moves and recolors in place, then drop removed Gaussians, then
/// append additions.
pub fn apply_changes(cloud: &GaussianCloud, script: &ChangeScript) -> Result<GaussianCloud> {
    script.validate(cloud.len())?;
    let mut gaussians = cloud.gaussians.clone();
    let mut removed = vec![false; gaussians.len()];
    let mut added = Vec::new();
    for op in &script.ops {
        match op {
            ChangeOp::Move { indices, delta } => {
                for &i in indices {
                    for k in 0..3 {
                        gaussians[i].position[k] = (gaussians[i].position[k] as f64 + delta[k]) as f32;
                    }
                }
            }
            ChangeOp::Recolor { indices, rgb } => {
                for &i in indices {
                    for c in 0..3 {
                        gaussians[i].sh_color[0][c] = rgb_to_sh_dc(rgb[c]) as f32;
                    }
                }
            }
            ChangeOp::Remove { indices } => indices.iter().for_each(|&i| removed[i] = true),
            ChangeOp::Add { gaussians: g } => added.extend_from_slice(g),
        }
    }
    let mut out: Vec<Gaussian3D> = gaussians
        .into_iter()
        .zip(&removed)
        .filter(|(_, r)| !**r)
        .map(|(g, _)| g)
        .collect();
    out.extend(added);
    let mut changed = GaussianCloud::new(out, cloud.scene_extent)?;
    changed.sh_degree = cloud.sh_degree;
    changed.change_sh_degree = cloud.change_sh_degree;
    Ok(changed)
}

/// Binary mask of pixels whose rendered color differs by more than `tau` in
/// some channel, restricted to pixels with alpha ≥ 0.5 in either render.
pub fn gt_change_mask(before: &GaussianCloud, after: &GaussianCloud, cam: &Camera, tau: f64) -> Result<ChangeMask> {
    let a = rasterize(before, cam)?;
    let b = rasterize(after, cam)?;
    let n = cam.width * cam.height;
    let values = (0..n)
        .map(|i| {
            let diff = (0..3)
                .map(|c| (a.rgb.data[i * 3 + c] - b.rgb.data[i * 3 + c]).abs())
                .fold(0.0, f64::max);
            let seen = a.alpha.data[i] >= 0.5 || b.alpha.data[i] >= 0.5;
            if seen && diff > tau {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    ChangeMask::new_binary(cam.width, cam.height, values)
}

/// Round to 8-bit levels, as a saved PNG would.
pub fn quantize(img: &ImageBuffer) -> ImageBuffer {
    let mut out = img.clone();
    out.data.iter_mut().for_each(|v| *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
    out
}

// ---- fixtures ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ChangeSpec {
    Remove { cluster: usize },
    Move { cluster: usize, delta: [f64; 3] },
    Recolor { cluster: usize, color: [f64; 3] },
    Add {
        /// Floor position (x, y) of the new object; a free spot when omitted.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<[f64; 2]>,
        count: usize,
        color: [f64; 3],
    },
}

/// Human-readable description of a synthetic change scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureManifest {
    pub seed: u64,
    pub gaussians: usize,
    pub clusters: usize,
    pub layout: Layout,
    pub reference_views: usize,
    pub inference_views: usize,
    /// Held-out poses rendered only for evaluation.
    pub query_views: usize,
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    pub radius: f64,
    /// Standard deviation of the noise added to initialization points.
    pub point_noise: f64,
    pub changes: Vec<ChangeSpec>,
}

impl Default for FixtureManifest {
    fn default() -> Self {
        Self {
            seed: 7,
            gaussians: 200,
            clusters: 5,
            layout: Layout::Orbit,
            reference_views: 20,
            inference_views: 10,
            query_views: 10,
            width: 64,
            height: 64,
            fov_deg: 50.0,
            radius: 3.0,
            point_noise: 0.02,
            changes: vec![
                ChangeSpec::Remove { cluster: 0 },
                ChangeSpec::Add {
                    center: None,
                    count: 16,
                    color: [0.75, 0.15, 0.70],
                },
                ChangeSpec::Recolor {
                    cluster: 2,
                    color: [0.95, 0.5, 0.08],
                },
            ],
        }
    }
}

impl FixtureManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Config(format!("fixture manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("fixture manifest: {m}")));
        if self.gaussians == 0 {
            return bad("gaussians must be positive".into());
        }
        if self.reference_views < 2 || self.inference_views < 1 {
            return bad("need at least 2 reference views and 1 inference view".into());
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive".into());
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) || !(self.radius > 0.0) {
            return bad("invalid camera rig".into());
        }
        for c in &self.changes {
            match c {
                ChangeSpec::Remove { cluster } | ChangeSpec::Move { cluster, .. } | ChangeSpec::Recolor { cluster, .. } => {
                    if *cluster >= self.clusters {
                        return bad(format!("cluster {cluster} out of range ({} clusters)", self.clusters));
                    }
                }
                ChangeSpec::Add { count, .. } if *count == 0 => return bad("added cluster is empty".into()),
                ChangeSpec::Add { .. } => {}
            }
        }
        Ok(())
    }

    fn rig(&self, elevation_deg: f64, azimuth_offset_deg: f64) -> CameraRig {
        CameraRig {
            width: self.width,
            height: self.height,
            fov_deg: self.fov_deg,
            radius: self.radius,
            elevation_deg,
            azimuth_offset_deg,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FixtureView {
    pub name: String,
    pub camera: Camera,
    /// 8-bit quantized render of the ground truth; `None` for query poses.
    pub image: Option<ImageBuffer>,
}

#[derive(Clone, Debug)]
pub struct Fixture {
    pub manifest: FixtureManifest,
    pub reference_cloud: GaussianCloud,
    pub inference_cloud: GaussianCloud,
    pub reference: Vec<FixtureView>,
    pub inference: Vec<FixtureView>,
    pub query: Vec<FixtureView>,
    /// Ground-truth masks for inference and query views, by view name.
    pub gt_masks: BTreeMap<String, ChangeMask>,
    /// Noisy samples of the reference cloud, standing in for SfM points.
    pub points: Vec<ColmapPoint>,
}

pub fn build_fixture(m: &FixtureManifest) -> Result<Fixture> {
    m.validate()?;
    let world = generate_world(m.seed, m.gaussians, m.clusters)?;
    let mut rng = ChaCha8Rng::seed_from_u64(m.seed ^ 0x00C4_A7E5);
    let mut script = ChangeScript::default();
    let mut taken = world.cluster_centers.clone();
    for c in &m.changes {
        script.ops.push(match c {
            ChangeSpec::Remove { cluster } => ChangeOp::Remove {
                indices: world.clusters[*cluster].clone(),
            },
            ChangeSpec::Move { cluster, delta } => ChangeOp::Move {
                indices: world.clusters[*cluster].clone(),
                delta: *delta,
            },
            ChangeSpec::Recolor { cluster, color } => ChangeOp::Recolor {
                indices: world.clusters[*cluster].clone(),
                rgb: *color,
            },
            ChangeSpec::Add { center, count, color } => {
                let c = match center {
                    Some(c) => [c[0], c[1], 0.2],
                    None => {
                        let c = free_spot(&mut rng, &taken);
                        taken.push(c);
                        c
                    }
                };
                ChangeOp::Add {
                    gaussians: object_cluster(&mut rng, c, *count, *color),
                }
            }
        });
    }
    let target = centroid(&world.cloud);
    let step = |n: usize| 360.0 / n.max(1) as f64;
    let ref_cams = camera_layout(m.layout, m.reference_views, target, &m.rig(35.0, 0.0))?;
    let inf_cams = camera_layout(m.layout, m.inference_views, target, &m.rig(30.0, step(m.inference_views) * 0.3))?;
    let query_cams = camera_layout(m.layout, m.query_views, target, &m.rig(40.0, step(m.query_views) * 0.7))?;

    let mut reference_cloud = world.cloud.clone();
    reference_cloud.scene_extent = crate::train::scene_extent(&ref_cams);
    let inference_cloud = apply_changes(&reference_cloud, &script)?;

    let render_views = |cloud: &GaussianCloud, cams: &[Camera], prefix: &str, with_image: bool| -> Result<Vec<FixtureView>> {
        cams.iter()
            .enumerate()
            .map(|(k, cam)| {
                let image = if with_image {
                    Some(quantize(&rasterize(cloud, cam)?.rgb))
                } else {
                    None
                };
                Ok(FixtureView {
                    name: format!("{prefix}{k:03}.png"),
                    camera: cam.clone(),
                    image,
                })
            })
            .collect()
    };
    let reference = render_views(&reference_cloud, &ref_cams, "ref_", true)?;
    let inference = render_views(&inference_cloud, &inf_cams, "inf_", true)?;
    let query = render_views(&inference_cloud, &query_cams, "query_", false)?;

    let mut gt_masks = BTreeMap::new();
    for v in inference.iter().chain(&query) {
        gt_masks.insert(v.name.clone(), gt_change_mask(&reference_cloud, &inference_cloud, &v.camera, GT_TAU)?);
    }

    let noise = Normal::new(0.0, m.point_noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let points = reference_cloud
        .gaussians
        .iter()
        .map(|g| {
            let p = g.position_f64();
            let rgb = (0..3).map(|c| {
                let v = 0.5 + crate::raster::sh::SH_C0 * g.sh_color[0][c] as f64;
                (v.clamp(0.0, 1.0) * 255.0).round() as u8
            });
            let rgb: Vec<u8> = rgb.collect();
            ColmapPoint {
                xyz: [p[0] + noise.sample(&mut rng), p[1] + noise.sample(&mut rng), p[2] + noise.sample(&mut rng)],
                rgb: [rgb[0], rgb[1], rgb[2]],
            }
        })
        .collect();

    Ok(Fixture {
        manifest: m.clone(),
        reference_cloud,
        inference_cloud,
        reference,
        inference,
        query,
        gt_masks,
        points,
    })
}

/// Write `f` as a scene directory: `reference/images`, `inference/images`,
/// a text COLMAP model in `colmap` registering every pose (query poses have
/// no image), ground-truth masks in `gt`, and the manifest as `fixture.toml`.
pub fn write_fixture(f: &Fixture, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let mut model = ColmapModel::default();
    let mut cam_ids: BTreeMap<(u64, u64, u64, u64, usize, usize), u32> = BTreeMap::new();
    let views = f.reference.iter().map(|v| (v, "reference")).chain(f.inference.iter().map(|v| (v, "inference")));
    for (v, sub) in views.chain(f.query.iter().map(|v| (v, ""))) {
        let c = &v.camera;
        let key = (c.fx.to_bits(), c.fy.to_bits(), c.cx.to_bits(), c.cy.to_bits(), c.width, c.height);
        let next = cam_ids.len() as u32 + 1;
        let camera_id = *cam_ids.entry(key).or_insert(next);
        model.cameras.entry(camera_id).or_insert(ColmapCamera {
            model: PinholeModel::Pinhole,
            width: c.width,
            height: c.height,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
        });
        let id = model.images.len() as u32 + 1;
        model.images.insert(
            id,
            ColmapImage {
                qvec: c.quaternion(),
                tvec: [c.translation_w2c.x, c.translation_w2c.y, c.translation_w2c.z],
                camera_id,
                name: v.name.clone(),
            },
        );
        if let Some(img) = &v.image {
            write_image(img, dir.join(sub).join("images").join(&v.name))?;
        }
    }
    model.points = f.points.clone();
    write_colmap_model(&model, dir.join("colmap"), ColmapFormat::Text)?;
    for (name, m) in &f.gt_masks {
        write_mask(m, dir.join("gt").join(name))?;
    }
    crate::io::write_file(&dir.join("fixture.toml"), f.manifest.to_toml().as_bytes())
}
