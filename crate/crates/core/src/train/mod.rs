//! Optimization of Gaussian clouds: reference RGB training, joint RGB +
//! change training, and change-only fine-tuning.

pub mod adam;
pub mod densify;
pub mod loss;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::ColmapPoint;
use crate::raster::{rasterize_backward, render, UpstreamGrads};
use crate::scene::{enclosing_sphere_radius, Camera, ChangeMask, Gaussian3D, GaussianCloud, ImageBuffer};

pub use adam::{Adam, Group, GroupRates};
pub use densify::{densify_and_prune, reset_opacity, DensifyParams, DensifyReport, GradStats, PruneRule};
pub use loss::{image_loss, loss_change, loss_rgb, LossValue};

/// Opacity given to Gaussians initialized from points, and the ceiling used
/// by periodic opacity resets.
pub const INITIAL_OPACITY: f64 = 0.1;
pub const RESET_OPACITY: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub iters_reference: usize,
    pub iters_change: usize,
    pub iters_change_finetune: usize,
    /// Position learning rate at the start and end of a phase, multiplied by
    /// the scene extent and decayed exponentially in between.
    pub lr_position_init: f64,
    pub lr_position_final: f64,
    pub lr_sh: f64,
    /// Higher-order SH coefficients use `lr_sh / sh_rest_divisor`.
    pub sh_rest_divisor: f64,
    pub lr_opacity: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_change_dc: f64,
    pub lr_change_opacity: f64,
    pub lambda_dssim: f64,
    pub lambda_dssim_change: f64,
    /// Weight of the change loss relative to the RGB loss.
    pub change_loss_weight: f64,
    pub densify_interval: usize,
    pub densify_from: usize,
    /// Densification stops at this fraction of the phase length.
    pub densify_until_fraction: f64,
    pub densify_grad_threshold: f64,
    pub percent_dense: f64,
    pub prune_opacity: f64,
    pub prune_rule: PruneRule,
    pub opacity_reset_interval: usize,
    pub sh_increase_interval: usize,
    pub max_sh_degree: u8,
    pub change_sh_degree: u8,
    pub max_gaussians: usize,
    /// Let change-loss gradients contribute to the densification statistic.
    pub change_grads_densify: bool,
    /// Fine-tune every parameter group instead of only the change channels.
    pub finetune_all_params: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            iters_reference: 7000,
            iters_change: 3000,
            iters_change_finetune: 3000,
            lr_position_init: 1.6e-4,
            lr_position_final: 1.6e-6,
            lr_sh: 2.5e-3,
            sh_rest_divisor: 20.0,
            lr_opacity: 5e-2,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,
            lr_change_dc: 2.5e-2,
            lr_change_opacity: 5e-2,
            lambda_dssim: 0.2,
            lambda_dssim_change: 0.2,
            change_loss_weight: 1.0,
            densify_interval: 100,
            densify_from: 500,
            densify_until_fraction: 0.5,
            densify_grad_threshold: 2e-4,
            percent_dense: 0.01,
            prune_opacity: 5e-3,
            prune_rule: PruneRule::Dual,
            opacity_reset_interval: 3000,
            sh_increase_interval: 1000,
            max_sh_degree: 3,
            change_sh_degree: 0,
            max_gaussians: 50_000,
            change_grads_densify: true,
            finetune_all_params: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let rates = [
            ("lr_position_init", self.lr_position_init),
            ("lr_position_final", self.lr_position_final),
            ("lr_sh", self.lr_sh),
            ("lr_opacity", self.lr_opacity),
            ("lr_scale", self.lr_scale),
            ("lr_rotation", self.lr_rotation),
            ("lr_change_dc", self.lr_change_dc),
            ("lr_change_opacity", self.lr_change_opacity),
            ("sh_rest_divisor", self.sh_rest_divisor),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("lambda_dssim", self.lambda_dssim),
            ("lambda_dssim_change", self.lambda_dssim_change),
            ("densify_until_fraction", self.densify_until_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        for (name, v) in [
            ("densify_grad_threshold", self.densify_grad_threshold),
            ("prune_opacity", self.prune_opacity),
            ("percent_dense", self.percent_dense),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if !(self.change_loss_weight >= 0.0 && self.change_loss_weight.is_finite()) {
            return bad(format!("change_loss_weight must be non-negative, got {}", self.change_loss_weight));
        }
        if self.max_sh_degree > 3 || self.change_sh_degree > 3 {
            return bad("SH degrees must be at most 3".into());
        }
        if self.densify_interval == 0 || self.sh_increase_interval == 0 || self.opacity_reset_interval == 0 {
            return bad("intervals must be positive".into());
        }
        if self.max_gaussians == 0 {
            return bad("max_gaussians must be positive".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn rates(&self, extent: f64, iter: usize, total: usize) -> GroupRates {
        let t = if total == 0 { 1.0 } else { (iter as f64 / total as f64).clamp(0.0, 1.0) };
        let position = (self.lr_position_init.ln() * (1.0 - t) + self.lr_position_final.ln() * t).exp() * extent;
        GroupRates {
            position,
            rotation: self.lr_rotation,
            scale: self.lr_scale,
            opacity: self.lr_opacity,
            sh_dc: self.lr_sh,
            sh_rest: self.lr_sh / self.sh_rest_divisor,
            change_dc: self.lr_change_dc,
            change_rest: self.lr_change_dc / self.sh_rest_divisor,
            change_opacity: self.lr_change_opacity,
        }
    }

    fn densify_params(&self) -> DensifyParams {
        DensifyParams {
            grad_threshold: self.densify_grad_threshold,
            percent_dense: self.percent_dense,
            prune_opacity: self.prune_opacity,
            prune_rule: self.prune_rule,
            max_gaussians: self.max_gaussians,
        }
    }
}

/// Scene extent: radius of the smallest sphere containing all camera
/// centers, or 1 when the cameras coincide.
pub fn scene_extent(cameras: &[Camera]) -> f64 {
    let centers: Vec<_> = cameras.iter().map(Camera::center).collect();
    let r = enclosing_sphere_radius(&centers);
    if r > 1e-9 && r.is_finite() {
        r
    } else {
        1.0
    }
}

/// Isotropic Gaussians at `points` with scale set from the mean squared
/// distance to the three nearest neighbours.
pub fn initial_cloud(points: &[ColmapPoint], extent: f64) -> Result<GaussianCloud> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let pos: Vec<[f64; 3]> = points.iter().map(|p| p.xyz).collect();
    let gaussians = pos
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut best = [f64::INFINITY; 3];
            for (j, q) in pos.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d2 = (0..3).map(|k| (p[k] - q[k]) * (p[k] - q[k])).sum::<f64>();
                if d2 < best[2] {
                    best[2] = d2;
                    best.sort_by(f64::total_cmp);
                }
            }
            let finite: Vec<f64> = best.iter().copied().filter(|v| v.is_finite()).collect();
            let mean = if finite.is_empty() {
                (0.01 * extent).powi(2)
            } else {
                finite.iter().sum::<f64>() / finite.len() as f64
            };
            let s = mean.max(1e-7).sqrt().ln();
            let rgb = points[i].rgb.map(|c| c as f64 / 255.0);
            Gaussian3D::new(*p, [s; 3], [1.0, 0.0, 0.0, 0.0], INITIAL_OPACITY, rgb)
        })
        .collect();
    GaussianCloud::new(gaussians, extent)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Reference,
    Change,
    Finetune,
}

/// One training view. Views without an image contribute no RGB loss; views
/// without a change target contribute no change loss.
#[derive(Clone, Copy, Debug)]
pub struct TrainView<'a> {
    pub camera: &'a Camera,
    pub image: Option<&'a ImageBuffer>,
    pub change_target: Option<&'a ChangeMask>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Total loss per iteration.
    pub losses: Vec<f64>,
    pub densify: Vec<(usize, DensifyReport)>,
    pub opacity_resets: Vec<usize>,
}

/// Shuffled round-robin over views, reshuffled at every epoch.
struct ViewSampler {
    order: Vec<usize>,
    pos: usize,
}

impl ViewSampler {
    fn new(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

fn phase_seed(seed: u64, phase: Phase) -> u64 {
    let salt = match phase {
        Phase::Reference => 0x5245_4600,
        Phase::Change => 0x4348_4700,
        Phase::Finetune => 0x4649_4e00,
    };
    seed ^ salt
}

/// Run `iters` optimization steps of `phase` over `views`.
pub fn optimize(
    cloud: &mut GaussianCloud,
    views: &[TrainView<'_>],
    phase: Phase,
    iters: usize,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    if views.is_empty() {
        return Err(Error::InvalidArgument("no training views".into()));
    }
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(phase_seed(cfg.seed, phase));
    let mut sampler = ViewSampler::new(views.len());
    let mut adam = Adam::new(cloud.len());
    let mut stats = GradStats::new(cloud.len());
    let mut log = TrainLog::default();
    let densify = phase != Phase::Finetune;
    let densify_until = (cfg.densify_until_fraction * iters as f64) as usize;
    if phase == Phase::Reference {
        cloud.sh_degree = 0;
    }
    if phase != Phase::Reference {
        cloud.change_sh_degree = cfg.change_sh_degree;
    }

    for iter in 1..=iters {
        let mut rates = cfg.rates(cloud.scene_extent, iter, iters);
        match phase {
            Phase::Reference => rates.freeze(|g| !g.is_change()),
            Phase::Change => {}
            Phase::Finetune if !cfg.finetune_all_params => rates.freeze(Group::is_change),
            Phase::Finetune => {}
        }
        if phase == Phase::Reference && iter % cfg.sh_increase_interval == 0 && cloud.sh_degree < cfg.max_sh_degree {
            cloud.sh_degree += 1;
        }

        let view = &views[sampler.next(&mut rng)];
        let (out, cache) = render(cloud, view.camera)?;
        let mut upstream = UpstreamGrads::zeros(out.width(), out.height());
        let mut total = 0.0;
        let use_rgb = phase != Phase::Finetune || cfg.finetune_all_params;
        if let (true, Some(img)) = (use_rgb, view.image) {
            let (v, up) = loss_rgb(&out, img, cfg.lambda_dssim)?;
            total += v.total;
            upstream.rgb = up.rgb;
        }
        let mut rgb_only = None;
        if let (true, Some(mask)) = (phase != Phase::Reference, view.change_target) {
            if densify && !cfg.change_grads_densify {
                rgb_only = Some(upstream.clone());
            }
            let (v, up) = loss_change(&out, mask, cfg.lambda_dssim_change)?;
            total += cfg.change_loss_weight * v.total;
            upstream.change = up.change.iter().map(|g| g * cfg.change_loss_weight).collect();
        }
        log.losses.push(total);

        let grads = rasterize_backward(cloud, view.camera, &cache, &upstream)?;
        if densify && iter < densify_until {
            match &rgb_only {
                Some(up) => stats.add(&rasterize_backward(cloud, view.camera, &cache, up)?),
                None => stats.add(&grads),
            }
        }
        adam.step(&mut cloud.gaussians, &grads.grads, &rates);
        if let Some(i) = cloud.gaussians.iter().position(|g| !g.is_finite()) {
            return Err(Error::Diverged(format!(
                "{phase:?} phase, iteration {iter}: gaussian {i} has non-finite parameters"
            )));
        }

        if densify && iter < densify_until {
            if iter > cfg.densify_from && iter % cfg.densify_interval == 0 {
                let r = densify_and_prune(cloud, &mut adam, &mut stats, &cfg.densify_params(), &mut rng);
                log.densify.push((iter, r));
            }
            if iter % cfg.opacity_reset_interval == 0 {
                reset_opacity(cloud, &mut adam, RESET_OPACITY);
                log.opacity_resets.push(iter);
            }
        }
        if iter % 500 == 0 || iter == iters {
            log::info!(
                "{phase:?} iter {iter}/{iters}: loss {total:.5}, {} gaussians",
                cloud.len()
            );
        }
    }
    Ok(log)
}

fn check_views(images: usize, cameras: usize, what: &str) -> Result<()> {
    if images != cameras {
        return Err(Error::mismatch(format!("{images} {what} for {cameras} cameras")));
    }
    if cameras == 0 {
        return Err(Error::InvalidArgument(format!("no {what}")));
    }
    Ok(())
}

/// Train a reference cloud on RGB images. Change channels stay at their
/// initialization.
pub fn train_reference(
    images: &[ImageBuffer],
    cameras: &[Camera],
    points: &[ColmapPoint],
    cfg: &TrainConfig,
) -> Result<(GaussianCloud, TrainLog)> {
    check_views(images.len(), cameras.len(), "images")?;
    let mut cloud = initial_cloud(points, scene_extent(cameras))?;
    let views: Vec<TrainView> = images
        .iter()
        .zip(cameras)
        .map(|(image, camera)| TrainView {
            camera,
            image: Some(image),
            change_target: None,
        })
        .collect();
    if cfg.iters_reference == 0 {
        cfg.validate()?;
        return Ok((cloud, TrainLog::default()));
    }
    let log = optimize(&mut cloud, &views, Phase::Reference, cfg.iters_reference, cfg)?;
    Ok((cloud, log))
}

/// Re-optimize a copy of the reference cloud on inference images while the
/// change channels learn the candidate masks.
pub fn train_change(
    reference: &GaussianCloud,
    images: &[ImageBuffer],
    cameras: &[Camera],
    masks: &[ChangeMask],
    cfg: &TrainConfig,
) -> Result<(GaussianCloud, TrainLog)> {
    check_views(images.len(), cameras.len(), "images")?;
    check_views(masks.len(), cameras.len(), "masks")?;
    let mut cloud = reference.clone();
    if cfg.iters_change == 0 {
        cfg.validate()?;
        return Ok((cloud, TrainLog::default()));
    }
    let views: Vec<TrainView> = (0..cameras.len())
        .map(|i| TrainView {
            camera: &cameras[i],
            image: Some(&images[i]),
            change_target: Some(&masks[i]),
        })
        .collect();
    let log = optimize(&mut cloud, &views, Phase::Change, cfg.iters_change, cfg)?;
    Ok((cloud, log))
}

/// Fine-tune the change channels against masks at the given poses (the
/// change loss only; geometry and color are frozen unless
/// `finetune_all_params` is set, in which case `images` supply the RGB loss).
pub fn finetune_change(
    cloud: &GaussianCloud,
    cameras: &[Camera],
    masks: &[ChangeMask],
    images: Option<&[ImageBuffer]>,
    cfg: &TrainConfig,
) -> Result<(GaussianCloud, TrainLog)> {
    check_views(masks.len(), cameras.len(), "masks")?;
    if let Some(imgs) = images {
        check_views(imgs.len(), cameras.len(), "images")?;
    }
    let mut out = cloud.clone();
    if cfg.iters_change_finetune == 0 {
        cfg.validate()?;
        return Ok((out, TrainLog::default()));
    }
    let views: Vec<TrainView> = (0..cameras.len())
        .map(|i| TrainView {
            camera: &cameras[i],
            image: images.map(|v| &v[i]),
            change_target: Some(&masks[i]),
        })
        .collect();
    let log = optimize(&mut out, &views, Phase::Finetune, cfg.iters_change_finetune, cfg)?;
    Ok((out, log))
}
