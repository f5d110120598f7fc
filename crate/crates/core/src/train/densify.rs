//! Adaptive density control: clone small Gaussians and split large ones where
//! the screen-space positional gradient is high, and prune transparent ones.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::raster::CloudGradients;
use crate::scene::{logit, quat_to_rotation, GaussianCloud};

use super::adam::Adam;

/// Children per split Gaussian; each child's scale is divided by `0.8 · N`.
pub const SPLIT_CHILDREN: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneRule {
    /// Remove a Gaussian only when both its RGB and change opacities are below
    /// the threshold.
    Dual,
    /// Remove a Gaussian whenever its RGB opacity is below the threshold.
    OpacityOnly,
}

impl PruneRule {
    pub fn should_prune(self, opacity: f64, change_opacity: f64, threshold: f64) -> bool {
        match self {
            PruneRule::Dual => opacity < threshold && change_opacity < threshold,
            PruneRule::OpacityOnly => opacity < threshold,
        }
    }
}

/// Running sum of per-view densification gradient norms.
#[derive(Clone, Debug, Default)]
pub struct GradStats {
    pub accum: Vec<f64>,
    pub count: Vec<u32>,
}

impl GradStats {
    pub fn new(n: usize) -> Self {
        Self {
            accum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    pub fn add(&mut self, grads: &CloudGradients) {
        for i in 0..self.accum.len() {
            if grads.visible[i] {
                self.accum[i] += grads.densify_norm(i);
                self.count[i] += 1;
            }
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.accum[i] / self.count[i] as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensifyParams {
    pub grad_threshold: f64,
    /// Gaussians whose largest scale exceeds `percent_dense · extent` split,
    /// smaller ones clone.
    pub percent_dense: f64,
    pub prune_opacity: f64,
    pub prune_rule: PruneRule,
    pub max_gaussians: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Clone/split by gradient, then prune by opacity. Offspring copy every
/// parameter of their parent, change channels included; clones are
/// appended, split parents are replaced by their children. Optimizer state is
/// carried for survivors and zeroed for new Gaussians. Resets `stats`.
pub fn densify_and_prune<R: Rng>(
    cloud: &mut GaussianCloud,
    adam: &mut Adam,
    stats: &mut GradStats,
    p: &DensifyParams,
    rng: &mut R,
) -> DensifyReport {
    let n = cloud.len();
    let mut report = DensifyReport::default();
    let size_limit = p.percent_dense * cloud.scene_extent;
    let mut budget = p.max_gaussians.saturating_sub(n);

    let mut split = vec![false; n];
    let mut appended = Vec::new();
    for i in 0..n {
        if budget == 0 {
            break;
        }
        if stats.mean(i) < p.grad_threshold {
            continue;
        }
        let g = cloud.gaussians[i];
        let max_scale = g.scale().into_iter().fold(0.0, f64::max);
        if max_scale <= size_limit {
            appended.push(g);
            report.cloned += 1;
            budget -= 1;
        } else if budget >= SPLIT_CHILDREN - 1 {
            let Ok(r) = quat_to_rotation(g.rotation_f64()) else { continue };
            let s = Vector3::from(g.scale());
            let shrink = (0.8 * SPLIT_CHILDREN as f64).ln();
            for _ in 0..SPLIT_CHILDREN {
                let z = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                let offset = r * s.component_mul(&z);
                let mut child = g;
                for k in 0..3 {
                    child.position[k] = (g.position[k] as f64 + offset[k]) as f32;
                    child.log_scale[k] = (g.log_scale[k] as f64 - shrink) as f32;
                }
                appended.push(child);
            }
            split[i] = true;
            report.split += 1;
            budget -= SPLIT_CHILDREN - 1;
        }
    }

    let mut gaussians = Vec::with_capacity(n + appended.len());
    let mut sources = Vec::with_capacity(n + appended.len());
    for i in 0..n {
        if !split[i] {
            gaussians.push(cloud.gaussians[i]);
            sources.push(Some(i));
        }
    }
    for g in appended {
        gaussians.push(g);
        sources.push(None);
    }

    // prune, but never down to an empty cloud
    let keep: Vec<bool> = gaussians
        .iter()
        .map(|g| !p.prune_rule.should_prune(g.opacity(), g.change_opacity(), p.prune_opacity))
        .collect();
    if keep.iter().any(|k| *k) {
        report.pruned = keep.iter().filter(|k| !**k).count();
        let mut idx = 0;
        gaussians.retain(|_| {
            idx += 1;
            keep[idx - 1]
        });
        let mut idx = 0;
        sources.retain(|_| {
            idx += 1;
            keep[idx - 1]
        });
    }
    cloud.gaussians = gaussians;
    adam.remap(&sources);
    *stats = GradStats::new(cloud.len());
    report
}

/// Clamp every RGB opacity to at most `ceiling`; change opacities are left
/// alone so learned change is not erased.
pub fn reset_opacity(cloud: &mut GaussianCloud, adam: &mut Adam, ceiling: f64) {
    let cap = logit(ceiling) as f32;
    for g in &mut cloud.gaussians {
        g.opacity_logit = g.opacity_logit.min(cap);
    }
    adam.reset_opacity();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Gaussian3D;
    use rand::SeedableRng;

    fn cloud(gs: Vec<Gaussian3D>) -> GaussianCloud {
        GaussianCloud::new(gs, 1.0).unwrap()
    }

    fn params(rule: PruneRule) -> DensifyParams {
        DensifyParams {
            grad_threshold: 1e-3,
            percent_dense: 0.01,
            prune_opacity: 5e-3,
            prune_rule: rule,
            max_gaussians: 100,
        }
    }

    #[test]
    fn dual_rule_keeps_change_carriers() {
        let mut a = Gaussian3D::new([0.0; 3], [-3.0; 3], [1.0, 0.0, 0.0, 0.0], 0.001, [0.5; 3]);
        a.change_opacity_logit = logit(0.5) as f32;
        let mut b = Gaussian3D::new([1.0; 3], [-3.0; 3], [1.0, 0.0, 0.0, 0.0], 0.001, [0.5; 3]);
        b.change_opacity_logit = logit(0.001) as f32;
        let c = Gaussian3D::new([2.0; 3], [-3.0; 3], [1.0, 0.0, 0.0, 0.0], 0.5, [0.5; 3]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for (rule, expect) in [(PruneRule::Dual, 2), (PruneRule::OpacityOnly, 1)] {
            let mut cl = cloud(vec![a, b, c]);
            let mut adam = Adam::new(3);
            let mut stats = GradStats::new(3);
            densify_and_prune(&mut cl, &mut adam, &mut stats, &params(rule), &mut rng);
            assert_eq!(cl.len(), expect, "{rule:?}");
            assert_eq!(adam.m.len(), expect);
        }
    }

    #[test]
    fn clone_and_split_copy_change_channels() {
        let mut small = Gaussian3D::new([0.0; 3], [(0.005f64).ln(); 3], [1.0, 0.0, 0.0, 0.0], 0.5, [0.2; 3]);
        small.change_dc = 1.5;
        let mut big = Gaussian3D::new([1.0; 3], [(0.5f64).ln(); 3], [1.0, 0.0, 0.0, 0.0], 0.5, [0.7; 3]);
        big.change_opacity_logit = -0.5;
        let mut cl = cloud(vec![small, big]);
        let mut adam = Adam::new(2);
        let mut stats = GradStats::new(2);
        stats.accum = vec![1.0, 1.0];
        stats.count = vec![1, 1];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let r = densify_and_prune(&mut cl, &mut adam, &mut stats, &params(PruneRule::Dual), &mut rng);
        assert_eq!((r.cloned, r.split, r.pruned), (1, 1, 0));
        // small, its clone, two children of big
        assert_eq!(cl.len(), 4);
        assert_eq!(cl.gaussians[0], small);
        assert_eq!(cl.gaussians[1], small);
        for child in &cl.gaussians[2..] {
            assert_eq!(child.change_opacity_logit, big.change_opacity_logit);
            assert_eq!(child.change_dc, big.change_dc);
            assert!((child.scale()[0] - 0.5 / 1.6).abs() < 1e-6);
        }
        assert_eq!(stats.accum.len(), 4);
    }

    #[test]
    fn cap_limits_growth() {
        let small = Gaussian3D::new([0.0; 3], [(0.005f64).ln(); 3], [1.0, 0.0, 0.0, 0.0], 0.5, [0.2; 3]);
        let mut cl = cloud(vec![small; 3]);
        let mut adam = Adam::new(3);
        let mut stats = GradStats::new(3);
        stats.accum = vec![1.0; 3];
        stats.count = vec![1; 3];
        let mut p = params(PruneRule::Dual);
        p.max_gaussians = 4;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        densify_and_prune(&mut cl, &mut adam, &mut stats, &p, &mut rng);
        assert_eq!(cl.len(), 4);
    }

    #[test]
    fn opacity_reset_leaves_change_opacity() {
        let mut g = Gaussian3D::new([0.0; 3], [0.0; 3], [1.0, 0.0, 0.0, 0.0], 0.9, [0.2; 3]);
        g.change_opacity_logit = logit(0.9) as f32;
        let mut cl = cloud(vec![g]);
        let mut adam = Adam::new(1);
        reset_opacity(&mut cl, &mut adam, 0.01);
        assert!((cl.gaussians[0].opacity() - 0.01).abs() < 1e-6);
        assert!((cl.gaussians[0].change_opacity() - 0.9).abs() < 1e-6);
    }
}
