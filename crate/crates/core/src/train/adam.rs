//! Adam over per-Gaussian parameter groups.

use crate::raster::GaussianGrad;
use crate::scene::Gaussian3D;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    Position,
    Rotation,
    Scale,
    Opacity,
    ShDc,
    ShRest,
    ChangeDc,
    ChangeRest,
    ChangeOpacity,
}

impl Group {
    pub const ALL: [Group; 9] = [
        Group::Position,
        Group::Rotation,
        Group::Scale,
        Group::Opacity,
        Group::ShDc,
        Group::ShRest,
        Group::ChangeDc,
        Group::ChangeRest,
        Group::ChangeOpacity,
    ];

    pub fn is_change(self) -> bool {
        matches!(self, Group::ChangeDc | Group::ChangeRest | Group::ChangeOpacity)
    }
}

/// Learning rate per group; a zero rate freezes the group.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GroupRates {
    pub position: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub sh_dc: f64,
    pub sh_rest: f64,
    pub change_dc: f64,
    pub change_rest: f64,
    pub change_opacity: f64,
}

impl GroupRates {
    pub fn get(&self, g: Group) -> f64 {
        match g {
            Group::Position => self.position,
            Group::Rotation => self.rotation,
            Group::Scale => self.scale,
            Group::Opacity => self.opacity,
            Group::ShDc => self.sh_dc,
            Group::ShRest => self.sh_rest,
            Group::ChangeDc => self.change_dc,
            Group::ChangeRest => self.change_rest,
            Group::ChangeOpacity => self.change_opacity,
        }
    }

    pub fn freeze(&mut self, keep: impl Fn(Group) -> bool) {
        for g in Group::ALL {
            if !keep(g) {
                *self.slot(g) = 0.0;
            }
        }
    }

    fn slot(&mut self, g: Group) -> &mut f64 {
        match g {
            Group::Position => &mut self.position,
            Group::Rotation => &mut self.rotation,
            Group::Scale => &mut self.scale,
            Group::Opacity => &mut self.opacity,
            Group::ShDc => &mut self.sh_dc,
            Group::ShRest => &mut self.sh_rest,
            Group::ChangeDc => &mut self.change_dc,
            Group::ChangeRest => &mut self.change_rest,
            Group::ChangeOpacity => &mut self.change_opacity,
        }
    }
}

/// Visit every scalar parameter of `g` with its gradient and moment slots.
pub(crate) fn for_each_param(
    g: &mut Gaussian3D,
    d: &GaussianGrad,
    m: &mut GaussianGrad,
    v: &mut GaussianGrad,
    mut f: impl FnMut(Group, &mut f32, f64, &mut f64, &mut f64),
) {
    for k in 0..3 {
        f(Group::Position, &mut g.position[k], d.position[k], &mut m.position[k], &mut v.position[k]);
        f(Group::Scale, &mut g.log_scale[k], d.log_scale[k], &mut m.log_scale[k], &mut v.log_scale[k]);
    }
    for k in 0..4 {
        f(Group::Rotation, &mut g.rotation[k], d.rotation[k], &mut m.rotation[k], &mut v.rotation[k]);
    }
    f(Group::Opacity, &mut g.opacity_logit, d.opacity_logit, &mut m.opacity_logit, &mut v.opacity_logit);
    for k in 0..16 {
        let group = if k == 0 { Group::ShDc } else { Group::ShRest };
        for c in 0..3 {
            f(group, &mut g.sh_color[k][c], d.sh_color[k][c], &mut m.sh_color[k][c], &mut v.sh_color[k][c]);
        }
    }
    f(Group::ChangeDc, &mut g.change_dc, d.change_dc, &mut m.change_dc, &mut v.change_dc);
    for k in 0..15 {
        f(Group::ChangeRest, &mut g.change_rest[k], d.change_rest[k], &mut m.change_rest[k], &mut v.change_rest[k]);
    }
    f(
        Group::ChangeOpacity,
        &mut g.change_opacity_logit,
        d.change_opacity_logit,
        &mut m.change_opacity_logit,
        &mut v.change_opacity_logit,
    );
}

#[derive(Clone, Debug, Default)]
pub struct Adam {
    pub step: u64,
    pub m: Vec<GaussianGrad>,
    pub v: Vec<GaussianGrad>,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            step: 0,
            m: vec![GaussianGrad::default(); n],
            v: vec![GaussianGrad::default(); n],
        }
    }

    /// One update of every Gaussian with a nonzero rate for its group.
    pub fn step(&mut self, gaussians: &mut [Gaussian3D], grads: &[GaussianGrad], rates: &GroupRates) {
        assert_eq!(gaussians.len(), grads.len());
        assert_eq!(gaussians.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        for (i, g) in gaussians.iter_mut().enumerate() {
            for_each_param(g, &grads[i], &mut self.m[i], &mut self.v[i], |group, p, d, m, v| {
                let lr = rates.get(group);
                if lr == 0.0 {
                    return;
                }
                *m = BETA1 * *m + (1.0 - BETA1) * d;
                *v = BETA2 * *v + (1.0 - BETA2) * d * d;
                let step = lr * (*m / bc1) / ((*v / bc2).sqrt() + EPSILON);
                *p = (*p as f64 - step) as f32;
            });
        }
    }

    /// Keep the state of the Gaussians listed in `sources` (in that order);
    /// `None` entries start with zero moments.
    pub fn remap(&mut self, sources: &[Option<usize>]) {
        let pick = |s: &[GaussianGrad], src: &Option<usize>| src.map(|i| s[i]).unwrap_or_default();
        self.m = sources.iter().map(|s| pick(&self.m, s)).collect();
        self.v = sources.iter().map(|s| pick(&self.v, s)).collect();
    }

    /// Zero the opacity moments (used after an opacity reset).
    pub fn reset_opacity(&mut self) {
        for (m, v) in self.m.iter_mut().zip(self.v.iter_mut()) {
            m.opacity_logit = 0.0;
            v.opacity_logit = 0.0;
        }
    }
}
