//! End-to-end change detection: reference build, pose-aligned rendering,
//! candidate masks, change training, augmentation and multi-view mask
//! rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureExtractorSpec;
use crate::io::{
    parse_colmap_model, read_image, read_mask, read_splat_ply, write_image, write_mask, write_splat_ply,
    ColmapFormat, ColmapPoint,
};
use crate::masks::{binarize, combine_masks, feature_diff_mask, filter_unseen, structure_mask};
use crate::metrics::{evaluate_view, summarize, Confusion, Summary, ViewMetrics};
use crate::raster::{rasterize, RenderOutput};
use crate::scene::{Camera, ChangeMask, GaussianCloud, ImageBuffer};
use crate::synth::Fixture;
use crate::train::{finetune_change, train_change, train_reference, TrainConfig};

/// Threshold applied to rendered change masks and to the feature-difference
/// baseline.
pub const MASK_THRESHOLD: f64 = 0.5;

/// Which per-view mask supervises the change channels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskVariant {
    #[default]
    Combined,
    FeatureOnly,
    StructureOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub features: FeatureExtractorSpec,
    pub mask_variant: MaskVariant,
    /// Run the reverse-comparison augmentation and fine-tune phase.
    pub augment: bool,
    /// Also write matched renders and per-view feature/structure masks.
    pub keep_intermediates: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            features: FeatureExtractorSpec::default(),
            mask_variant: MaskVariant::Combined,
            augment: true,
            keep_intermediates: false,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("pipeline config: {e}")))?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[derive(Clone, Debug)]
pub struct View {
    pub name: String,
    pub camera: Camera,
    /// `None` for query poses that were never captured.
    pub image: Option<ImageBuffer>,
}

#[derive(Clone, Debug, Default)]
pub struct SceneData {
    pub reference: Vec<View>,
    pub inference: Vec<View>,
    /// Poses registered in the model but captured in neither scene.
    pub query: Vec<View>,
    pub points: Vec<ColmapPoint>,
    /// Ground-truth change masks by view name, when available.
    pub gt: BTreeMap<String, ChangeMask>,
}

fn image_names(dir: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::file(dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::file(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.to_ascii_lowercase().ends_with(".png") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

impl SceneData {
    /// Load `scene_dir/{reference,inference}/images/*.png`, the shared COLMAP
    /// model in `scene_dir/colmap`, and `scene_dir/gt/*.png` if present.
    /// Model images found in neither image directory become query poses.
    pub fn load(scene_dir: impl AsRef<Path>) -> Result<Self> {
        let dir = scene_dir.as_ref();
        let colmap_dir = dir.join("colmap");
        let format = ColmapFormat::detect(&colmap_dir).ok_or_else(|| {
            Error::InvalidArgument(format!("no COLMAP model (cameras/images/points3D) in {}", colmap_dir.display()))
        })?;
        let model = parse_colmap_model(&colmap_dir, format)?;

        let mut taken = BTreeMap::new();
        let mut load_set = |sub: &str| -> Result<Vec<View>> {
            let img_dir = dir.join(sub).join("images");
            let mut views = Vec::new();
            for name in image_names(&img_dir)? {
                let id = model.find_image(&name).ok_or_else(|| {
                    Error::InvalidArgument(format!("{}: not registered in the COLMAP model", img_dir.join(&name).display()))
                })?;
                if let Some(other) = taken.insert(id, sub.to_string()) {
                    return Err(Error::InvalidArgument(format!("image {name} appears in both {other} and {sub}")));
                }
                views.push(View {
                    camera: model.camera_for(id)?,
                    image: Some(read_image(img_dir.join(&name))?),
                    name,
                });
            }
            Ok(views)
        };
        let reference = load_set("reference")?;
        let inference = load_set("inference")?;
        let mut query = Vec::new();
        let mut ids: Vec<_> = model.images.iter().filter(|(id, _)| !taken.contains_key(*id)).collect();
        ids.sort_by(|a, b| a.1.name.cmp(&b.1.name));
        for (id, im) in ids {
            query.push(View {
                name: im.name.clone(),
                camera: model.camera_for(*id)?,
                image: None,
            });
        }

        let mut gt = BTreeMap::new();
        let gt_dir = dir.join("gt");
        if gt_dir.is_dir() {
            for v in inference.iter().chain(&query) {
                let p = gt_dir.join(&v.name);
                if p.is_file() {
                    gt.insert(v.name.clone(), read_mask(&p)?);
                }
            }
        }
        let data = Self {
            reference,
            inference,
            query,
            points: model.points,
            gt,
        };
        data.check_sizes()?;
        Ok(data)
    }

    pub fn from_fixture(f: &Fixture) -> Self {
        let conv = |v: &crate::synth::FixtureView| View {
            name: v.name.clone(),
            camera: v.camera.clone(),
            image: v.image.clone(),
        };
        Self {
            reference: f.reference.iter().map(conv).collect(),
            inference: f.inference.iter().map(conv).collect(),
            query: f.query.iter().map(conv).collect(),
            points: f.points.clone(),
            gt: f.gt_masks.clone(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.reference.is_empty() {
            return Err(Error::InvalidArgument("no reference images".into()));
        }
        if self.inference.is_empty() {
            return Err(Error::InvalidArgument("no inference images".into()));
        }
        self.check_sizes()
    }

    fn check_sizes(&self) -> Result<()> {
        for v in self.reference.iter().chain(&self.inference) {
            let img = v.image.as_ref().expect("captured views carry images");
            if (img.width, img.height) != (v.camera.width, v.camera.height) {
                return Err(Error::mismatch(format!(
                    "{}: image is {}x{} but its camera is {}x{}",
                    v.name, img.width, img.height, v.camera.width, v.camera.height
                )));
            }
        }
        Ok(())
    }

    pub fn images(views: &[View]) -> Vec<ImageBuffer> {
        views.iter().map(|v| v.image.clone().expect("captured view")).collect()
    }

    pub fn cameras(views: &[View]) -> Vec<Camera> {
        views.iter().map(|v| v.camera.clone()).collect()
    }
}

/// Render `cloud` at every pose, preserving order.
pub fn render_matched_views(cloud: &GaussianCloud, cameras: &[Camera]) -> Result<Vec<RenderOutput>> {
    if cameras.is_empty() {
        return Err(Error::InvalidArgument("no poses to render".into()));
    }
    cameras.par_iter().map(|c| rasterize(cloud, c)).collect()
}

/// The per-view masks behind one candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateMasks {
    /// Continuous feature-aware mask.
    pub feature: ChangeMask,
    /// Binary structure-aware mask.
    pub structure: ChangeMask,
    pub combined: ChangeMask,
}

impl CandidateMasks {
    pub fn target(&self, variant: MaskVariant) -> &ChangeMask {
        match variant {
            MaskVariant::Combined => &self.combined,
            MaskVariant::FeatureOnly => &self.feature,
            MaskVariant::StructureOnly => &self.structure,
        }
    }
}

/// Compare `render` against `image`. `id` names the external feature files:
/// `<id>.render.csfm` for the render and `<id>.csfm` for the image.
pub fn candidate_masks(
    render: &ImageBuffer,
    image: &ImageBuffer,
    spec: &FeatureExtractorSpec,
    id: &str,
) -> Result<CandidateMasks> {
    if !render.same_size(image) {
        return Err(Error::mismatch(format!(
            "{id}: render {}x{} vs image {}x{}",
            render.width, render.height, image.width, image.height
        )));
    }
    let f_ren = spec.extract(render, &format!("{id}.render"))?;
    let f_inf = spec.extract(image, id)?;
    let feature = feature_diff_mask(&f_ren, &f_inf, image.width, image.height)?;
    let structure = structure_mask(render, image)?;
    let combined = combine_masks(&feature, &structure)?;
    Ok(CandidateMasks {
        feature,
        structure,
        combined,
    })
}

fn stem(name: &str) -> &str {
    Path::new(name).file_stem().and_then(|s| s.to_str()).unwrap_or(name)
}

fn candidate_sets(
    renders: &[ImageBuffer],
    images: &[ImageBuffer],
    names: &[String],
    spec: &FeatureExtractorSpec,
) -> Result<Vec<CandidateMasks>> {
    if renders.len() != images.len() || names.len() != images.len() {
        return Err(Error::mismatch(format!("{} renders for {} images", renders.len(), images.len())));
    }
    (0..images.len())
        .into_par_iter()
        .map(|i| candidate_masks(&renders[i], &images[i], spec, stem(&names[i])))
        .collect()
}

/// Combined feature/structure candidate masks for pose-aligned pairs.
pub fn build_candidate_masks(
    renders: &[ImageBuffer],
    images: &[ImageBuffer],
    spec: &FeatureExtractorSpec,
) -> Result<Vec<ChangeMask>> {
    let names: Vec<String> = (0..images.len()).map(|i| format!("view{i}")).collect();
    Ok(candidate_sets(renders, images, &names, spec)?
        .into_iter()
        .map(|c| c.combined)
        .collect())
}

/// Reverse comparison: render the inference-scene cloud at the reference
/// poses and compare against the reference images. Regions the cloud does
/// not cover are dropped.
pub fn augment_masks(
    change_cloud: &GaussianCloud,
    images_ref: &[ImageBuffer],
    cameras_ref: &[Camera],
    spec: &FeatureExtractorSpec,
) -> Result<Vec<ChangeMask>> {
    let names: Vec<String> = (0..images_ref.len()).map(|i| format!("view{i}")).collect();
    augment_sets(change_cloud, images_ref, cameras_ref, &names, spec, MaskVariant::Combined)
}

fn augment_sets(
    change_cloud: &GaussianCloud,
    images_ref: &[ImageBuffer],
    cameras_ref: &[Camera],
    names: &[String],
    spec: &FeatureExtractorSpec,
    variant: MaskVariant,
) -> Result<Vec<ChangeMask>> {
    if images_ref.is_empty() {
        return Err(Error::InvalidArgument("no reference views to augment from".into()));
    }
    if images_ref.len() != cameras_ref.len() {
        return Err(Error::mismatch(format!("{} images for {} cameras", images_ref.len(), cameras_ref.len())));
    }
    let renders = render_matched_views(change_cloud, cameras_ref)?;
    let rgb: Vec<ImageBuffer> = renders.iter().map(|r| r.rgb.clone()).collect();
    let sets = candidate_sets(&rgb, images_ref, names, spec)?;
    sets.iter()
        .zip(&renders)
        .map(|(s, r)| filter_unseen(s.target(variant), &r.alpha))
        .collect()
}

/// Alpha-filtered rendered change at each pose, before thresholding.
pub fn render_change_scores(change_cloud: &GaussianCloud, cameras: &[Camera]) -> Result<Vec<ChangeMask>> {
    render_matched_views(change_cloud, cameras)?
        .iter()
        .map(|r| filter_unseen(&ChangeMask::new(r.width(), r.height(), r.change.data.clone())?, &r.alpha))
        .collect()
}

/// Binary change masks at arbitrary poses.
pub fn render_change_masks(change_cloud: &GaussianCloud, cameras: &[Camera]) -> Result<Vec<ChangeMask>> {
    render_change_scores(change_cloud, cameras)?
        .iter()
        .map(|m| binarize(m, MASK_THRESHOLD))
        .collect()
}

/// Where `run_full` starts from and what it keeps.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Skip reference training and load this cloud instead.
    pub reference_ply: Option<PathBuf>,
    /// Skip the first change-training phase and load this cloud instead.
    pub change_ply: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct MaskOutput {
    pub name: String,
    /// Filtered continuous change, used for AUROC.
    pub scores: ChangeMask,
    pub mask: ChangeMask,
    /// Whether the pose was a captured inference view.
    pub seen: bool,
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub reference: GaussianCloud,
    pub change: GaussianCloud,
    pub finetuned: GaussianCloud,
    /// Candidate masks at the inference poses, in view order.
    pub candidates: Vec<CandidateMasks>,
    /// Augmented masks at the reference poses (empty without augmentation).
    pub augmented: Vec<ChangeMask>,
    /// Final masks at inference poses followed by query poses.
    pub masks: Vec<MaskOutput>,
    pub report: Option<Report>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub seen: Vec<ViewMetrics>,
    pub unseen: Vec<ViewMetrics>,
    /// Thresholded feature-difference masks at the inference poses.
    pub baseline: Vec<ViewMetrics>,
    /// Thresholded candidate masks at the inference poses.
    pub candidate: Vec<ViewMetrics>,
}

pub fn pooled(rows: &[ViewMetrics]) -> Confusion {
    rows.iter().fold(Confusion::default(), |acc, r| Confusion {
        tp: acc.tp + r.counts.tp,
        fp: acc.fp + r.counts.fp,
        fn_: acc.fn_ + r.counts.fn_,
        tn: acc.tn + r.counts.tn,
    })
}

impl Report {
    /// All evaluated final masks, seen views first.
    pub fn all(&self) -> Vec<ViewMetrics> {
        self.seen.iter().chain(&self.unseen).cloned().collect()
    }

    pub fn summary(&self) -> Summary {
        summarize(&self.all())
    }

    /// Share of evaluated pixels flagged as change where the ground truth has none.
    pub fn fp_rate(&self) -> f64 {
        let c = pooled(&self.all());
        let n = c.tp + c.fp + c.fn_ + c.tn;
        if n == 0 {
            0.0
        } else {
            c.fp as f64 / n as f64
        }
    }

    pub fn gt_change_pixels(&self) -> usize {
        let c = pooled(&self.all());
        c.tp + c.fn_
    }

    /// Key-value text, one `key = value` per line. Scene-level mIoU, F1 and
    /// AUROC are `nan` when no ground-truth change pixel exists anywhere.
    pub fn to_text(&self) -> String {
        let defined = self.gt_change_pixels() > 0;
        let mut s = summary_lines("final", &self.all(), defined);
        let _ = writeln!(s, "final.fp_rate = {:.6}", self.fp_rate());
        let _ = writeln!(s, "final.gt_change_pixels = {}", self.gt_change_pixels());
        s += &summary_lines("seen", &self.seen, defined);
        s += &summary_lines("unseen", &self.unseen, defined);
        s += &summary_lines("baseline", &self.baseline, defined);
        s += &summary_lines("candidate", &self.candidate, defined);
        s += &view_lines(&self.seen, Some("seen"));
        s += &view_lines(&self.unseen, Some("unseen"));
        s
    }
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or("nan".to_string(), |v| format!("{v:.6}"))
}

/// Averaged metrics and pooled pixel counts of `rows` under `key.`. With
/// `defined` false the averages are written as `nan`.
pub fn summary_lines(key: &str, rows: &[ViewMetrics], defined: bool) -> String {
    let mut s = String::new();
    let m = summarize(rows);
    let c = pooled(rows);
    let some = |v: f64| Some(v).filter(|_| defined && !rows.is_empty());
    let _ = writeln!(s, "{key}.views = {}", m.views);
    let _ = writeln!(s, "{key}.miou = {}", fmt_metric(some(m.miou)));
    let _ = writeln!(s, "{key}.f1 = {}", fmt_metric(some(m.f1)));
    let _ = writeln!(s, "{key}.auroc = {}", fmt_metric(m.auroc.filter(|_| defined)));
    let _ = writeln!(s, "{key}.tp = {}", c.tp);
    let _ = writeln!(s, "{key}.fp = {}", c.fp);
    let _ = writeln!(s, "{key}.fn = {}", c.fn_);
    s
}

/// Per-view rows as `view.<image id>.<metric>` lines.
pub fn view_lines(rows: &[ViewMetrics], kind: Option<&str>) -> String {
    let mut s = String::new();
    for r in rows {
        let key = format!("view.{}", r.image_id);
        if let Some(kind) = kind {
            let _ = writeln!(s, "{key}.kind = {kind}");
        }
        let _ = writeln!(s, "{key}.miou = {:.6}", r.miou);
        let _ = writeln!(s, "{key}.f1 = {:.6}", r.f1);
        let _ = writeln!(s, "{key}.auroc = {}", fmt_metric(r.auroc));
        let _ = writeln!(s, "{key}.tp = {}", r.counts.tp);
        let _ = writeln!(s, "{key}.fp = {}", r.counts.fp);
        let _ = writeln!(s, "{key}.fn = {}", r.counts.fn_);
    }
    s
}

/// Parse `key = value` report text back into a map.
pub fn parse_report(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// Candidate masks at the inference poses, comparing renders of `reference`
/// against the inference images.
pub fn candidate_stage(data: &SceneData, reference: &GaussianCloud, cfg: &PipelineConfig) -> Result<Vec<CandidateMasks>> {
    let inf_cams = SceneData::cameras(&data.inference);
    let inf_names: Vec<String> = data.inference.iter().map(|v| v.name.clone()).collect();
    let renders = stage("render-matched", render_matched_views(reference, &inf_cams))?;
    let rgb: Vec<ImageBuffer> = renders.into_iter().map(|r| r.rgb).collect();
    stage(
        "candidate-masks",
        candidate_sets(&rgb, &SceneData::images(&data.inference), &inf_names, &cfg.features),
    )
}

/// Change clouds trained from `reference` on the inference views.
#[derive(Clone, Debug)]
pub struct ChangeStages {
    /// After the first change phase.
    pub change: GaussianCloud,
    /// Reverse-comparison masks at the reference poses.
    pub augmented: Vec<ChangeMask>,
    /// After the fine-tune phase (equal to `change` without augmentation).
    pub finetuned: GaussianCloud,
}

/// Train change channels against `targets` (one per inference view), then
/// augment and fine-tune if enabled. `change` skips the first phase.
pub fn change_stage(
    data: &SceneData,
    reference: &GaussianCloud,
    targets: &[ChangeMask],
    cfg: &PipelineConfig,
    change: Option<GaussianCloud>,
) -> Result<ChangeStages> {
    let inf_images = SceneData::images(&data.inference);
    let inf_cams = SceneData::cameras(&data.inference);
    let change = match change {
        Some(c) => c,
        None => stage(
            "train-change",
            train_change(reference, &inf_images, &inf_cams, targets, &cfg.train).map(|(c, _)| c),
        )?,
    };
    if !cfg.augment {
        return Ok(ChangeStages {
            finetuned: change.clone(),
            change,
            augmented: Vec::new(),
        });
    }
    let ref_images = SceneData::images(&data.reference);
    let ref_cams = SceneData::cameras(&data.reference);
    let ref_names: Vec<String> = data.reference.iter().map(|v| v.name.clone()).collect();
    let augmented = stage(
        "augment",
        augment_sets(&change, &ref_images, &ref_cams, &ref_names, &cfg.features, cfg.mask_variant),
    )?;
    let cams: Vec<Camera> = inf_cams.iter().chain(&ref_cams).cloned().collect();
    let masks: Vec<ChangeMask> = targets.iter().chain(&augmented).cloned().collect();
    let images: Vec<ImageBuffer> = inf_images.iter().chain(&ref_images).cloned().collect();
    let finetuned = stage(
        "finetune",
        finetune_change(&change, &cams, &masks, Some(&images), &cfg.train).map(|(c, _)| c),
    )?;
    Ok(ChangeStages {
        change,
        augmented,
        finetuned,
    })
}

/// Final masks at the inference poses followed by the query poses.
pub fn mask_stage(data: &SceneData, cloud: &GaussianCloud) -> Result<Vec<MaskOutput>> {
    let mut out_views: Vec<(&View, bool)> = data.inference.iter().map(|v| (v, true)).collect();
    out_views.extend(data.query.iter().map(|v| (v, false)));
    let cams: Vec<Camera> = out_views.iter().map(|(v, _)| v.camera.clone()).collect();
    let scores = stage("render-masks", render_change_scores(cloud, &cams))?;
    stage(
        "render-masks",
        scores
            .into_iter()
            .zip(&out_views)
            .map(|(scores, (v, seen))| {
                Ok(MaskOutput {
                    name: v.name.clone(),
                    mask: binarize(&scores, MASK_THRESHOLD)?,
                    scores,
                    seen: *seen,
                })
            })
            .collect(),
    )
}

/// Run every stage on `data`. Nothing is written to disk.
pub fn run_scene(data: &SceneData, cfg: &PipelineConfig, opts: &RunOptions) -> Result<RunArtifacts> {
    stage("load", data.check().and(cfg.train.validate()))?;
    let reference = stage(
        "train-reference",
        match &opts.reference_ply {
            Some(p) => read_splat_ply(p),
            None => train_reference(
                &SceneData::images(&data.reference),
                &SceneData::cameras(&data.reference),
                &data.points,
                &cfg.train,
            )
            .map(|(c, _)| c),
        },
    )?;
    log::info!("reference cloud: {} gaussians", reference.len());

    let candidates = candidate_stage(data, &reference, cfg)?;
    let targets: Vec<ChangeMask> = candidates.iter().map(|c| c.target(cfg.mask_variant).clone()).collect();
    let resumed = match &opts.change_ply {
        Some(p) => Some(stage("train-change", read_splat_ply(p))?),
        None => None,
    };
    let stages = change_stage(data, &reference, &targets, cfg, resumed)?;
    let masks = mask_stage(data, &stages.finetuned)?;
    let report = if data.gt.is_empty() {
        None
    } else {
        Some(stage("evaluate", evaluate(data, &candidates, &masks))?)
    };
    Ok(RunArtifacts {
        reference,
        change: stages.change,
        finetuned: stages.finetuned,
        candidates,
        augmented: stages.augmented,
        masks,
        report,
    })
}

fn evaluate(data: &SceneData, candidates: &[CandidateMasks], masks: &[MaskOutput]) -> Result<Report> {
    let mut report = Report {
        seen: Vec::new(),
        unseen: Vec::new(),
        baseline: Vec::new(),
        candidate: Vec::new(),
    };
    for m in masks {
        if let Some(gt) = data.gt.get(&m.name) {
            let row = evaluate_view(&m.name, &m.mask, &m.scores, gt)?;
            if m.seen {
                report.seen.push(row);
            } else {
                report.unseen.push(row);
            }
        }
    }
    for (v, c) in data.inference.iter().zip(candidates) {
        if let Some(gt) = data.gt.get(&v.name) {
            let base = binarize(&c.feature, MASK_THRESHOLD)?;
            report.baseline.push(evaluate_view(&v.name, &base, &c.feature, gt)?);
            let cand = binarize(&c.combined, MASK_THRESHOLD)?;
            report.candidate.push(evaluate_view(&v.name, &cand, &c.combined, gt)?);
        }
    }
    Ok(report)
}

/// Write clouds, masks, renders and the report under `out_dir`.
pub fn write_artifacts(
    art: &RunArtifacts,
    data: &SceneData,
    cfg: &PipelineConfig,
    out_dir: impl AsRef<Path>,
) -> Result<()> {
    let out = out_dir.as_ref();
    let clouds = out.join("clouds");
    write_splat_ply(&art.reference, clouds.join("reference.ply"))?;
    write_splat_ply(&art.change, clouds.join("change.ply"))?;
    write_splat_ply(&art.finetuned, clouds.join("change_finetuned.ply"))?;

    let masks = out.join("masks");
    for (v, c) in data.inference.iter().zip(&art.candidates) {
        write_mask(&c.target(cfg.mask_variant).clone(), masks.join("candidate").join(&v.name))?;
        if cfg.keep_intermediates {
            write_mask(&c.feature, masks.join("feature").join(&v.name))?;
            write_mask(&c.structure, masks.join("structure").join(&v.name))?;
        }
    }
    for (v, m) in data.reference.iter().zip(&art.augmented) {
        write_mask(m, masks.join("augmented").join(&v.name))?;
    }
    for m in &art.masks {
        write_mask(&m.mask, masks.join("final").join(&m.name))?;
    }

    let renders = out.join("renders");
    let views: Vec<&View> = data.inference.iter().chain(&data.query).collect();
    let cams: Vec<Camera> = views.iter().map(|v| v.camera.clone()).collect();
    let outs = render_matched_views(&art.finetuned, &cams)?;
    for (v, r) in views.iter().zip(&outs) {
        let s = stem(&v.name);
        write_image(&r.rgb, renders.join(format!("{s}_rgb.png")))?;
        write_image(&r.change, renders.join(format!("{s}_change.png")))?;
        write_image(&r.alpha, renders.join(format!("{s}_alpha.png")))?;
    }
    if cfg.keep_intermediates {
        let inf_cams = SceneData::cameras(&data.inference);
        for (v, r) in data.inference.iter().zip(render_matched_views(&art.reference, &inf_cams)?) {
            write_image(&r.rgb, renders.join("matched").join(&v.name))?;
        }
    }

    let text = match &art.report {
        Some(r) => r.to_text(),
        None => "# no ground truth available\n".to_string(),
    };
    crate::io::write_file(&out.join("report.txt"), text.as_bytes())
}

/// Load `scene_dir`, run every stage and write the results to `out_dir`.
pub fn run_full(
    scene_dir: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    cfg: &PipelineConfig,
    opts: &RunOptions,
) -> Result<RunArtifacts> {
    let data = stage("load", SceneData::load(scene_dir))?;
    let art = run_scene(&data, cfg, opts)?;
    stage("write", write_artifacts(&art, &data, cfg, out_dir))?;
    Ok(art)
}
