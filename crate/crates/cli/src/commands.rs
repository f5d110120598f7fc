use std::path::Path;

use changesplat::features::{FeatureExtractorSpec, FeatureSource};
use changesplat::io::{
    parse_colmap_model, read_image, read_mask, read_splat_ply, write_image, write_mask, write_splat_ply,
    ColmapFormat,
};
use changesplat::masks::{binarize, filter_unseen};
use changesplat::metrics::evaluate_view;
use changesplat::pipeline::{
    candidate_masks, candidate_stage, change_stage, run_scene, summary_lines, view_lines, write_artifacts,
    PipelineConfig, RunOptions, SceneData, MASK_THRESHOLD,
};
use changesplat::raster::rasterize;
use changesplat::scene::{Camera, ChangeMask};
use changesplat::synth::{build_fixture, camera_layout, centroid, write_fixture, CameraRig, FixtureManifest, Layout};
use changesplat::train::train_reference;
use changesplat::{Error, Result};

use crate::{Cli, Command, EvalArgs, FeatureArgs, LayoutArg, MasksArgs, RenderArgs, RunArgs, SynthArgs};
use crate::{TrainChangeArgs, TrainRefArgs};

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(a, cli.seed),
        Command::TrainRef(a) => train_ref(a, cli.seed),
        Command::Masks(a) => masks(a),
        Command::TrainChange(a) => train_change(a, cli.seed),
        Command::Render(a) => render(a),
        Command::Eval(a) => eval(a),
        Command::Run(a) => run(a, cli.seed),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| Error::File {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::from_toml(&read_text(p)?)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

/// PNG file names in `dir`, sorted.
fn png_names(dir: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(dir).map_err(|source| Error::File {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.to_ascii_lowercase().ends_with(".png"))
        .collect();
    names.sort();
    Ok(names)
}

fn stem(name: &str) -> &str {
    Path::new(name).file_stem().and_then(|s| s.to_str()).unwrap_or(name)
}

fn synth(a: &SynthArgs, seed: Option<u64>) -> Result<()> {
    let mut m = match &a.manifest {
        Some(p) => FixtureManifest::from_toml(&read_text(p)?)?,
        None => FixtureManifest::default(),
    };
    if let Some(s) = seed {
        m.seed = s;
    }
    if let Some(l) = a.layout {
        m.layout = match l {
            LayoutArg::Orbit => Layout::Orbit,
            LayoutArg::Hemisphere => Layout::Hemisphere,
        };
    }
    let set = |field: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *field = v;
        }
    };
    set(&mut m.gaussians, a.gaussians);
    set(&mut m.clusters, a.clusters);
    set(&mut m.reference_views, a.reference_views);
    set(&mut m.inference_views, a.inference_views);
    set(&mut m.query_views, a.query_views);
    set(&mut m.width, a.size);
    set(&mut m.height, a.size);
    if a.no_changes {
        m.changes.clear();
    }
    let f = build_fixture(&m)?;
    write_fixture(&f, &a.out)?;
    println!(
        "wrote {} reference, {} inference and {} query views to {}",
        f.reference.len(),
        f.inference.len(),
        f.query.len(),
        a.out.display()
    );
    Ok(())
}

fn train_ref(a: &TrainRefArgs, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(a.config.as_deref(), seed)?;
    let data = SceneData::load(&a.scene)?;
    let (cloud, log) = train_reference(
        &SceneData::images(&data.reference),
        &SceneData::cameras(&data.reference),
        &data.points,
        &cfg.train,
    )?;
    write_splat_ply(&cloud, &a.out)?;
    println!(
        "reference cloud: {} gaussians, final loss {:.5}",
        cloud.len(),
        log.losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn feature_spec(a: &FeatureArgs, base: &FeatureExtractorSpec) -> FeatureExtractorSpec {
    let mut spec = base.clone();
    if let (Some(dir), Some(dim)) = (&a.features_dir, a.feature_dim) {
        spec.source = FeatureSource::ExternalFiles { dir: dir.clone(), dim };
    }
    if let Some(s) = a.patch_size {
        spec.patch_size = s;
    }
    spec
}

fn masks(a: &MasksArgs) -> Result<()> {
    let spec = feature_spec(&a.features, &FeatureExtractorSpec::default());
    let names = png_names(&a.images)?;
    if names.is_empty() {
        return Err(Error::InvalidArgument(format!("no PNG images in {}", a.images.display())));
    }
    for name in &names {
        // plain name, or the `<stem>_rgb.png` that `render` writes
        let render_path = [a.renders.join(name), a.renders.join(format!("{}_rgb.png", stem(name)))]
            .into_iter()
            .find(|p| p.is_file())
            .ok_or_else(|| Error::InvalidArgument(format!("missing render for {name} in {}", a.renders.display())))?;
        let c = candidate_masks(&read_image(&render_path)?, &read_image(a.images.join(name))?, &spec, stem(name))?;
        write_mask(&c.combined, a.out.join(name))?;
        if a.components {
            write_mask(&c.feature, a.out.join("feature").join(name))?;
            write_mask(&c.structure, a.out.join("structure").join(name))?;
        }
    }
    println!("wrote {} candidate masks to {}", names.len(), a.out.display());
    Ok(())
}

fn train_change(a: &TrainChangeArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref(), seed)?;
    cfg.augment = a.augment;
    let data = SceneData::load(&a.scene)?;
    if data.inference.is_empty() {
        return Err(Error::InvalidArgument(format!("no inference images in {}", a.scene.display())));
    }
    let reference = read_splat_ply(&a.reference)?;
    let targets: Vec<ChangeMask> = match &a.masks {
        Some(dir) => data
            .inference
            .iter()
            .map(|v| read_mask(dir.join(&v.name)))
            .collect::<Result<_>>()?,
        None => candidate_stage(&data, &reference, &cfg)?
            .into_iter()
            .map(|c| c.target(cfg.mask_variant).clone())
            .collect(),
    };
    let resumed = a.change.as_ref().map(read_splat_ply).transpose()?;
    let stages = change_stage(&data, &reference, &targets, &cfg, resumed)?;
    write_splat_ply(&stages.finetuned, &a.out)?;
    println!("change cloud: {} gaussians", stages.finetuned.len());
    Ok(())
}

fn render(a: &RenderArgs) -> Result<()> {
    let cloud = read_splat_ply(&a.cloud)?;
    let views: Vec<(String, Camera)> = match (&a.colmap, a.orbit) {
        (Some(dir), _) => {
            let format = ColmapFormat::detect(dir)
                .ok_or_else(|| Error::InvalidArgument(format!("no COLMAP model in {}", dir.display())))?;
            let model = parse_colmap_model(dir, format)?;
            let mut out = Vec::new();
            for (id, im) in &model.images {
                if a.views.is_empty() || a.views.contains(&im.name) {
                    out.push((im.name.clone(), model.camera_for(*id)?));
                }
            }
            if let Some(missing) = a.views.iter().find(|n| !out.iter().any(|(m, _)| m == *n)) {
                return Err(Error::InvalidArgument(format!("view {missing} is not in the model")));
            }
            out
        }
        (None, Some(n)) => {
            let rig = CameraRig {
                width: a.size,
                height: a.size,
                fov_deg: a.fov,
                radius: a.radius,
                elevation_deg: a.elevation,
                azimuth_offset_deg: 0.0,
            };
            camera_layout(Layout::Orbit, n, centroid(&cloud), &rig)?
                .into_iter()
                .enumerate()
                .map(|(k, c)| (format!("orbit_{k:03}.png"), c))
                .collect()
        }
        (None, None) => return Err(Error::InvalidArgument("give --colmap or --orbit".into())),
    };
    for (name, cam) in &views {
        let out = rasterize(&cloud, cam)?;
        let s = stem(name);
        write_image(&out.rgb, a.out.join(format!("{s}_rgb.png")))?;
        write_image(&out.change, a.out.join(format!("{s}_change.png")))?;
        write_image(&out.alpha, a.out.join(format!("{s}_alpha.png")))?;
        let change = ChangeMask::new(cam.width, cam.height, out.change.data.clone())?;
        let mask = binarize(&filter_unseen(&change, &out.alpha)?, MASK_THRESHOLD)?;
        write_mask(&mask, a.out.join(format!("{s}_mask.png")))?;
    }
    println!("rendered {} views to {}", views.len(), a.out.display());
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let names = png_names(&a.gt)?;
    if names.is_empty() {
        return Err(Error::InvalidArgument(format!("no ground-truth masks in {}", a.gt.display())));
    }
    let mut rows = Vec::new();
    for name in &names {
        let gt = binarize(&read_mask(a.gt.join(name))?, MASK_THRESHOLD)?;
        let raw = read_mask(a.pred.join(name))?;
        let pred = binarize(&raw, MASK_THRESHOLD)?;
        let scores = match &a.scores {
            Some(dir) => read_mask(dir.join(name))?,
            None => raw,
        };
        rows.push(evaluate_view(name, &pred, &scores, &gt)?);
    }
    let defined = rows.iter().any(|r| r.counts.tp + r.counts.fn_ > 0);
    let text = summary_lines("summary", &rows, defined) + &view_lines(&rows, None);
    match &a.out {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(a: &RunArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref(), seed)?;
    if a.no_augment {
        cfg.augment = false;
    }
    cfg.keep_intermediates |= a.keep_intermediates;
    let data = match (&a.scene, &a.fixture) {
        (Some(dir), _) => SceneData::load(dir).map_err(|e| e.in_stage("load"))?,
        (None, Some(path)) => {
            let mut m = FixtureManifest::from_toml(&read_text(path)?)?;
            if let Some(s) = seed {
                m.seed = s;
            }
            let f = build_fixture(&m).map_err(|e| e.in_stage("load"))?;
            write_fixture(&f, a.out.join("scene"))?;
            SceneData::from_fixture(&f)
        }
        (None, None) => return Err(Error::InvalidArgument("give --scene or --fixture".into())),
    };
    let opts = RunOptions {
        reference_ply: a.reference.clone(),
        change_ply: a.change.clone(),
    };
    let art = run_scene(&data, &cfg, &opts)?;
    write_artifacts(&art, &data, &cfg, &a.out).map_err(|e| e.in_stage("write"))?;
    match &art.report {
        Some(r) => {
            let s = r.summary();
            println!(
                "final mIoU {:.4}, F1 {:.4} over {} views; report in {}",
                s.miou,
                s.f1,
                s.views,
                a.out.join("report.txt").display()
            );
        }
        None => println!("masks written to {}", a.out.join("masks").display()),
    }
    Ok(())
}
