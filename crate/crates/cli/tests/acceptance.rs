//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Always exits 0 so that a failing criterion is reported without breaking
//! `cargo test`; set `CHANGESPLAT_ACCEPTANCE_STRICT=1` to exit 1 on any FAIL.
//! `CHANGESPLAT_FUZZ_SECS` shortens the parser fuzz run (default 600 s) and
//! `CHANGESPLAT_ACCEPTANCE_ONLY=5,9` runs a subset.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use changesplat::io::{parse_colmap_model, write_colmap_model, ColmapFormat};
use changesplat::masks::{
    binarize, combine_masks, feature_diff_grid, feature_diff_mask, filter_unseen, structure_mask,
    structure_mask_from_ssim, upsample_bicubic, SsimMap,
};
use changesplat::metrics::{auroc, confusion, f1, miou};
use changesplat::pipeline::{parse_report, MaskVariant, PipelineConfig};
use changesplat::raster::rasterize;
use changesplat::scene::{Camera, ChangeMask, FeatureMap, Gaussian3D, GaussianCloud, ImageBuffer};
use changesplat::ssim::{ssim_map, ssim_plane};
use changesplat::train::{train_change, PruneRule, TrainConfig};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

// 1

fn rasterizer_oracle() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let n = 20 + (seed as usize * 37) % 181;
        let (cloud, cam) = support::random_scene(1000 + seed, n, 64);
        worst = worst.max(support::oracle_deviation(&cloud, &cam));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst <= 1e-4, format!("max deviation {worst:.2e}"))?;
    ensure(secs < 60.0, format!("took {secs:.1} s"))?;
    Ok(format!("50 scenes, max deviation {worst:.2e}, {secs:.1} s"))
}

// 2

fn gradients() -> Check {
    let start = Instant::now();
    let mut worst = 0.0;
    let mut worst_name = String::new();
    let mut groups: Vec<&str> = Vec::new();
    let mut checked = 0;
    for (seed, n) in [(11, 1), (1, 2), (2, 3), (3, 5)] {
        let (cloud, cam) = support::gradient_scene(seed, n);
        let r = support::check_gradients(&cloud, &cam, seed + 10);
        if r.worst_rel > worst {
            worst = r.worst_rel;
            worst_name = r.worst_name;
        }
        for g in r.groups {
            if !groups.contains(&g) {
                groups.push(g);
            }
        }
        checked += r.checked;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst < 1e-3, format!("rel. error {worst:.2e} at {worst_name}"))?;
    ensure(secs < 120.0, format!("took {secs:.1} s"))?;
    Ok(format!(
        "{checked} partials over groups [{}], max rel. error {worst:.2e}, {secs:.1} s",
        groups.join(", ")
    ))
}

// 3

fn ssim_oracle() -> Check {
    let mut worst: f64 = 0.0;
    let mut self_worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let x: Vec<f64> = (0..32 * 32).map(|_| rng.random()).collect();
        let mut y: Vec<f64> = x.iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
        if rng.random_bool(0.5) {
            y = (0..32 * 32).map(|_| rng.random()).collect();
        }
        let got = ssim_plane(&x, &y, 32, 32);
        worst = worst.max(support::max_abs_diff(&got, &support::reference_ssim(&x, &y, 32, 32)));
        let img = ImageBuffer::new(32, 32, 1, x.clone()).unwrap();
        let s = ssim_map(&img, &img).unwrap();
        self_worst = self_worst.max(s.values.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max));
    }
    ensure(worst <= 1e-6, format!("max deviation {worst:.2e}"))?;
    ensure(self_worst <= 1e-9, format!("self-similarity off by {self_worst:.2e}"))?;
    Ok(format!("20 pairs, max deviation {worst:.2e}, self-similarity within {self_worst:.1e}"))
}

// 4

fn mask(v: &[f64]) -> ChangeMask {
    ChangeMask::new(v.len(), 1, v.to_vec()).unwrap()
}

fn alpha(v: &[f64]) -> ImageBuffer {
    ImageBuffer::new(v.len(), 1, 1, v.to_vec()).unwrap()
}

fn equation_examples() -> Check {
    let mut n = 0;
    let mut check = |ok: bool, what: &str| {
        n += 1;
        ensure(ok, what.to_string())
    };
    // structure mask
    let img = ImageBuffer::new(12, 12, 3, (0..432).map(|i| (i % 11) as f64 / 11.0).collect()).unwrap();
    check(structure_mask(&img, &img).unwrap().count_nonzero() == 0, "identical images flagged")?;
    let black = ImageBuffer::filled(16, 16, 3, 0.0);
    let white = ImageBuffer::filled(16, 16, 3, 1.0);
    let s = ssim_map(&black, &white).unwrap();
    let c1 = changesplat::ssim::C1;
    check(
        s.values.iter().all(|v| (v - c1 / (1.0 + c1)).abs() < 1e-12),
        "constant-image SSIM",
    )?;
    check(structure_mask(&black, &white).unwrap().count_nonzero() == 256, "black vs white not all flagged")?;
    let exact = SsimMap {
        width: 3,
        height: 1,
        values: vec![0.5, 0.5 + 1e-12, 0.25],
    };
    check(structure_mask_from_ssim(&exact).values == [1.0, 0.0, 1.0], "SSIM = 0.5 not inclusive")?;

    // feature mask
    let fmap = |d: usize, v: Vec<f32>| FeatureMap::new(2, 2, d, 8, v).unwrap();
    let same = fmap(3, (0..12).map(|v| v as f32).collect());
    check(feature_diff_mask(&same, &same, 16, 16).unwrap().count_nonzero() == 0, "f_ren = f_inf flagged")?;
    let a = fmap(2, vec![0.0; 8]);
    let b = fmap(2, vec![0.0, 0.0, 0.5, 0.5, 1.0, 1.0, 3.0, 1.0]);
    check(feature_diff_grid(&a, &b).unwrap() == [0.0, 0.25, 0.5, 1.0], "normalized grid")?;
    let m = feature_diff_mask(&a, &b, 2, 2).unwrap();
    check(
        m.values.iter().zip([0.0, 0.0, 0.5, 1.0]).all(|(v, e)| (v - e).abs() < 1e-12),
        "thresholded grid",
    )?;
    let up = upsample_bicubic(&[0.37; 6], 3, 2, 23, 11);
    check(up.iter().all(|v| (v - 0.37).abs() < 1e-12), "constant upsampling")?;

    // combination
    let f = mask(&[0.0, 0.6, 0.9]);
    let sm = ChangeMask::new_binary(3, 1, vec![1.0, 0.0, 1.0]).unwrap();
    check(combine_masks(&f, &sm).unwrap().values == [0.0, 0.0, 0.9], "product example")?;
    let ones = ChangeMask::new_binary(3, 1, vec![1.0; 3]).unwrap();
    check(combine_masks(&f, &ones).unwrap().values == f.values, "m_s = 1 identity")?;
    check(combine_masks(&mask(&[0.0; 3]), &sm).unwrap().count_nonzero() == 0, "m_f = 0 annihilator")?;

    // alpha filtering and binarization
    let m = mask(&[0.8, 0.8]);
    check(filter_unseen(&m, &alpha(&[0.49, 0.5])).unwrap().values == [0.0, 0.8], "A_ren = 0.5 not inclusive")?;
    check(filter_unseen(&m, &alpha(&[1.0, 1.0])).unwrap().values == m.values, "alpha 1 identity")?;
    check(filter_unseen(&m, &alpha(&[0.0, 0.0])).unwrap().count_nonzero() == 0, "alpha 0")?;
    check(binarize(&mask(&[0.5; 4]), 0.5).unwrap().values == [1.0; 4], "binarize at 0.5")?;
    check(binarize(&mask(&[0.2, 0.5, 0.8]), 0.5).unwrap().values == [0.0, 1.0, 1.0], "binarize example")?;
    check(binarize(&sm, 0.5).unwrap().values == sm.values, "binarize idempotent")?;
    Ok(format!("{n} examples"))
}

// 5

/// Two Gaussians side by side; the second is gone in the inference images and
/// the change target covers exactly its footprint.
fn dual_fixture() -> (GaussianCloud, Vec<Camera>, Vec<ImageBuffer>, Vec<ChangeMask>) {
    let keep = Gaussian3D::new([-0.5, 0.0, 0.0], [(0.18f64).ln(); 3], [1.0, 0.0, 0.0, 0.0], 0.95, [0.9, 0.3, 0.2]);
    let gone = Gaussian3D::new([0.5, 0.0, 0.0], [(0.18f64).ln(); 3], [1.0, 0.0, 0.0, 0.0], 0.95, [0.2, 0.8, 0.4]);
    let reference = GaussianCloud::new(vec![keep, gone], 1.0).unwrap();
    let after = GaussianCloud::new(vec![keep], 1.0).unwrap();
    let only_gone = GaussianCloud::new(vec![gone], 1.0).unwrap();
    let cams: Vec<Camera> = (0..4)
        .map(|k| {
            let a = k as f64 * std::f64::consts::FRAC_PI_2;
            let eye = Vector3::new(0.3 * a.cos(), 0.3 * a.sin(), 3.0);
            Camera::look_at(eye, Vector3::zeros(), Vector3::y(), 50.0, 32, 32).unwrap()
        })
        .collect();
    let images = cams.iter().map(|c| rasterize(&after, c).unwrap().rgb).collect();
    let masks = cams
        .iter()
        .map(|c| {
            let a = rasterize(&only_gone, c).unwrap().alpha;
            ChangeMask::new_binary(32, 32, a.data.iter().map(|v| if *v >= 0.1 { 1.0 } else { 0.0 }).collect())
                .unwrap()
        })
        .collect();
    (reference, cams, images, masks)
}

fn dual_opacity_culling() -> Check {
    let (reference, cams, images, masks) = dual_fixture();
    let mut results = Vec::new();
    for rule in [PruneRule::Dual, PruneRule::OpacityOnly] {
        let cfg = TrainConfig {
            iters_change: 3000,
            prune_rule: rule,
            ..TrainConfig::default()
        };
        let (cloud, _) = train_change(&reference, &images, &cams, &masks, &cfg).map_err(|e| e.to_string())?;
        // Gaussians still sitting where the removed one was
        let near: Vec<&Gaussian3D> = cloud
            .gaussians
            .iter()
            .filter(|g| (g.position_f64()[0] - 0.5).abs() < 0.25 && g.position_f64()[1].abs() < 0.25)
            .collect();
        // carriers: transparent in RGB, opaque in the change channel
        let carriers = near
            .iter()
            .filter(|g| g.opacity() < cfg.prune_opacity && g.change_opacity() >= 0.5)
            .count();
        results.push((rule, near.len(), carriers));
    }
    let text = results
        .iter()
        .map(|(r, n, c)| format!("{r:?}: {n} Gaussians left at the removed object, {c} with α < floor and α̃ ≥ 0.5"))
        .collect::<Vec<_>>()
        .join("; ");
    ensure(results[0].2 > 0, format!("dual rule lost the change carrier; {text}"))?;
    ensure(results[1].1 == 0, format!("α-only pruning kept it; {text}"))?;
    Ok(text)
}

// 6, 7, 8, 11: end-to-end runs through the binary

fn cli(args: &[&str]) -> Result<Duration, String> {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_changesplat"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`changesplat {}` failed ({}): {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(start.elapsed())
}

fn report(dir: &Path) -> Result<BTreeMap<String, String>, String> {
    let text = std::fs::read_to_string(dir.join("report.txt")).map_err(|e| e.to_string())?;
    Ok(parse_report(&text))
}

fn num(r: &BTreeMap<String, String>, key: &str) -> Result<f64, String> {
    r.get(key)
        .ok_or_else(|| format!("report has no {key}"))?
        .parse()
        .map_err(|e| format!("{key}: {e}"))
}

struct Runs {
    main: Result<(PathBuf, Duration), String>,
}

fn fixture_paths() -> (String, String) {
    let root = workspace().join("fixtures");
    (
        root.join("orbit.toml").display().to_string(),
        root.join("orbit-run.toml").display().to_string(),
    )
}

fn main_run() -> Runs {
    let (manifest, config) = fixture_paths();
    let out = scratch("run-threads-1");
    let s = out.display().to_string();
    let main = cli(&["--threads", "1", "run", "--fixture", &manifest, "--config", &config, "--out", &s])
        .map(|d| (out, d));
    Runs { main }
}

fn end_to_end(runs: &Runs) -> Check {
    let (dir, took) = runs.main.clone()?;
    let r = report(&dir)?;
    let final_miou = num(&r, "final.miou")?;
    let baseline = num(&r, "baseline.miou")?;
    let candidate = num(&r, "candidate.miou")?;
    let text = format!(
        "final mIoU {final_miou:.3}, baseline {baseline:.3} (ratio {:.2}), candidate {candidate:.3}, {:.0} s",
        final_miou / baseline,
        took.as_secs_f64()
    );
    ensure(final_miou >= 0.5, format!("final mIoU below 0.5; {text}"))?;
    ensure(final_miou >= 1.2 * baseline, format!("below 1.2x baseline; {text}"))?;
    ensure(took < Duration::from_secs(600), format!("over 10 min; {text}"))?;
    Ok(text)
}

fn variant_run(runs: &Runs, name: &str, edit: impl FnOnce(&mut PipelineConfig)) -> Result<BTreeMap<String, String>, String> {
    let (main, _) = runs.main.as_ref().map_err(|e| format!("main run failed: {e}"))?;
    let (_, config) = fixture_paths();
    let mut cfg = PipelineConfig::from_toml(&std::fs::read_to_string(&config).unwrap()).map_err(|e| e.to_string())?;
    edit(&mut cfg);
    let out = scratch(name);
    let cfg_path = out.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).unwrap();
    let reference = main.join("clouds/reference.ply");
    cli(&[
        "run",
        "--scene",
        &main.join("scene").display().to_string(),
        "--reference",
        &reference.display().to_string(),
        "--config",
        &cfg_path.display().to_string(),
        "--out",
        &out.display().to_string(),
    ])?;
    report(&out)
}

fn ablations(runs: &Runs) -> Check {
    let (main, _) = runs.main.as_ref().map_err(|e| format!("main run failed: {e}"))?;
    let r = report(main)?;
    let combined = num(&r, "final.miou")?;
    let fp0 = num(&r, "final.fp")?;
    let feature = num(&variant_run(runs, "feature-only", |c| c.mask_variant = MaskVariant::FeatureOnly)?, "final.miou")?;
    let structure = num(
        &variant_run(runs, "structure-only", |c| c.mask_variant = MaskVariant::StructureOnly)?,
        "final.miou",
    )?;
    let fp3 = num(&variant_run(runs, "change-sh-3", |c| c.train.change_sh_degree = 3)?, "final.fp")?;
    let text = format!(
        "mIoU combined {combined:.3}, feature-only {feature:.3}, structure-only {structure:.3}; \
         FP pixels change SH 0: {fp0}, SH 3: {fp3}"
    );
    ensure(combined >= feature && combined >= structure, format!("combined below a single variant; {text}"))?;
    ensure(fp0 <= fp3, format!("degree 0 has more false positives; {text}"))?;
    Ok(text)
}

fn unseen_views(runs: &Runs) -> Check {
    let (main, _) = runs.main.as_ref().map_err(|e| format!("main run failed: {e}"))?;
    let r = report(main)?;
    let seen = num(&r, "seen.miou")?;
    let unseen = num(&r, "unseen.miou")?;
    let views = num(&r, "unseen.views")?;
    let rel = (unseen - seen).abs() / seen;
    let text = format!("{views} held-out poses: unseen mIoU {unseen:.3}, seen {seen:.3}, relative gap {rel:.2}");
    ensure(views >= 10.0, format!("too few held-out poses; {text}"))?;
    ensure(rel <= 0.2, text.clone())?;
    Ok(text)
}

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism(runs: &Runs) -> Check {
    let (first, _) = runs.main.as_ref().map_err(|e| format!("main run failed: {e}"))?;
    let (manifest, config) = fixture_paths();
    let second = scratch("run-threads-2");
    cli(&[
        "--threads",
        "2",
        "run",
        "--fixture",
        &manifest,
        "--config",
        &config,
        "--out",
        &second.display().to_string(),
    ])?;
    let a = files_under(&first.join("masks"));
    let b = files_under(&second.join("masks"));
    ensure(!a.is_empty(), "no masks written")?;
    ensure(a.keys().eq(b.keys()), "different mask files")?;
    let differing: Vec<_> = a.iter().filter(|(k, v)| b[*k] != **v).map(|(k, _)| k.display().to_string()).collect();
    ensure(differing.is_empty(), format!("masks differ: {}", differing.join(", ")))?;
    let same_report = std::fs::read(first.join("report.txt")).ok() == std::fs::read(second.join("report.txt")).ok();
    ensure(same_report, "reports differ")?;
    Ok(format!("--threads 1 vs 2: {} mask files and report.txt bitwise identical", a.len()))
}

// 9

fn metrics_suite() -> Check {
    let m = |v: &[f64]| ChangeMask::new_binary(v.len(), 1, v.to_vec()).unwrap();
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    let gt = m(&[1.0, 1.0, 0.0, 0.0]);
    ensure(close(miou(&gt, &gt).unwrap(), 1.0), "IoU pred = gt")?;
    ensure(close(miou(&m(&[0.0, 0.0, 1.0, 1.0]), &gt).unwrap(), 0.0), "IoU disjoint")?;
    let pred = m(&[1.0, 1.0, 0.0, 0.0, 0.0]);
    let gt5 = m(&[0.0, 1.0, 1.0, 1.0, 1.0]);
    ensure(close(miou(&pred, &gt5).unwrap(), 0.2), "IoU 2 px vs 4 px overlap 1")?;
    ensure(close(f1(&gt, &gt).unwrap(), 1.0), "F1 pred = gt")?;
    // TP 1, FP 1, FN 3
    let p = m(&[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    let g = m(&[1.0, 0.0, 1.0, 1.0, 1.0, 0.0]);
    ensure(close(f1(&p, &g).unwrap(), 1.0 / 3.0), "F1 confusion example")?;
    let scores = |v: &[f64]| ChangeMask::new(v.len(), 1, v.to_vec()).unwrap();
    let g4 = m(&[0.0, 0.0, 1.0, 1.0]);
    ensure(close(auroc(&scores(&[0.1, 0.2, 0.8, 0.9]), &g4).unwrap(), 1.0), "AUROC separated")?;
    ensure(close(auroc(&scores(&[0.3; 4]), &g4).unwrap(), 0.5), "AUROC ties")?;
    ensure(close(auroc(&scores(&[0.1, 0.4, 0.35, 0.8]), &g4).unwrap(), 0.75), "AUROC example")?;
    ensure(auroc(&scores(&[0.1, 0.4]), &m(&[1.0, 1.0])).is_err(), "single-class AUROC accepted")?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..400);
        let p: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect();
        let mut g: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect();
        g[0] = 1.0;
        let (p, g) = (m(&p), m(&g));
        let iou = miou(&p, &g).unwrap();
        let f = f1(&p, &g).unwrap();
        worst = worst.max((f - 2.0 * iou / (1.0 + iou)).abs());
        let c = confusion(&p, &g).unwrap();
        ensure(c.tp + c.fp + c.fn_ + c.tn == n, "confusion counts do not add up")?;
    }
    ensure(worst <= 1e-9, format!("F1-IoU identity off by {worst:.2e}"))?;
    Ok(format!("10 examples, F1 = 2 IoU / (1 + IoU) on 100 pairs within {worst:.1e}"))
}

// 10

fn random_model(rng: &mut ChaCha8Rng) -> changesplat::io::ColmapModel {
    use changesplat::io::{ColmapCamera, ColmapImage, ColmapModel, ColmapPoint, PinholeModel};
    let mut m = ColmapModel::default();
    let cams = rng.random_range(1..4u32);
    for id in 1..=cams {
        let simple = rng.random_bool(0.5);
        let f = rng.random_range(20.0..900.0);
        m.cameras.insert(
            id * 3,
            ColmapCamera {
                model: if simple { PinholeModel::SimplePinhole } else { PinholeModel::Pinhole },
                width: rng.random_range(1..2000),
                height: rng.random_range(1..2000),
                fx: f,
                fy: if simple { f } else { rng.random_range(20.0..900.0) },
                cx: rng.random_range(0.0..1000.0),
                cy: rng.random_range(0.0..1000.0),
            },
        );
    }
    for id in 1..=rng.random_range(0..8u32) {
        m.images.insert(
            id * 2 + 1,
            ColmapImage {
                qvec: support::random_unit_quat(rng),
                tvec: [0.0; 3].map(|_: f64| rng.random_range(-10.0..10.0)),
                camera_id: rng.random_range(1..=cams) * 3,
                name: format!("img {id:03}.png"),
            },
        );
    }
    for _ in 0..rng.random_range(0..20) {
        m.points.push(ColmapPoint {
            xyz: [0.0; 3].map(|_: f64| rng.random_range(-5.0..5.0)),
            rgb: [rng.random(), rng.random(), rng.random()],
        });
    }
    m
}

fn same_model(a: &changesplat::io::ColmapModel, b: &changesplat::io::ColmapModel) -> bool {
    let near = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(p, q)| (p - q).abs() <= 1e-9 * (1.0 + p.abs()));
    a.cameras == b.cameras
        && a.images.len() == b.images.len()
        && a.images.iter().zip(&b.images).all(|((ia, x), (ib, y))| {
            ia == ib
                && x.name == y.name
                && x.camera_id == y.camera_id
                && near(&x.qvec, &y.qvec)
                && near(&x.tvec, &y.tvec)
        })
        && a.points.len() == b.points.len()
        && a.points.iter().zip(&b.points).all(|(p, q)| p.rgb == q.rgb && near(&p.xyz, &q.xyz))
}

const MODEL_FILES: [&str; 3] = ["cameras", "images", "points3D"];

fn mutate(rng: &mut ChaCha8Rng, bytes: &mut Vec<u8>) {
    match rng.random_range(0..5) {
        0 => {
            let n = rng.random_range(0..=bytes.len());
            bytes.truncate(n);
        }
        1 if !bytes.is_empty() => {
            for _ in 0..rng.random_range(1..8) {
                let i = rng.random_range(0..bytes.len());
                bytes[i] = rng.random();
            }
        }
        2 if !bytes.is_empty() => {
            let i = rng.random_range(0..bytes.len());
            bytes[i] ^= 1 << rng.random_range(0..8);
        }
        3 => {
            let i = rng.random_range(0..=bytes.len());
            let junk: Vec<u8> = (0..rng.random_range(1..16)).map(|_| rng.random()).collect();
            bytes.splice(i..i, junk);
        }
        _ if bytes.len() >= 8 => {
            // plausible-looking but huge or negative counts
            let i = rng.random_range(0..bytes.len() - 7);
            let v: u64 = if rng.random_bool(0.5) { u64::MAX - rng.random_range(0..4) } else { rng.random() };
            bytes[i..i + 8].copy_from_slice(&v.to_le_bytes());
        }
        _ => bytes.push(rng.random()),
    }
}

fn parser_robustness() -> Check {
    let budget: f64 = std::env::var("CHANGESPLAT_FUZZ_SECS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(600.0);
    let dir = scratch("fuzz");
    let mut rng = ChaCha8Rng::seed_from_u64(10);

    let mut round_trips = 0;
    for k in 0..200 {
        let m = random_model(&mut rng);
        for format in [ColmapFormat::Text, ColmapFormat::Binary] {
            let d = dir.join(format!("rt-{k}-{format:?}"));
            write_colmap_model(&m, &d, format).map_err(|e| e.to_string())?;
            let back = parse_colmap_model(&d, format).map_err(|e| e.to_string())?;
            ensure(same_model(&m, &back), format!("{format:?} round trip {k} changed the model"))?;
            let _ = std::fs::remove_dir_all(&d);
            round_trips += 1;
        }
    }

    let prev_hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let start = Instant::now();
    let (mut cases, mut errors, mut panics) = (0u64, 0u64, Vec::new());
    let target = dir.join("case");
    while start.elapsed().as_secs_f64() < budget {
        let m = random_model(&mut rng);
        let format = if rng.random_bool(0.5) { ColmapFormat::Text } else { ColmapFormat::Binary };
        let _ = std::fs::remove_dir_all(&target);
        write_colmap_model(&m, &target, format).map_err(|e| e.to_string())?;
        let ext = if format == ColmapFormat::Text { "txt" } else { "bin" };
        for _ in 0..rng.random_range(1..3) {
            let file = target.join(format!("{}.{ext}", MODEL_FILES[rng.random_range(0..3)]));
            let mut bytes = std::fs::read(&file).unwrap();
            for _ in 0..rng.random_range(1..4) {
                mutate(&mut rng, &mut bytes);
            }
            std::fs::write(&file, &bytes).unwrap();
        }
        match catch_unwind(AssertUnwindSafe(|| parse_colmap_model(&target, format))) {
            Ok(Ok(_)) => {}
            Ok(Err(_)) => errors += 1,
            Err(_) => panics.push(cases),
        }
        cases += 1;
    }
    std::panic::set_hook(prev_hook);
    ensure(panics.is_empty(), format!("{} of {cases} fuzz cases panicked", panics.len()))?;
    Ok(format!(
        "{round_trips} round trips; {cases} corrupted models in {:.0} s, {errors} typed errors, no panics",
        start.elapsed().as_secs_f64()
    ))
}

fn main() {
    let strict = std::env::var("CHANGESPLAT_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let only: Option<Vec<u32>> = std::env::var("CHANGESPLAT_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |n: u32| only.as_ref().is_none_or(|o| o.contains(&n));
    let (mut passed, mut failed) = (0, 0);
    let mut record = |n: u32, name: &str, f: &mut dyn FnMut() -> Check| {
        if !wanted(n) {
            return;
        }
        let start = Instant::now();
        let r = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(r) => r,
            Err(p) => Err(format!(
                "panicked: {}",
                p.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default()
            )),
        };
        let secs = start.elapsed().as_secs_f64();
        match r {
            Ok(msg) => {
                passed += 1;
                println!("PASS  criterion {n:>2} {name}: {msg} [{secs:.1} s]");
            }
            Err(msg) => {
                failed += 1;
                println!("FAIL  criterion {n:>2} {name}: {msg} [{secs:.1} s]");
            }
        }
    };
    record(1, "rasterizer oracle", &mut rasterizer_oracle);
    record(2, "gradient check", &mut gradients);
    record(3, "SSIM oracle", &mut ssim_oracle);
    record(4, "mask equations", &mut equation_examples);
    record(5, "dual-opacity culling", &mut dual_opacity_culling);
    let runs = if [6, 7, 8, 11].into_iter().any(wanted) {
        main_run()
    } else {
        Runs {
            main: Err("not run".into()),
        }
    };
    record(6, "end-to-end fixture", &mut || end_to_end(&runs));
    record(7, "ablation orderings", &mut || ablations(&runs));
    record(8, "unseen views", &mut || unseen_views(&runs));
    record(9, "metrics", &mut metrics_suite);
    record(10, "parser robustness", &mut parser_robustness);
    record(11, "determinism", &mut || determinism(&runs));
    println!("{passed} passed, {failed} failed");
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
