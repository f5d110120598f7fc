mod support;

use changesplat::raster::{self, rasterize, rasterize_backward, render, UpstreamGrads};
use changesplat::scene::{logit, Camera, Gaussian3D, GaussianCloud};
use nalgebra::{Matrix3, Vector3};
use support::*;

fn axis_camera(size: usize) -> Camera {
    Camera::new(100.0, 100.0, size as f64 / 2.0, size as f64 / 2.0, size, size, Matrix3::identity(), Vector3::zeros())
        .unwrap()
}

fn flat(pos: [f64; 3], sigma: f64, opacity: f64, rgb: f64) -> Gaussian3D {
    let mut g = Gaussian3D::new(pos, [sigma.ln(); 3], [1.0, 0.0, 0.0, 0.0], opacity, [rgb; 3]);
    g.sh_color[1..].iter_mut().for_each(|c| *c = [0.0; 3]);
    g
}

#[test]
fn single_gaussian_compositing() {
    // At the mean the kernel is exactly 1, so the contribution is the opacity.
    let g = flat([0.0, 0.0, 1.0], 0.1, 0.6, 1.0);
    let cloud = GaussianCloud::new(vec![g], 1.0).unwrap();
    let cam = Camera::new(100.0, 100.0, 8.5, 8.5, 17, 17, Matrix3::identity(), Vector3::zeros()).unwrap();
    let out = rasterize(&cloud, &cam).unwrap();
    let i = 8 * 17 + 8;
    let expect_rgb = g.opacity() * (0.5 + changesplat::raster::sh::SH_C0 * g.sh_color[0][0] as f64).min(1.0);
    assert!((out.rgb.data[i * 3] - expect_rgb).abs() < 1e-12);
    assert!((out.alpha.data[i] - g.opacity()).abs() < 1e-12);
    assert!((g.opacity() - 0.6).abs() < 1e-6);
    assert!((out.rgb.data[i * 3] - 0.6).abs() < 1e-6);
}

#[test]
fn two_gaussian_compositing() {
    let front = flat([0.0, 0.0, 1.0], 0.1, 0.5, 1.0);
    let back = flat([0.0, 0.0, 2.0], 0.2, 0.5, 0.0);
    let cloud = GaussianCloud::new(vec![back, front], 1.0).unwrap();
    let cam = Camera::new(100.0, 100.0, 8.5, 8.5, 17, 17, Matrix3::identity(), Vector3::zeros()).unwrap();
    let out = rasterize(&cloud, &cam).unwrap();
    let i = 8 * 17 + 8;
    assert!((out.rgb.data[i * 3] - 0.5).abs() < 1e-6);
    assert!((out.alpha.data[i] - 0.75).abs() < 1e-6);
}

#[test]
fn empty_tile_is_black() {
    let cloud = GaussianCloud::new(vec![flat([0.0, 0.0, 1.0], 0.005, 0.9, 1.0)], 1.0).unwrap();
    let cam = axis_camera(64);
    let out = rasterize(&cloud, &cam).unwrap();
    for y in 0..16 {
        for x in 0..16 {
            let i = y * 64 + x;
            assert_eq!(out.alpha.data[i], 0.0);
            assert_eq!(out.change.data[i], 0.0);
            assert_eq!(&out.rgb.data[i * 3..i * 3 + 3], &[0.0; 3]);
        }
    }
}

#[test]
fn matches_brute_force_renderer() {
    for seed in 0..12 {
        let (cloud, cam) = random_scene(seed, 40 + (seed as usize * 13) % 160, 64);
        let dev = oracle_deviation(&cloud, &cam);
        assert!(dev < 1e-4, "seed {seed}: deviation {dev}");
    }
}

#[test]
fn odd_sized_images_match_brute_force() {
    let (cloud, _) = random_scene(77, 120, 64);
    let cam = Camera::look_at(
        Vector3::new(0.5, 0.0, -4.0),
        Vector3::zeros(),
        Vector3::new(0.0, -1.0, 0.0),
        55.0,
        37,
        23,
    )
    .unwrap();
    assert!(oracle_deviation(&cloud, &cam) < 1e-4);
}

#[test]
fn adding_a_gaussian_never_decreases_alpha() {
    for seed in 0..5 {
        let (cloud, cam) = random_scene(100 + seed, 60, 48);
        let base = rasterize(&cloud, &cam).unwrap();
        let (extra, _) = random_scene(200 + seed, 1, 48);
        let mut more = cloud.clone();
        more.gaussians.push(extra.gaussians[0]);
        let after = rasterize(&more, &cam).unwrap();
        for (a, b) in base.alpha.data.iter().zip(&after.alpha.data) {
            assert!(*b >= *a - 1e-12, "{a} -> {b}");
        }
    }
}

#[test]
fn renders_are_bitwise_deterministic_across_thread_counts() {
    let (cloud, cam) = random_scene(5, 150, 64);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let (out, cache) = render(&cloud, &cam).unwrap();
                let w = Weights::random(1, 64, 64);
                let g = rasterize_backward(&cloud, &cam, &cache, &w.up).unwrap();
                (out, g.grads)
            })
    };
    let (a, ga) = run(1);
    let (b, gb) = run(3);
    assert_eq!(a, b);
    assert_eq!(ga, gb);
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let (cloud, cam) = random_scene(9, 50, 32);
    let (_, cache) = render(&cloud, &cam).unwrap();
    let g = rasterize_backward(&cloud, &cam, &cache, &UpstreamGrads::zeros(32, 32)).unwrap();
    assert!(g.grads.iter().all(|g| g.is_zero()));
}

#[test]
fn upstream_shape_mismatch_errors() {
    let (cloud, cam) = random_scene(9, 5, 32);
    let (_, cache) = render(&cloud, &cam).unwrap();
    assert!(rasterize_backward(&cloud, &cam, &cache, &UpstreamGrads::zeros(31, 32)).is_err());
}

#[test]
fn change_only_upstream_leaves_color_untouched() {
    let (cloud, cam) = gradient_scene(3, 3);
    let (_, cache) = render(&cloud, &cam).unwrap();
    let mut up = UpstreamGrads::zeros(cam.width, cam.height);
    up.change.iter_mut().for_each(|v| *v = 1.0);
    let g = rasterize_backward(&cloud, &cam, &cache, &up).unwrap();
    for gg in &g.grads {
        assert!(gg.sh_color.iter().flatten().all(|v| *v == 0.0));
        assert_eq!(gg.opacity_logit, 0.0);
        assert!(gg.change_dc != 0.0);
        assert!(gg.change_opacity_logit != 0.0);
    }
}

#[test]
fn single_gaussian_gradients_match_finite_differences() {
    let (cloud, cam) = gradient_scene(11, 1);
    let r = check_gradients(&cloud, &cam, 4);
    assert!(r.worst_rel < 1e-3, "{}: {}", r.worst_rel, r.worst_name);
}

#[test]
fn multi_gaussian_gradients_match_finite_differences() {
    for seed in [1, 2] {
        let (cloud, cam) = gradient_scene(seed, 4);
        let r = check_gradients(&cloud, &cam, seed + 10);
        assert!(r.worst_rel < 1e-3, "seed {seed}: {}: {}", r.worst_rel, r.worst_name);
        assert_eq!(r.groups.len(), 8);
    }
}

#[test]
fn densify_norm_reflects_screen_space_gradient() {
    let (cloud, cam) = gradient_scene(5, 2);
    let (_, cache) = render(&cloud, &cam).unwrap();
    let w = Weights::random(3, cam.width, cam.height);
    let g = rasterize_backward(&cloud, &cam, &cache, &w.up).unwrap();
    for i in 0..2 {
        assert!(g.visible[i]);
        assert!(g.densify_norm(i) > 0.0);
    }
}

#[test]
fn change_opacity_is_independent_of_rgb_opacity() {
    // A Gaussian invisible in RGB still carries change.
    let mut g = flat([0.0, 0.0, 1.0], 0.1, 0.5, 1.0);
    g.opacity_logit = logit(1e-6) as f32;
    g.change_opacity_logit = logit(0.9) as f32;
    g.change_dc = logit(0.8) as f32;
    let cloud = GaussianCloud::new(vec![g], 1.0).unwrap();
    let cam = Camera::new(100.0, 100.0, 8.5, 8.5, 17, 17, Matrix3::identity(), Vector3::zeros()).unwrap();
    let out = raster::rasterize(&cloud, &cam).unwrap();
    let i = 8 * 17 + 8;
    assert!(out.alpha.data[i] < 1e-5);
    assert!((out.change.data[i] - 0.72).abs() < 1e-6);
}
