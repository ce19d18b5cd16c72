mod common;

use proptest::prelude::*;
use proxycull_core::cluster::build_clusters;
use proxycull_core::oracle::{
    check_occlusion_soundness, oracle_scene, reference_cull_anchors, small_scene_spec, CheckStatus,
};
use proxycull_core::pipeline::run_pipeline;
use proxycull_core::raster::rasterize_depth;
use proxycull_core::synth::{generate_synthetic_scene, SyntheticSpec};
use proxycull_core::visibility::{cull_anchors_staged, cull_anchors_with, AnchorSet, CullParams, Verdict};
use proxycull_core::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scene(seed: u64) -> proxycull_core::scene::SceneBundle {
    let spec = SyntheticSpec { anchor_count: 20_000, width: 160, height: 120, camera_count: 2, ..Default::default() };
    generate_synthetic_scene(seed, &spec).unwrap()
}

fn params(gamma: f64) -> CullParams {
    CullParams { gamma, ..Default::default() }
}

#[test]
fn fused_staged_and_scalar_agree() {
    for seed in 0..4 {
        let s = scene(seed);
        for cam_index in 0..s.cameras.len() {
            let cam = &s.cameras[cam_index];
            let depth = run_pipeline(&s, cam_index).unwrap().depth;
            for gamma in [0.0, 0.1, 0.3, 1.0] {
                let fused = cull_anchors_with(&s.anchors, cam, &depth, &params(gamma)).unwrap();
                let staged = cull_anchors_staged(&s.anchors, cam, &depth, &params(gamma)).unwrap();
                let scalar = reference_cull_anchors(&s.anchors.positions, cam, &depth, &params(gamma));
                assert_eq!(fused, staged);
                assert_eq!(fused.verdicts, scalar, "seed {seed} camera {cam_index} gamma {gamma}");
            }
        }
    }
}

/// With γ = 0, every anchor culled as occluded lies strictly behind the
/// linearized proxy depth at its pixel, recomputed here from `P·V`.
#[test]
fn occluded_anchors_are_behind_the_proxy() {
    let s = scene(9);
    let cam = &s.cameras[0];
    let depth = run_pipeline(&s, 0).unwrap().depth;
    let mask = cull_anchors_with(&s.anchors, cam, &depth, &params(0.0)).unwrap();
    let r = &cam.rotation.0;
    let mut occluded = 0;
    for (p, v) in s.anchors.positions.iter().zip(&mask.verdicts) {
        if *v != Verdict::CulledOccluded {
            continue;
        }
        occluded += 1;
        let rel = *p - cam.center;
        let view_depth = r[2][0] * rel.x + r[2][1] * rel.y + r[2][2] * rel.z;
        let vp = common::mat_mul4(&cam.proj_matrix.0, &cam.view_matrix.0);
        let c = common::mat_vec4(&vp, [p.x, p.y, p.z, 1.0]);
        let x = ((c[0] / c[3] + 1.0) / 2.0 * cam.width as f64).floor() as usize;
        let y = ((c[1] / c[3] + 1.0) / 2.0 * cam.height as f64).floor() as usize;
        let z = depth.values[y * cam.width + x] as f64;
        assert!(z < 1.0);
        let d = cam.near * cam.far / (cam.far - z * (cam.far - cam.near));
        assert!(view_depth > d - 1e-9 * d, "anchor at {p:?}: view depth {view_depth}, proxy {d}");
    }
    assert!(occluded > 1000, "{occluded}");
}

#[test]
fn larger_gamma_never_culls_more() {
    let s = scene(2);
    let cam = &s.cameras[1];
    let depth = run_pipeline(&s, 1).unwrap().depth;
    let gammas = [0.0, 0.1, 0.3, 0.6, 1.0, 5.0];
    let masks: Vec<_> =
        gammas.iter().map(|&g| cull_anchors_with(&s.anchors, cam, &depth, &params(g)).unwrap()).collect();
    for pair in masks.windows(2) {
        assert!(pair[0].kept_count <= pair[1].kept_count);
        for (a, b) in pair[0].verdicts.iter().zip(&pair[1].verdicts) {
            if *a == Verdict::Kept {
                assert_eq!(*b, Verdict::Kept);
            }
            if *a != Verdict::CulledOccluded {
                assert_eq!(a, b);
            }
        }
    }
}

/// Near the camera one pixel spans far less ground depth than γ, so the
/// open ground hides anchors below it and nothing above it. (Far away, at
/// grazing angles, a single pixel can cover meters of ground and the
/// pixel-center depth can undercut a slightly raised anchor.)
#[test]
fn open_ground_only_hides_anchors_below_it() {
    let spec = SyntheticSpec { box_count: 0, anchor_count: 0, ..Default::default() };
    let s = generate_synthetic_scene(4, &spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (i, cam) in s.cameras.iter().enumerate() {
        let fwd = cam.forward();
        let side = Vec3::new(-fwd.y, fwd.x, 0.0);
        let positions: Vec<Vec3> = (0..20_000)
            .map(|_| {
                let p = cam.center + fwd * rng.random_range(1.0..10.0) + side * rng.random_range(-5.0..5.0);
                Vec3::new(p.x, p.y, rng.random_range(-0.5..0.5))
            })
            .collect();
        let anchors = AnchorSet::new(positions).unwrap();
        let depth = run_pipeline(&s, i).unwrap().depth;
        let mask = cull_anchors_with(&anchors, cam, &depth, &params(0.3)).unwrap();
        let mut below = 0;
        for (p, v) in anchors.positions.iter().zip(&mask.verdicts) {
            if *v == Verdict::CulledOccluded {
                assert!(p.z < 0.0, "camera {i}: anchor {p:?} above the ground culled");
                below += 1;
            }
        }
        assert!(below > 1000, "{below}");
    }
}

#[test]
fn verdicts_independent_of_threads() {
    let s = scene(5);
    let reference = run_pipeline(&s, 0).unwrap();
    for threads in [1, 2, 5] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let r = pool.install(|| run_pipeline(&s, 0).unwrap());
        assert_eq!(r.mask, reference.mask);
        assert_eq!(r.depth, reference.depth);
        assert_eq!(r.occluded, reference.occluded);
        assert_eq!(r.stats.timings_cleared(), reference.stats.timings_cleared());
    }
}

#[test]
fn hiz_occlusion_is_sound_on_box_worlds() {
    let mut occluded = 0;
    for seed in 0..10 {
        let s = oracle_scene(seed, &small_scene_spec()).unwrap();
        for cam in 0..s.cameras.len() {
            let frame = run_pipeline(&s, cam).unwrap();
            occluded += frame.occluded.iter().filter(|&&o| o).count();
            let check =
                check_occlusion_soundness(&s.mesh, &s.clusters, &frame.occluded, &s.cameras[cam], 1e-4).unwrap();
            assert_eq!(check.status, CheckStatus::Pass, "seed {seed} camera {cam}: {check:?}");
        }
    }
    assert!(occluded > 0);
}

/// Flagging every cluster as occluded must be caught.
#[test]
fn soundness_check_catches_false_occlusion() {
    let s = oracle_scene(1, &small_scene_spec()).unwrap();
    let all = vec![true; s.clusters.len()];
    let check = check_occlusion_soundness(&s.mesh, &s.clusters, &all, &s.cameras[0], 1e-4).unwrap();
    assert_eq!(check.status, CheckStatus::Fail);
    assert!(check.first_counterexample.unwrap().contains("marked occluded"));
}

#[test]
fn depth_map_size_must_match_camera() {
    let s = scene(1);
    let small = rasterize_depth(&s.mesh, &proxycull_core::Camera { width: 10, ..s.cameras[0] }, None);
    assert!(cull_anchors_with(&s.anchors, &s.cameras[0], &small, &params(0.3)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Random anchors anywhere (including behind the camera and on the
    /// near plane) classify identically under the fused and scalar paths.
    #[test]
    fn scalar_reference_matches_on_random_anchors(seed in any::<u64>(), gamma in 0.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cam = common::random_camera(&mut rng, 64, 48);
        let mesh = common::random_soup(&mut rng, &cam, 80);
        let clusters = build_clusters(&mesh, 4, 16).unwrap();
        prop_assert!(!clusters.is_empty());
        let depth = rasterize_depth(&mesh, &cam, None);
        let positions: Vec<Vec3> = (0..2000)
            .map(|_| cam.center + Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * rng.random_range(0.0..30.0))
            .collect();
        let anchors = AnchorSet::new(positions.clone()).unwrap();
        let fast = cull_anchors_with(&anchors, &cam, &depth, &params(gamma)).unwrap();
        prop_assert_eq!(fast.verdicts, reference_cull_anchors(&positions, &cam, &depth, &params(gamma)));
    }
}
