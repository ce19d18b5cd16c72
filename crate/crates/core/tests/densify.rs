mod common;

use std::collections::HashMap;

use proptest::prelude::*;
use proxycull_core::densify::{grid_insert, plan_anchors, select_patches, ErrorImage, ProxyGrid};
use proxycull_core::oracle::{check_densify, synthetic_error_image, CheckStatus};
use proxycull_core::pipeline::run_pipeline;
use proxycull_core::synth::{generate_synthetic_scene, SyntheticSpec};
use proxycull_core::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Row-major patch means, mean of means, strict `> 3·mean` selection.
fn scalar_selection(values: &[f32], w: usize, h: usize, p: usize) -> Vec<bool> {
    let mut means = Vec::new();
    let mut py = 0;
    while py * p < h {
        let mut px = 0;
        while px * p < w {
            let (mut sum, mut n) = (0.0f64, 0usize);
            for y in py * p..(py * p + p).min(h) {
                for x in px * p..(px * p + p).min(w) {
                    sum += values[y * w + x] as f64;
                    n += 1;
                }
            }
            means.push(sum / n as f64);
            px += 1;
        }
        py += 1;
    }
    let mut total = 0.0;
    for m in &means {
        total += *m;
    }
    let threshold = 3.0 * (total / means.len() as f64);
    means.iter().map(|&m| m > threshold).collect()
}

fn random_image(rng: &mut ChaCha8Rng) -> ErrorImage {
    let w = rng.random_range(16..300);
    let h = rng.random_range(16..300);
    let mode = rng.random_range(0..4);
    let mut values: Vec<f32> = (0..w * h)
        .map(|_| match mode {
            0 => rng.random_range(0.0..1.0),
            1 => {
                if rng.random_bool(0.02) {
                    rng.random_range(5.0..50.0)
                } else {
                    0.0
                }
            }
            2 => rng.random_range(0.0f32..1.0).powi(8),
            _ => 0.0,
        })
        .collect();
    if mode == 3 && rng.random_bool(0.5) {
        let k = rng.random_range(0..values.len());
        values[k] = 1.0;
    }
    ErrorImage::new(w, h, values).unwrap()
}

#[test]
fn selection_matches_scalar_rule_on_random_images() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut selected = 0;
    for i in 0..100 {
        let img = random_image(&mut rng);
        let p = [16, 8, 5, 16][i % 4];
        let g = select_patches(&img, p).unwrap();
        let want = scalar_selection(&img.values, img.width, img.height, p);
        assert_eq!(g.selected, want, "image {i} ({}x{}, patch {p})", img.width, img.height);
        selected += g.selected_count();
    }
    assert!(selected > 100);
}

#[test]
fn all_zero_frame_selects_nothing() {
    let g = select_patches(&ErrorImage::new(64, 48, vec![0.0; 64 * 48]).unwrap(), 16).unwrap();
    assert_eq!(g.selected_count(), 0);
}

#[test]
fn occupancy_never_exceeds_capacity() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for capacity in [1, 2, 4, 7] {
        let mut grid = ProxyGrid::new(Vec3::new(-1.0, -2.0, 0.5), 0.25, capacity).unwrap();
        let mut counts: HashMap<[i64; 3], u32> = HashMap::new();
        for _ in 0..100_000 {
            let p = Vec3::new(rng.random_range(-1.0..2.0), rng.random_range(-2.0..1.0), rng.random_range(0.0..3.0));
            let cell = [(p.x + 1.0) / 0.25, (p.y + 2.0) / 0.25, (p.z - 0.5) / 0.25].map(|c| c.floor() as i64);
            let slot = counts.entry(cell).or_insert(0);
            let want = *slot < capacity;
            assert_eq!(grid_insert(&mut grid, p), want);
            *slot += want as u32;
        }
        assert!(grid.occupancy.values().all(|&c| c <= capacity));
        assert_eq!(grid.occupancy.len(), counts.len());
        assert!(counts.values().any(|&c| c == capacity));
    }
}

#[test]
fn capacity_one_admits_first_patch_in_row_major_order() {
    let spec =
        SyntheticSpec { box_count: 0, anchor_count: 0, width: 64, height: 64, camera_count: 1, ..Default::default() };
    let s = generate_synthetic_scene(0, &spec).unwrap();
    let cam = &s.cameras[0];
    let depth = run_pipeline(&s, 0).unwrap().depth;
    // Two hot patches side by side on the bottom row, both on the ground.
    let mut values = vec![0.0f32; 64 * 64];
    for y in 48..64 {
        for x in 16..48 {
            values[y * 64 + x] = 1.0;
        }
    }
    let patches = select_patches(&ErrorImage::new(64, 64, values).unwrap(), 16).unwrap();
    assert_eq!(patches.selected_count(), 2);
    let mut grid = ProxyGrid::new(Vec3::splat(-1e3), 1e3, 1).unwrap();
    let plan = plan_anchors(&patches, &depth, cam, &mut grid, 0).unwrap();
    assert_eq!((plan.len(), plan.rejected_count), (1, 1));
    assert_eq!((plan.sources[0].patch_x, plan.sources[0].patch_y), (1, 3));
    assert_eq!(grid.occupancy.values().copied().collect::<Vec<_>>(), vec![1]);
}

#[test]
fn planned_anchors_reproject_into_their_patches() {
    let mut planned = 0;
    for seed in 0..6 {
        let spec = SyntheticSpec { anchor_count: 10, width: 240, height: 180, camera_count: 2, ..Default::default() };
        let s = generate_synthetic_scene(seed, &spec).unwrap();
        for cam in 0..2 {
            let depth = run_pipeline(&s, cam).unwrap().depth;
            let check = check_densify(&s, &s.cameras[cam], &depth, seed).unwrap();
            assert_eq!(check.status, CheckStatus::Pass, "{check:?}");
            planned += check.checked;
        }
    }
    assert!(planned > 300, "{planned}");
}

#[test]
fn cameras_share_capacity() {
    let spec = SyntheticSpec { anchor_count: 10, width: 128, height: 128, camera_count: 2, ..Default::default() };
    let s = generate_synthetic_scene(3, &spec).unwrap();
    let mut grid = ProxyGrid::for_mesh(&s.mesh, Some(50.0), 1).unwrap();
    let mut total = 0;
    for cam in 0..2 {
        let c = &s.cameras[cam];
        let patches = select_patches(&synthetic_error_image(128, 128, cam as u64), 16).unwrap();
        let depth = run_pipeline(&s, cam).unwrap().depth;
        total += plan_anchors(&patches, &depth, c, &mut grid, cam as u32).unwrap().len();
    }
    assert_eq!(total as u32, grid.occupancy.values().sum::<u32>());
    assert!(grid.occupancy.values().all(|&c| c == 1));
}

proptest! {
    #[test]
    fn selected_patches_exceed_three_times_the_mean(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = random_image(&mut rng);
        let g = select_patches(&img, 16).unwrap();
        prop_assert_eq!(g.threshold, 3.0 * g.frame_mean);
        for (m, s) in g.means.iter().zip(&g.selected) {
            prop_assert_eq!(*s, *m > g.threshold);
        }
    }
}
