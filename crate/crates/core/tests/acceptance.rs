//! Acceptance criteria, one pass/fail line each. Run with
//! `cargo test --release --test acceptance`.
//!
//! Correctness criteria (1-6, 8) fail the run. The wall-clock targets of
//! criterion 7 depend on the host; their verdict is printed but only fails
//! the run when `PROXYCULL_STRICT_PERF=1`.

mod common;

use std::collections::HashMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use proxycull_core::densify::{grid_insert, select_patches, ErrorImage, ProxyGrid};
use proxycull_core::oracle::{
    check_densify, check_hiz_footprint, check_occlusion_soundness, check_raster, oracle_scene, reference_cull_anchors,
    reference_select, small_scene_spec, CheckStatus,
};
use proxycull_core::pipeline::run_pipeline;
use proxycull_core::raster::{build_hiz, rasterize_depth, rasterize_with, DepthMap, BACKGROUND_DEPTH};
use proxycull_core::scene::SceneBundle;
use proxycull_core::simplify::{simplify, Quadric, SimplifyParams};
use proxycull_core::synth::{generate_synthetic_scene, SyntheticSpec};
use proxycull_core::visibility::{cull_anchors_with, extract_frustum, frustum_cull, CullParams};
use proxycull_core::{TriangleMesh, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn street(seed: u64, anchors: usize) -> SceneBundle {
    generate_synthetic_scene(seed, &SyntheticSpec { anchor_count: anchors, ..Default::default() }).unwrap()
}

/// 1. Fused anchor filter vs scalar reference, 20 scenes x 4 cameras x 4 gammas.
fn anchor_filter_exactness() -> Outcome {
    let start = Instant::now();
    let (mut mismatches, mut compared) = (0usize, 0usize);
    for seed in 0..20 {
        let s = street(seed, 100_000);
        for cam in 0..s.cameras.len() {
            let depth = run_pipeline(&s, cam).unwrap().depth;
            for gamma in [0.1, 0.3, 0.6, 1.0] {
                let params = CullParams { gamma, ..s.config.cull_params() };
                let fast = cull_anchors_with(&s.anchors, &s.cameras[cam], &depth, &params).unwrap();
                let scalar = reference_cull_anchors(&s.anchors.positions, &s.cameras[cam], &depth, &params);
                mismatches += fast.verdicts.iter().zip(&scalar).filter(|(a, b)| a != b).count();
                compared += scalar.len();
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && secs < 120.0,
        format!("{mismatches} mismatches in {compared} verdicts, {secs:.1} s (limit 120 s)"),
    )
}

/// 2. Depth buffer vs per-pixel ray cast on 50 random scenes.
fn rasterizer_correctness() -> Outcome {
    let (mut violations, mut covered) = (0, 0);
    let mut first = None;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let cam = common::random_camera(&mut rng, 64, 64);
        let n = rng.random_range(1..=200);
        let mesh = common::random_soup(&mut rng, &cam, n);
        let depth = rasterize_depth(&mesh, &cam, None);
        let check = check_raster(&mesh, &cam, &depth, 1e-4).unwrap();
        assert_ne!(check.status, CheckStatus::Skipped);
        violations += check.violations;
        covered += depth.covered_pixels();
        if first.is_none() {
            first = check.first_counterexample.map(|c| format!("; seed {seed}: {c}"));
        }
    }
    outcome(
        violations == 0,
        format!("{violations} violations over 50 scenes ({covered} covered pixels){}", first.unwrap_or_default()),
    )
}

fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize) -> DepthMap {
    let values =
        (0..w * h).map(|_| if rng.random_bool(0.1) { BACKGROUND_DEPTH } else { rng.random_range(0.0..1.0) }).collect();
    DepthMap::from_values(w, h, values)
}

/// 3. No occluded cluster owns a visible fragment; footprint-max pyramids.
fn hiz_soundness() -> Outcome {
    let (mut violations, mut occluded) = (0, 0);
    for seed in 0..50 {
        let s = oracle_scene(seed, &small_scene_spec()).unwrap();
        for cam in 0..s.cameras.len() {
            let frame = run_pipeline(&s, cam).unwrap();
            occluded += frame.occluded.iter().filter(|&&o| o).count();
            let check =
                check_occlusion_soundness(&s.mesh, &s.clusters, &frame.occluded, &s.cameras[cam], s.config.tau_near)
                    .unwrap();
            assert_ne!(check.status, CheckStatus::Skipped);
            violations += check.violations;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut footprint = 0;
    for i in 0..100 {
        let (w, h) = (rng.random_range(1..200) | (i & 1), rng.random_range(1..200));
        let map = random_map(&mut rng, w, h);
        footprint += check_hiz_footprint(&map, &build_hiz(&map)).violations;
    }
    outcome(
        violations == 0 && footprint == 0 && occluded > 0,
        format!("{violations} soundness violations ({occluded} occluded clusters, 50 scenes); {footprint} footprint violations on 100 maps"),
    )
}

/// 4. Share of in-frustum anchors culled as occluded on the seed-7 street.
fn occlusion_effectiveness() -> Outcome {
    let s = street(7, 100_000);
    let (mut occluded, mut in_frustum) = (0, 0);
    for cam in 0..s.cameras.len() {
        let c = run_pipeline(&s, cam).unwrap().mask.counts();
        occluded += c.culled_occluded;
        in_frustum += c.culled_occluded + c.kept;
    }
    let ratio = occluded as f64 / in_frustum as f64;
    outcome(
        ratio >= 0.6,
        format!("{:.1}% of {in_frustum} in-frustum anchors culled as occluded (target >= 60%)", 100.0 * ratio),
    )
}

/// 5. Icosphere 1280 -> 128 and flat-grid simplification.
fn qem_quality() -> Outcome {
    let sphere = TriangleMesh::icosphere(3);
    let out = simplify(&sphere, &SimplifyParams::new(128)).unwrap().mesh;
    let flipped = (0..out.face_count())
        .filter(|&f| {
            let [a, b, c] = out.face_positions(f);
            out.face_area_vector(f).dot((a + b + c) * (1.0 / 3.0)) <= 0.0
        })
        .count();
    let (lo, hi) = sphere.aabb().unwrap();
    let diag = (hi - lo).length();
    let worst = out
        .vertices
        .iter()
        .map(|&v| common::point_mesh_distance(v, &sphere.vertices, &sphere.faces))
        .fold(0.0, f64::max);
    let sphere_ok = sphere.face_count() == 1280
        && out.face_count() <= 128
        && flipped == 0
        && out.is_manifold()
        && worst <= 0.02 * diag;

    let grid = TriangleMesh::grid(10);
    let flat = simplify(&grid, &SimplifyParams::new(8)).unwrap();
    let error: f64 = (0..grid.face_count())
        .map(|f| {
            let q = Quadric::from_plane(grid.face_plane(f).unwrap(), 1.0);
            flat.mesh.vertices.iter().map(|&v| q.evaluate(v)).sum::<f64>()
        })
        .sum();
    let boundary_off = flat
        .mesh
        .vertices
        .iter()
        .zip(&flat.mesh.boundary_flags)
        .filter(|(_, &b)| b)
        .map(|(v, _)| v.x.abs().min((1.0 - v.x).abs()).min(v.y.abs()).min((1.0 - v.y).abs()))
        .fold(0.0, f64::max);
    let flat_ok = flat.mesh.face_count() <= 8 && error == 0.0 && flat.total_cost == 0.0 && boundary_off <= 1e-6;
    outcome(
        sphere_ok && flat_ok,
        format!(
            "sphere: {} faces, {flipped} flipped, manifold {}, max deviation {:.3}% of diagonal; grid: {} faces, error {error}, boundary offset {boundary_off:e}",
            out.face_count(),
            out.is_manifold(),
            100.0 * worst / diag,
            flat.mesh.face_count()
        ),
    )
}

/// 6. Strict 3x-mean selection, grid capacity, re-projection into patches.
fn densification_rules() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut selection_mismatch = 0;
    for _ in 0..100 {
        let (w, h) = (rng.random_range(16..400), rng.random_range(16..400));
        let hot = rng.random_range(0.0..0.05);
        let values = (0..w * h)
            .map(|_| if rng.random_bool(hot) { rng.random_range(1.0..20.0) } else { rng.random_range(0.0..0.2) })
            .collect();
        let img = ErrorImage::new(w, h, values).unwrap();
        let g = select_patches(&img, 16).unwrap();
        selection_mismatch += g.selected.iter().zip(reference_select(&img, 16)).filter(|(a, b)| **a != *b).count();
    }
    let mut grid = ProxyGrid::new(Vec3::ZERO, 0.5, 3).unwrap();
    let mut counts: HashMap<[i64; 3], u32> = HashMap::new();
    let mut capacity_errors = 0;
    for _ in 0..100_000 {
        let p = Vec3::new(rng.random_range(0.0..4.0), rng.random_range(0.0..4.0), rng.random_range(0.0..4.0));
        let admitted = grid_insert(&mut grid, p);
        let slot = counts.entry([p.x, p.y, p.z].map(|c| (c / 0.5).floor() as i64)).or_insert(0);
        capacity_errors += (admitted != (*slot < 3)) as usize;
        *slot += admitted as u32;
    }
    capacity_errors += grid.occupancy.values().filter(|&&c| c > 3).count();
    let mut reprojection = 0;
    let mut planned = 0;
    for seed in 0..5 {
        let s = generate_synthetic_scene(
            seed,
            &SyntheticSpec { anchor_count: 10, width: 320, height: 240, ..Default::default() },
        )
        .unwrap();
        for cam in 0..s.cameras.len() {
            let depth = run_pipeline(&s, cam).unwrap().depth;
            let check = check_densify(&s, &s.cameras[cam], &depth, seed).unwrap();
            reprojection += check.violations;
            planned += check.checked;
        }
    }
    outcome(
        selection_mismatch == 0 && capacity_errors == 0 && reprojection == 0,
        format!("{selection_mismatch} selection mismatches on 100 images; {capacity_errors} capacity errors over 1e5 insertions; {reprojection} re-projection failures ({planned} checks)"),
    )
}

fn median_ms(mut f: impl FnMut(), frames: usize) -> f64 {
    for _ in 0..10 {
        f();
    }
    let mut t: Vec<f64> = (0..frames)
        .map(|_| {
            let s = Instant::now();
            f();
            s.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    t.sort_by(f64::total_cmp);
    t[frames / 2]
}

/// 7. Depth pass and full pipeline wall-clock on a 100k-triangle proxy.
fn performance() -> Outcome {
    let spec = SyntheticSpec { anchor_count: 100_000, ..Default::default() }.with_triangle_target(100_000);
    let s = generate_synthetic_scene(7, &spec).unwrap();
    let cam = &s.cameras[0];
    let planes = extract_frustum(cam);
    let depth_pass = || {
        let culled = frustum_cull(&s.clusters, &planes);
        let faces: Vec<u32> = s
            .clusters
            .iter()
            .zip(&culled)
            .filter(|(_, &c)| !c)
            .flat_map(|(c, _)| c.triangle_indices.iter().copied())
            .collect();
        rasterize_with(&s.mesh, cam, Some(&faces), &s.config.raster_options())
    };
    let hardware = std::thread::available_parallelism().map_or(1, |n| n.get());
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    let (single, full) = (pool(1), pool(hardware));
    let depth_1 = single.install(|| median_ms(|| drop(depth_pass()), 30));
    let depth_n = full.install(|| median_ms(|| drop(depth_pass()), 30));
    let total = full.install(|| median_ms(|| drop(run_pipeline(&s, 0).unwrap()), 30));
    let ok = depth_1 < 50.0 && depth_n < 15.0 && total < 60.0;
    outcome(
        ok,
        format!(
            "{} faces at 1000x1000: depth {depth_1:.1} ms on 1 worker (< 50), {depth_n:.1} ms on {hardware} workers (< 15), full pipeline {total:.1} ms (< 60)",
            s.mesh.face_count()
        ),
    )
}

fn run_cli(args: &[String]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_proxycull")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn files_under(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(
                files_under(&p)
                    .into_iter()
                    .map(|(n, b)| (format!("{}/{n}", p.file_name().unwrap().to_string_lossy()), b)),
            );
        } else {
            out.push((p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()));
        }
    }
    out.sort();
    out
}

/// Every verb writes into its own directory; stdout is compared as JSON
/// with timing fields removed.
fn cli_outputs(threads: usize) -> (Vec<(String, Vec<u8>)>, Vec<serde_json::Value>) {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    let manifest = d("scene/scene.json");
    let verbs: Vec<Vec<String>> = [
        vec![
            "gen-scene",
            "-o",
            &d("scene"),
            "--seed",
            "7",
            "--triangles",
            "20000",
            "--anchors",
            "100000",
            "--width",
            "400",
            "--height",
            "300",
        ],
        vec!["simplify", &d("scene/proxy.ply"), "-o", &d("simple.ply"), "--target-faces", "2000"],
        vec!["cluster", &d("simple.ply"), "-o", &d("simple.clusters")],
        vec!["depth", &manifest, "--camera", "2", "-o", &d("depth.f32")],
        vec!["cull-anchors", &manifest, "--camera", "1", "-o", &d("mask.bin")],
        vec!["densify-plan", &manifest, "--camera", "0", "--camera", "3", "--error-seed", "1", "-o", &d("plan.f32")],
        vec!["bench", &manifest, "--frames", "3", "--warmup", "0"],
        vec!["oracle", "--seeds", "5,6", "--qem-trials", "5"],
    ]
    .iter()
    .map(|v| v.iter().map(|s| s.to_string()).collect())
    .collect();
    let mut stdout = Vec::new();
    for v in verbs {
        let mut args = vec!["--json".to_string(), "--threads".into(), threads.to_string()];
        args.extend(v);
        let value: serde_json::Value = serde_json::from_slice(&run_cli(&args)).unwrap();
        stdout.push(strip_volatile(value));
    }
    (files_under(dir.path()), stdout)
}

fn strip_volatile(v: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match v {
        Value::Object(m) => Value::Object(
            m.into_iter()
                .filter(|(k, _)| {
                    !(k.ends_with("_ms")
                        || k.ends_with("_share")
                        || ["threads", "output", "manifest", "provenance"].contains(&k.as_str()))
                })
                .map(|(k, v)| (k, strip_volatile(v)))
                .collect(),
        ),
        Value::Array(a) => Value::Array(a.into_iter().map(strip_volatile).collect()),
        other => other,
    }
}

/// 8. Byte-identical outputs across runs and worker counts.
fn determinism() -> Outcome {
    let runs = [cli_outputs(1), cli_outputs(1), cli_outputs(4)];
    let (files, stdout) = &runs[0];
    let mut differing: Vec<String> = Vec::new();
    for (i, (f, o)) in runs.iter().enumerate().skip(1) {
        if f.len() != files.len() {
            differing.push(format!("run {i}: file count {} vs {}", f.len(), files.len()));
        }
        differing.extend(f.iter().zip(files).filter(|(a, b)| a != b).map(|(a, _)| format!("run {i}: {}", a.0)));
        differing.extend(
            o.iter()
                .zip(stdout)
                .enumerate()
                .filter(|(_, (a, b))| a != b)
                .map(|(k, _)| format!("run {i}: stdout of verb {k}")),
        );
    }
    outcome(
        differing.is_empty(),
        format!(
            "{} output files and 8 command reports compared over 3 runs (1, 1, 4 workers); differing: {differing:?}",
            files.len()
        ),
    )
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome, bool);
    let criteria: [Criterion; 8] = [
        ("1 anchor-filter exactness", anchor_filter_exactness, true),
        ("2 rasterizer correctness", rasterizer_correctness, true),
        ("3 hi-z soundness", hiz_soundness, true),
        ("4 occlusion effectiveness", occlusion_effectiveness, true),
        ("5 qem quality", qem_quality, true),
        ("6 densification rules", densification_rules, true),
        ("7 performance", performance, std::env::var("PROXYCULL_STRICT_PERF").is_ok_and(|v| v == "1")),
        ("8 determinism", determinism, true),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut fatal = 0;
    for (name, run, gating) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let r = run();
        let verdict = if r.passed { "PASS" } else { "FAIL" };
        println!("criterion {name}: {verdict} ({:.1} s) {}", start.elapsed().as_secs_f64(), r.detail);
        if !r.passed && gating {
            fatal += 1;
        }
    }
    if fatal > 0 {
        eprintln!("{fatal} correctness criteria failed");
        std::process::exit(1);
    }
}
