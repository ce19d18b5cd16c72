use proxycull_core::oracle::{
    check_qem_grid, oracle_batch, oracle_scene, oracle_suite, oracle_suite_with, reference_cull_anchors,
    small_scene_spec, CheckStatus, DepthFault, OracleOptions,
};
use proxycull_core::pipeline::run_pipeline;

#[test]
fn twenty_seed_batch_has_no_violations() {
    let seeds: Vec<u64> = (100..120).collect();
    let summary = oracle_batch(&seeds, &small_scene_spec()).unwrap();
    assert!(summary.passed, "{summary:?}");
    assert_eq!(summary.reports, 40);
    assert_eq!(summary.violations, 0);
    assert_eq!(summary.skipped, 0);
    assert!(summary.occluded_clusters > 0, "soundness check never exercised");
}

#[test]
fn every_check_runs_on_a_small_scene() {
    let s = oracle_scene(4, &small_scene_spec()).unwrap();
    let report = oracle_suite(&s, 0).unwrap();
    let names: Vec<_> = report.checks.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(
        names,
        [
            "raster_raycast",
            "hiz_footprint",
            "hiz_soundness",
            "anchor_cull",
            "densify_backprojection",
            "qem_grid_search"
        ]
    );
    for c in &report.checks {
        assert_eq!(c.status, CheckStatus::Pass, "{c:?}");
        assert!(c.checked > 0 || c.name == "hiz_soundness", "{c:?}");
    }
}

/// A corrupted rectangle of the depth map is reported at the first anchor
/// whose verdict it changes.
#[test]
fn depth_fault_reports_first_changed_anchor() {
    let s = oracle_scene(9, &small_scene_spec()).unwrap();
    let cam = &s.cameras[0];
    let frame = run_pipeline(&s, 0).unwrap();
    for (fault, value) in [((40, 50, 90, 100), 0.0f32), ((0, 0, 127, 127), 1.0), ((60, 60, 61, 127), 0.2)] {
        let fault = DepthFault { x0: fault.0, y0: fault.1, x1: fault.2, y1: fault.3, value };
        let mut bad = frame.depth.clone();
        for y in fault.y0..=fault.y1 {
            for x in fault.x0..=fault.x1 {
                bad.values[y * bad.width + x] = value;
            }
        }
        let params = s.config.cull_params();
        let good = reference_cull_anchors(&s.anchors.positions, cam, &frame.depth, &params);
        let corrupted = reference_cull_anchors(&s.anchors.positions, cam, &bad, &params);
        let first = good.iter().zip(&corrupted).position(|(a, b)| a != b).expect("fault changes some verdict");

        let opts = OracleOptions { depth_fault: Some(fault), qem_trials: 1, ..Default::default() };
        let report = oracle_suite_with(&s, 0, &opts).unwrap();
        assert!(!report.passed);
        let check = report.check("anchor_cull").unwrap();
        assert_eq!(check.status, CheckStatus::Fail);
        let msg = check.first_counterexample.as_deref().unwrap();
        assert!(msg.starts_with(&format!("anchor {first}:")), "expected anchor {first}, got {msg}");
        assert_eq!(check.violations, good.iter().zip(&corrupted).filter(|(a, b)| a != b).count());
    }
}

#[test]
fn qem_grid_search_agrees() {
    let check = check_qem_grid(200, 77);
    assert_eq!((check.status, check.checked), (CheckStatus::Pass, 200), "{check:?}");
}

#[test]
fn oversized_scenes_skip_brute_force_checks() {
    let spec = proxycull_core::synth::SyntheticSpec { width: 200, height: 200, ..small_scene_spec() };
    let s = oracle_scene(0, &spec).unwrap();
    let report = oracle_suite(&s, 0).unwrap();
    assert!(report.passed);
    assert_eq!(report.check("raster_raycast").unwrap().status, CheckStatus::Skipped);
    assert_eq!(report.check("anchor_cull").unwrap().status, CheckStatus::Pass);
}
