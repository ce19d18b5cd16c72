//! One frame of the visibility pipeline and the stage benchmark.
//!
//! Frame order: frustum-cull clusters, rasterize the survivors, build the
//! Hi-Z pyramid, run the cluster occlusion test against it, then filter the
//! anchors against the same depth buffer.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cluster::Cluster;
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::raster::{build_hiz, rasterize_with, DepthMap, HiZPyramid};
use crate::scene::SceneBundle;
use crate::visibility::{cull_anchors_with, extract_frustum, frustum_cull, occlusion_cull_clusters, CullMask};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameStats {
    /// Frustum test plus depth rasterization.
    pub depth_ms: f64,
    /// Pyramid build plus the cluster occlusion test.
    pub hiz_ms: f64,
    pub filter_ms: f64,
    pub total_ms: f64,
    pub anchors_in: usize,
    pub anchors_kept: usize,
    pub clusters_total: usize,
    /// Clusters passing both the frustum and the occlusion test.
    pub clusters_drawn: usize,
    pub clusters_frustum_culled: usize,
    pub clusters_occlusion_culled: usize,
    pub triangles_rasterized: usize,
}

impl FrameStats {
    pub fn timings_cleared(mut self) -> Self {
        self.depth_ms = 0.0;
        self.hiz_ms = 0.0;
        self.filter_ms = 0.0;
        self.total_ms = 0.0;
        self
    }
}

#[derive(Debug, Clone)]
pub struct FrameResult {
    pub depth: DepthMap,
    pub pyramid: HiZPyramid,
    pub mask: CullMask,
    pub frustum_culled: Vec<bool>,
    pub occluded: Vec<bool>,
    pub stats: FrameStats,
}

fn aabb_distance_sq(c: &Cluster, p: Vec3) -> f64 {
    (0..3).map(|k| (c.aabb_min[k] - p[k]).max(p[k] - c.aabb_max[k]).max(0.0).powi(2)).sum()
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

pub fn run_pipeline(bundle: &SceneBundle, camera_index: usize) -> Result<FrameResult> {
    let camera = bundle.cameras.get(camera_index).ok_or_else(|| {
        Error::InvalidParameter(format!("camera index {camera_index} out of range ({} cameras)", bundle.cameras.len()))
    })?;
    let cfg = &bundle.config;
    let start = Instant::now();

    let planes = extract_frustum(camera);
    let frustum_culled = frustum_cull(&bundle.clusters, &planes);
    // Near clusters first so early-Z rejects more; the depth buffer does not
    // depend on submission order.
    let mut order: Vec<(f64, usize)> = bundle
        .clusters
        .iter()
        .enumerate()
        .filter(|(i, _)| !frustum_culled[*i])
        .map(|(i, c)| (aabb_distance_sq(c, camera.center), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let faces: Vec<u32> =
        order.iter().flat_map(|&(_, i)| bundle.clusters[i].triangle_indices.iter().copied()).collect();
    let depth = rasterize_with(&bundle.mesh, camera, Some(&faces), &cfg.raster_options());
    let depth_ms = ms(start);

    let t = Instant::now();
    let pyramid = build_hiz(&depth);
    let occluded_raw = occlusion_cull_clusters(&bundle.clusters, camera, &pyramid, cfg.level_bias, cfg.padding);
    let occluded: Vec<bool> = occluded_raw.iter().zip(&frustum_culled).map(|(&o, &f)| o && !f).collect();
    let hiz_ms = ms(t);

    let t = Instant::now();
    let mask = cull_anchors_with(&bundle.anchors, camera, &depth, &cfg.cull_params())?;
    let filter_ms = ms(t);

    let frustum_count = frustum_culled.iter().filter(|&&c| c).count();
    let occluded_count = occluded.iter().filter(|&&c| c).count();
    let stats = FrameStats {
        depth_ms,
        hiz_ms,
        filter_ms,
        total_ms: ms(start),
        anchors_in: bundle.anchors.len(),
        anchors_kept: mask.kept_count,
        clusters_total: bundle.clusters.len(),
        clusters_drawn: bundle.clusters.len() - frustum_count - occluded_count,
        clusters_frustum_culled: frustum_count,
        clusters_occlusion_culled: occluded_count,
        triangles_rasterized: faces.len(),
    };
    Ok(FrameResult { depth, pyramid, mask, frustum_culled, occluded, stats })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub frames: usize,
    pub warmup: usize,
    pub threads: usize,
    pub triangles: usize,
    pub anchors: usize,
    pub width: usize,
    pub height: usize,
    pub median_depth_ms: f64,
    pub median_hiz_ms: f64,
    pub median_filter_ms: f64,
    pub median_total_ms: f64,
    /// Share of the median total spent in depth rendering, anchor filtering
    /// and everything else.
    pub depth_share: f64,
    pub filter_share: f64,
    pub other_share: f64,
    pub stats: FrameStats,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Median stage timings over `frames` runs after `warmup` discarded runs.
pub fn bench(bundle: &SceneBundle, camera_index: usize, frames: usize, warmup: usize) -> Result<BenchReport> {
    if frames < 1 {
        return Err(Error::InvalidParameter("bench needs at least one frame".into()));
    }
    for _ in 0..warmup {
        run_pipeline(bundle, camera_index)?;
    }
    let mut runs = Vec::with_capacity(frames);
    for _ in 0..frames {
        runs.push(run_pipeline(bundle, camera_index)?.stats);
    }
    let pick = |f: fn(&FrameStats) -> f64| median(runs.iter().map(f).collect());
    let (d, h, fl, tot) = (pick(|s| s.depth_ms), pick(|s| s.hiz_ms), pick(|s| s.filter_ms), pick(|s| s.total_ms));
    let share = |x: f64| if tot > 0.0 { x / tot } else { 0.0 };
    let cam = &bundle.cameras[camera_index];
    Ok(BenchReport {
        frames,
        warmup,
        threads: rayon::current_num_threads(),
        triangles: bundle.mesh.face_count(),
        anchors: bundle.anchors.len(),
        width: cam.width,
        height: cam.height,
        median_depth_ms: d,
        median_hiz_ms: h,
        median_filter_ms: fl,
        median_total_ms: tot,
        depth_share: share(d),
        filter_share: share(fl),
        other_share: share((tot - d - fl).max(0.0)),
        stats: runs[0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Camera;
    use crate::math::Vec3;
    use crate::mesh::TriangleMesh;
    use crate::scene::SceneConfig;
    use crate::synth::{generate_synthetic_scene, SyntheticSpec};
    use crate::visibility::{AnchorSet, Verdict};

    #[test]
    fn stats_partition_clusters() {
        let spec = SyntheticSpec { anchor_count: 3000, width: 128, height: 128, ..Default::default() };
        let s = generate_synthetic_scene(7, &spec).unwrap();
        for cam in 0..s.cameras.len() {
            let st = run_pipeline(&s, cam).unwrap().stats;
            assert_eq!(
                st.clusters_drawn + st.clusters_frustum_culled + st.clusters_occlusion_culled,
                st.clusters_total
            );
            assert!(st.anchors_kept <= st.anchors_in);
        }
    }

    #[test]
    fn empty_anchor_set() {
        let mut s = generate_synthetic_scene(
            1,
            &SyntheticSpec { anchor_count: 0, width: 32, height: 32, ..Default::default() },
        )
        .unwrap();
        s.anchors = AnchorSet::default();
        let r = run_pipeline(&s, 0).unwrap();
        assert_eq!((r.mask.kept_count, r.stats.anchors_in), (0, 0));
        assert!(run_pipeline(&s, 99).is_err());
    }

    #[test]
    fn camera_inside_closed_box() {
        let mesh = TriangleMesh::cuboid(Vec3::splat(-5.0), Vec3::splat(5.0));
        let clusters = crate::cluster::build_clusters(&mesh, 1, 128).unwrap();
        let cam =
            Camera::look_at(Vec3::ZERO, Vec3::new(1.0, 0.2, 0.1), Vec3::new(0.0, 0.0, 1.0), 80.0, 0.1, 100.0, 64, 64)
                .unwrap();
        let anchors =
            AnchorSet::new(vec![Vec3::new(20.0, 0.0, 0.0), Vec3::new(30.0, 3.0, -1.0), Vec3::new(2.0, 0.0, 0.0)])
                .unwrap();
        let s =
            crate::scene::SceneBundle { mesh, clusters, cameras: vec![cam], anchors, config: SceneConfig::default() };
        let r = run_pipeline(&s, 0).unwrap();
        assert_eq!(r.mask.verdicts, vec![Verdict::CulledOccluded, Verdict::CulledOccluded, Verdict::Kept]);
        assert_eq!(r.depth.covered_pixels(), 64 * 64);
    }
}
