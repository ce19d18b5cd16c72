//! Cluster frustum/Hi-Z culling and the per-anchor occlusion filter.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{clip_corners, conservative_depth_from_clip, screen_rect_from_clip, snap_level, Cluster};
use crate::error::{Error, Result};
use crate::geometry::{linearize_depth, ndc_to_pixel, project_with, Camera, ProjectionParams};
use crate::math::Vec3;
use crate::raster::{rect_max, DepthMap, HiZPyramid, BACKGROUND_DEPTH};

pub const DEFAULT_GAMMA: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Vec3,
    pub offset: f64,
}

impl Plane {
    #[inline]
    pub fn distance(&self, p: Vec3) -> f64 {
        self.normal.dot(p) + self.offset
    }
}

/// Left, right, bottom, top, near, far; normals point into the frustum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrustumPlanes {
    pub planes: [Plane; 6],
}

impl FrustumPlanes {
    pub fn contains(&self, p: Vec3) -> bool {
        self.planes.iter().all(|pl| pl.distance(p) > 0.0)
    }
}

/// Reads the six clip planes off the rows of `P·V` (depth range `[0, 1]`).
pub fn extract_frustum(camera: &Camera) -> FrustumPlanes {
    let m = camera.view_proj();
    let r = |i: usize| m.row(i);
    let (r0, r1, r2, r3) = (r(0), r(1), r(2), r(3));
    let add = |a: [f64; 4], b: [f64; 4]| std::array::from_fn::<f64, 4, _>(|k| a[k] + b[k]);
    let sub = |a: [f64; 4], b: [f64; 4]| std::array::from_fn::<f64, 4, _>(|k| a[k] - b[k]);
    let raw = [add(r3, r0), sub(r3, r0), add(r3, r1), sub(r3, r1), r2, sub(r3, r2)];
    let mut planes = raw.map(|p| {
        let n = Vec3::new(p[0], p[1], p[2]);
        let len = n.length();
        let s = if len > 0.0 { 1.0 / len } else { 1.0 };
        Plane { normal: n * s, offset: p[3] * s }
    });
    // A point in the middle of the view volume must be on the inner side.
    if let Some(inv) = m.inverse() {
        let h = inv.mul_vec4([0.0, 0.0, 0.5, 1.0]);
        if h[3] != 0.0 {
            let mid = Vec3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]);
            for pl in &mut planes {
                if pl.distance(mid) < 0.0 {
                    pl.normal = -pl.normal;
                    pl.offset = -pl.offset;
                }
            }
        }
    }
    FrustumPlanes { planes }
}

/// True when some plane has all eight AABB corners strictly outside.
pub fn cluster_outside(cluster: &Cluster, planes: &FrustumPlanes) -> bool {
    let corners = cluster.corners();
    planes.planes.iter().any(|pl| corners.iter().map(|&c| pl.distance(c)).fold(f64::NEG_INFINITY, f64::max) < 0.0)
}

pub fn frustum_cull(clusters: &[Cluster], planes: &FrustumPlanes) -> Vec<bool> {
    clusters.par_iter().map(|c| cluster_outside(c, planes)).collect()
}

/// The f32 just below `z`, so a cluster never counts as hidden behind its
/// own (round-up stored) fragments.
fn depth_toward_camera(z: f64) -> f32 {
    let f = z as f32;
    if (f as f64) < z {
        f
    } else {
        f.next_down()
    }
}

/// Hi-Z test per cluster. Off-screen clusters and clusters reaching in front
/// of the near plane are never reported as occluded.
pub fn occlusion_cull_clusters(
    clusters: &[Cluster],
    camera: &Camera,
    pyramid: &HiZPyramid,
    level_bias: u32,
    padding: i64,
) -> Vec<bool> {
    let vp = camera.view_proj();
    clusters
        .par_iter()
        .map(|c| {
            let clip = clip_corners(c, &vp);
            let rect = screen_rect_from_clip(&clip, camera.width, camera.height, padding);
            if rect.empty {
                return false;
            }
            let Some(z) = conservative_depth_from_clip(&clip) else { return false };
            let snapped = snap_level(&rect, level_bias, pyramid.max_level());
            match rect_max(pyramid, &snapped) {
                Some(m) => depth_toward_camera(z) >= m,
                None => false,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub positions: Vec<Vec3>,
}

impl AnchorSet {
    pub fn new(positions: Vec<Vec3>) -> Result<Self> {
        if let Some(i) = positions.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter(format!("anchor {i} has a non-finite coordinate")));
        }
        Ok(Self { positions })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum Verdict {
    Kept = 0,
    CulledNear = 1,
    CulledOffscreen = 2,
    CulledOccluded = 3,
}

impl Verdict {
    pub fn from_u8(b: u8) -> Option<Verdict> {
        match b {
            0 => Some(Verdict::Kept),
            1 => Some(Verdict::CulledNear),
            2 => Some(Verdict::CulledOffscreen),
            3 => Some(Verdict::CulledOccluded),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictCounts {
    pub kept: usize,
    pub culled_near: usize,
    pub culled_offscreen: usize,
    pub culled_occluded: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CullMask {
    pub verdicts: Vec<Verdict>,
    pub kept_count: usize,
}

impl CullMask {
    pub fn from_verdicts(verdicts: Vec<Verdict>) -> Self {
        let kept_count = verdicts.iter().filter(|&&v| v == Verdict::Kept).count();
        Self { verdicts, kept_count }
    }

    pub fn counts(&self) -> VerdictCounts {
        let mut c = VerdictCounts::default();
        for v in &self.verdicts {
            match v {
                Verdict::Kept => c.kept += 1,
                Verdict::CulledNear => c.culled_near += 1,
                Verdict::CulledOffscreen => c.culled_offscreen += 1,
                Verdict::CulledOccluded => c.culled_occluded += 1,
            }
        }
        c
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.verdicts.iter().map(|&v| v as u8).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CullParams {
    /// Safety margin added to the linearized proxy depth, world units.
    pub gamma: f64,
    pub projection: ProjectionParams,
}

impl Default for CullParams {
    fn default() -> Self {
        Self { gamma: DEFAULT_GAMMA, projection: ProjectionParams::default() }
    }
}

fn check_inputs(camera: &Camera, depth: &DepthMap, params: &CullParams) -> Result<()> {
    if depth.width != camera.width || depth.height != camera.height {
        return Err(Error::DimensionMismatch {
            what: "depth map",
            want_w: camera.width,
            want_h: camera.height,
            got_w: depth.width,
            got_h: depth.height,
        });
    }
    if !(params.gamma >= 0.0 && params.gamma.is_finite()) {
        return Err(Error::InvalidParameter(format!("gamma must be finite and >= 0 (got {})", params.gamma)));
    }
    if let Some(&bad) = depth.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::DepthDomain { z_hw: bad as f64, near: camera.near, far: camera.far });
    }
    Ok(())
}

/// Depth test at an in-bounds pixel. Background never occludes.
#[inline]
fn depth_test(view_depth: f64, z_hw: f32, camera: &Camera, gamma: f64) -> Verdict {
    if z_hw == BACKGROUND_DEPTH {
        return Verdict::Kept;
    }
    // Inputs were range-checked, so linearization cannot fail here.
    let d_hat = linearize_depth(z_hw as f64, camera.near, camera.far).unwrap_or(f64::INFINITY) + gamma;
    if view_depth > d_hat {
        Verdict::CulledOccluded
    } else {
        Verdict::Kept
    }
}

#[inline]
fn classify(p: Vec3, camera: &Camera, depth: &DepthMap, params: &CullParams) -> Verdict {
    let ndc = project_with(camera, p, &params.projection);
    if !ndc.valid {
        return Verdict::CulledNear;
    }
    let px = ndc_to_pixel(&ndc, camera.width, camera.height);
    if !px.in_bounds {
        return Verdict::CulledOffscreen;
    }
    let z_hw = depth.get(px.x_pix as usize, px.y_pix as usize);
    depth_test(ndc.view_depth, z_hw, camera, params.gamma)
}

pub fn cull_anchors(anchors: &AnchorSet, camera: &Camera, depth: &DepthMap, gamma: f64) -> Result<CullMask> {
    cull_anchors_with(anchors, camera, depth, &CullParams { gamma, ..Default::default() })
}

/// Single pass per anchor: project, map to a pixel, read depth, test.
pub fn cull_anchors_with(
    anchors: &AnchorSet,
    camera: &Camera,
    depth: &DepthMap,
    params: &CullParams,
) -> Result<CullMask> {
    check_inputs(camera, depth, params)?;
    let verdicts: Vec<Verdict> =
        anchors.positions.par_iter().with_min_len(4096).map(|&p| classify(p, camera, depth, params)).collect();
    Ok(CullMask::from_verdicts(verdicts))
}

/// The same filter as separate whole-array stages.
pub fn cull_anchors_staged(
    anchors: &AnchorSet,
    camera: &Camera,
    depth: &DepthMap,
    params: &CullParams,
) -> Result<CullMask> {
    check_inputs(camera, depth, params)?;
    let projected: Vec<_> = anchors.positions.iter().map(|&p| project_with(camera, p, &params.projection)).collect();
    let pixels: Vec<_> = projected.iter().map(|n| ndc_to_pixel(n, camera.width, camera.height)).collect();
    let reads: Vec<Option<f32>> = projected
        .iter()
        .zip(&pixels)
        .map(|(n, px)| (n.valid && px.in_bounds).then(|| depth.get(px.x_pix as usize, px.y_pix as usize)))
        .collect();
    let verdicts = projected
        .iter()
        .zip(&pixels)
        .zip(&reads)
        .map(|((n, px), z)| match (n.valid, px.in_bounds, z) {
            (false, _, _) => Verdict::CulledNear,
            (true, false, _) => Verdict::CulledOffscreen,
            (true, true, Some(z)) => depth_test(n.view_depth, *z, camera, params.gamma),
            (true, true, None) => unreachable!("in-bounds anchors always read depth"),
        })
        .collect();
    Ok(CullMask::from_verdicts(verdicts))
}

/// Per-anchor record of both candidate depth operands for the occlusion test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorDiagnostic {
    pub index: usize,
    pub verdict: Verdict,
    pub view_depth: f64,
    pub clip_z: f64,
    pub w_clip: f64,
    pub x_pix: i64,
    pub y_pix: i64,
    pub z_hw: Option<f32>,
    pub d_hat: Option<f64>,
    /// Verdict the occlusion test would give using clip-space `z_h` instead.
    pub clip_z_verdict: Verdict,
}

pub fn cull_anchors_diagnostic(
    anchors: &AnchorSet,
    camera: &Camera,
    depth: &DepthMap,
    params: &CullParams,
) -> Result<(CullMask, Vec<AnchorDiagnostic>)> {
    check_inputs(camera, depth, params)?;
    let diags: Vec<AnchorDiagnostic> = anchors
        .positions
        .par_iter()
        .enumerate()
        .map(|(index, &p)| {
            let ndc = project_with(camera, p, &params.projection);
            let px = ndc_to_pixel(&ndc, camera.width, camera.height);
            let z_hw = (ndc.valid && px.in_bounds).then(|| depth.get(px.x_pix as usize, px.y_pix as usize));
            let d_hat = z_hw
                .filter(|&z| z != BACKGROUND_DEPTH)
                .map(|z| linearize_depth(z as f64, camera.near, camera.far).unwrap_or(f64::INFINITY) + params.gamma);
            let verdict = classify(p, camera, depth, params);
            let clip_z_verdict = match (verdict, d_hat) {
                (Verdict::Kept | Verdict::CulledOccluded, Some(d)) if ndc.z_clip > d => Verdict::CulledOccluded,
                (Verdict::Kept | Verdict::CulledOccluded, _) => Verdict::Kept,
                (v, _) => v,
            };
            AnchorDiagnostic {
                index,
                verdict,
                view_depth: ndc.view_depth,
                clip_z: ndc.z_clip,
                w_clip: ndc.w_clip,
                x_pix: px.x_pix,
                y_pix: px.y_pix,
                z_hw,
                d_hat,
                clip_z_verdict,
            }
        })
        .collect();
    let mask = CullMask::from_verdicts(diags.iter().map(|d| d.verdict).collect());
    Ok((mask, diags))
}
