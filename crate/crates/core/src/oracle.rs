//! Brute-force reference implementations and the suite that checks the fast
//! paths against them.
//!
//! The references share no code with the fast paths beyond plain data types:
//! matrices are applied with explicit loops, the ray caster unprojects
//! through its own 4×4 inverse and the pinhole inverse is built from
//! cofactors. Where a reference must agree bit for bit (anchor culling) it
//! repeats the fast path's arithmetic in the same order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{build_clusters, Cluster};
use crate::densify::{plan_anchors, select_patches, ErrorImage, PatchGrid, ProxyGrid, THRESHOLD_FACTOR};
use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::math::Vec3;
use crate::mesh::TriangleMesh;
use crate::pipeline::run_pipeline;
use crate::raster::{build_hiz, rasterize_with, DepthMap, HiZPyramid, RasterOptions, BACKGROUND_DEPTH};
use crate::scene::SceneBundle;
use crate::simplify::{optimal_collapse, Quadric};
use crate::synth::{generate_synthetic_scene, SyntheticSpec};
use crate::visibility::{cull_anchors_with, CullParams, Verdict};

/// Ray casting is quadratic; larger scenes skip the checks that need it.
pub const MAX_RAYCAST_TRIANGLES: usize = 1000;
pub const MAX_RAYCAST_PIXELS: usize = 128 * 128;
/// Allowed absolute difference between rasterized and ray-cast depth.
pub const DEPTH_TOLERANCE: f64 = 1e-6;

fn apply4(m: &[[f64; 4]; 4], v: [f64; 4]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for r in 0..4 {
        out[r] = m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2] + m[r][3] * v[3];
    }
    out
}

fn compose4(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            out[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c] + a[r][2] * b[2][c] + a[r][3] * b[3][c];
        }
    }
    out
}

/// Gauss–Jordan elimination with partial pivoting.
pub fn invert4(m: &[[f64; 4]; 4]) -> Option<[[f64; 4]; 4]> {
    let mut a = *m;
    let mut inv = [[0.0; 4]; 4];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if !(a[pivot][col].abs() > 1e-300) {
            return None;
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let p = a[col][col];
        for c in 0..4 {
            a[col][c] /= p;
            inv[col][c] /= p;
        }
        for r in 0..4 {
            if r != col {
                let f = a[r][col];
                for c in 0..4 {
                    a[r][c] -= f * a[col][c];
                    inv[r][c] -= f * inv[col][c];
                }
            }
        }
    }
    Some(inv)
}

/// Inverse of a 3×3 matrix via the adjugate.
pub fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let cof = [
        [c(1, 2, 1, 2), -c(1, 2, 0, 2), c(1, 2, 0, 1)],
        [-c(0, 2, 1, 2), c(0, 2, 0, 2), -c(0, 2, 0, 1)],
        [c(0, 1, 1, 2), -c(0, 1, 0, 2), c(0, 1, 0, 1)],
    ];
    let det = m[0][0] * cof[0][0] + m[0][1] * cof[0][1] + m[0][2] * cof[0][2];
    if !(det.abs() > 1e-300) {
        return None;
    }
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = cof[c][r] / det;
        }
    }
    Some(out)
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Two-sided Möller–Trumbore; returns the point on the line `o + t d`.
fn intersect(o: [f64; 3], d: [f64; 3], tri: &[[f64; 3]; 3]) -> Option<[f64; 3]> {
    let e1 = sub(tri[1], tri[0]);
    let e2 = sub(tri[2], tri[0]);
    let p = cross(d, e2);
    let det = dot(e1, p);
    if !(det.abs() > 1e-300) {
        return None;
    }
    let inv = 1.0 / det;
    let s = sub(o, tri[0]);
    let u = dot(s, p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = cross(s, e1);
    let v = dot(d, q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = dot(e2, q) * inv;
    Some([o[0] + d[0] * t, o[1] + d[1] * t, o[2] + d[2] * t])
}

/// Per-pixel ray caster: the line through each pixel center, intersected
/// with every triangle.
pub struct RayCaster {
    view_proj: [[f64; 4]; 4],
    inverse: [[f64; 4]; 4],
    width: usize,
    height: usize,
    tau_near: f64,
    tris: Vec<[[f64; 3]; 3]>,
}

impl RayCaster {
    pub fn new(mesh: &TriangleMesh, camera: &Camera, tau_near: f64) -> Result<Self> {
        let view_proj = compose4(&camera.proj_matrix.0, &camera.view_matrix.0);
        let inverse =
            invert4(&view_proj).ok_or_else(|| Error::InvalidParameter("view-projection matrix is singular".into()))?;
        let tris = (0..mesh.face_count()).map(|f| mesh.face_positions(f).map(|p| [p.x, p.y, p.z])).collect();
        Ok(Self { view_proj, inverse, width: camera.width, height: camera.height, tau_near, tris })
    }

    fn unproject(&self, x: f64, y: f64, z: f64) -> [f64; 3] {
        let h = apply4(&self.inverse, [x, y, z, 1.0]);
        [h[0] / h[3], h[1] / h[3], h[2] / h[3]]
    }

    /// Clamped NDC depth of face `f` at pixel `(x, y)`, if the pixel-center
    /// line meets it in front of `w = τ_near`.
    pub fn face_depth(&self, x: usize, y: usize, f: usize) -> Option<f64> {
        let (o, d) = self.ray(x, y);
        self.hit_depth(o, d, f)
    }

    fn ray(&self, x: usize, y: usize) -> ([f64; 3], [f64; 3]) {
        let nx = (x as f64 + 0.5) / self.width as f64 * 2.0 - 1.0;
        let ny = (y as f64 + 0.5) / self.height as f64 * 2.0 - 1.0;
        let a = self.unproject(nx, ny, 0.0);
        let b = self.unproject(nx, ny, 1.0);
        (a, sub(b, a))
    }

    fn hit_depth(&self, o: [f64; 3], d: [f64; 3], f: usize) -> Option<f64> {
        let p = intersect(o, d, &self.tris[f])?;
        let c = apply4(&self.view_proj, [p[0], p[1], p[2], 1.0]);
        (c[3] > self.tau_near).then(|| (c[2] / c[3]).clamp(0.0, 1.0))
    }

    /// Nearest clamped depth per pixel over `faces` (all when `None`);
    /// `None` where nothing is hit or only at depth 1.
    pub fn depth_map(&self, faces: Option<&[u32]>) -> Vec<Option<f64>> {
        let all: Vec<u32>;
        let faces = match faces {
            Some(f) => f,
            None => {
                all = (0..self.tris.len() as u32).collect();
                &all
            }
        };
        let mut out = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let (o, d) = self.ray(x, y);
                let best = faces
                    .iter()
                    .filter_map(|&f| self.hit_depth(o, d, f as usize))
                    .fold(None, |m: Option<f64>, z| Some(m.map_or(z, |m| m.min(z))));
                out.push(best.filter(|&z| z < 1.0));
            }
        }
        out
    }
}

fn within_raycast_limits(faces: usize, camera: &Camera) -> std::result::Result<(), String> {
    if faces > MAX_RAYCAST_TRIANGLES || camera.width * camera.height > MAX_RAYCAST_PIXELS {
        Err(format!(
            "scene exceeds ray-cast limits ({faces} triangles at {}x{}; limit {MAX_RAYCAST_TRIANGLES} at {MAX_RAYCAST_PIXELS} pixels)",
            camera.width, camera.height
        ))
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub name: String,
    pub status: CheckStatus,
    /// Items compared (pixels, texels, anchors, ...).
    pub checked: usize,
    pub violations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_counterexample: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl OracleCheck {
    fn new(name: &str) -> Self {
        Self {
            name: name.into(),
            status: CheckStatus::Pass,
            checked: 0,
            violations: 0,
            first_counterexample: None,
            note: None,
        }
    }

    fn skipped(name: &str, why: String) -> Self {
        Self { status: CheckStatus::Skipped, note: Some(why), ..Self::new(name) }
    }

    fn violation(&mut self, what: impl FnOnce() -> String) {
        if self.violations == 0 {
            self.first_counterexample = Some(what());
        }
        self.violations += 1;
        self.status = CheckStatus::Fail;
    }
}

/// Ray-cast comparison: exact coverage, depth within [`DEPTH_TOLERANCE`].
pub fn check_raster(mesh: &TriangleMesh, camera: &Camera, depth: &DepthMap, tau_near: f64) -> Result<OracleCheck> {
    const NAME: &str = "raster_raycast";
    if let Err(why) = within_raycast_limits(mesh.face_count(), camera) {
        return Ok(OracleCheck::skipped(NAME, why));
    }
    let reference = RayCaster::new(mesh, camera, tau_near)?.depth_map(None);
    let mut check = OracleCheck::new(NAME);
    for (i, (&got, want)) in depth.values.iter().zip(&reference).enumerate() {
        check.checked += 1;
        let (x, y) = (i % depth.width, i / depth.width);
        match (got != BACKGROUND_DEPTH, want) {
            (true, Some(z)) if (got as f64 - z).abs() > DEPTH_TOLERANCE => {
                check.violation(|| format!("pixel ({x}, {y}): raster depth {got}, ray-cast {z}"))
            }
            (true, None) => check.violation(|| format!("pixel ({x}, {y}): raster covers at {got}, ray-cast misses")),
            (false, Some(z)) => check.violation(|| format!("pixel ({x}, {y}): raster misses, ray-cast hits at {z}")),
            _ => {}
        }
    }
    Ok(check)
}

/// Every texel of every level equals the max over its level-0 footprint.
pub fn check_hiz_footprint(depth: &DepthMap, pyramid: &HiZPyramid) -> OracleCheck {
    let mut check = OracleCheck::new("hiz_footprint");
    if pyramid.levels.first() != Some(depth) {
        check.violation(|| "level 0 differs from the depth buffer".into());
    }
    for (l, level) in pyramid.levels.iter().enumerate() {
        let s = 1usize << l;
        let want_w = depth.width.div_ceil(s);
        let want_h = depth.height.div_ceil(s);
        if (level.width, level.height) != (want_w, want_h) {
            check.violation(|| format!("level {l} is {}x{}, expected {want_w}x{want_h}", level.width, level.height));
            continue;
        }
        for v in 0..level.height {
            for u in 0..level.width {
                let mut m = f32::NEG_INFINITY;
                for y in v * s..((v + 1) * s).min(depth.height) {
                    for x in u * s..((u + 1) * s).min(depth.width) {
                        m = m.max(depth.values[y * depth.width + x]);
                    }
                }
                check.checked += 1;
                let got = level.values[v * level.width + u];
                if got != m {
                    check.violation(|| format!("level {l} texel ({u}, {v}) = {got}, footprint max {m}"));
                }
            }
        }
    }
    if level_count_ok(depth, pyramid) {
        check
    } else {
        check.violation(|| format!("pyramid has {} levels and does not end at 1x1", pyramid.levels.len()));
        check
    }
}

fn level_count_ok(depth: &DepthMap, pyramid: &HiZPyramid) -> bool {
    let mut n = 1;
    let (mut w, mut h) = (depth.width, depth.height);
    while w > 1 || h > 1 {
        w = w.div_ceil(2);
        h = h.div_ceil(2);
        n += 1;
    }
    pyramid.levels.len() == n
}

/// No cluster flagged occluded may own a face that is nearest (or tied for
/// nearest) at any pixel of a full-scene ray cast.
pub fn check_occlusion_soundness(
    mesh: &TriangleMesh,
    clusters: &[Cluster],
    occluded: &[bool],
    camera: &Camera,
    tau_near: f64,
) -> Result<OracleCheck> {
    const NAME: &str = "hiz_soundness";
    if let Err(why) = within_raycast_limits(mesh.face_count(), camera) {
        return Ok(OracleCheck::skipped(NAME, why));
    }
    let caster = RayCaster::new(mesh, camera, tau_near)?;
    let nearest = caster.depth_map(None);
    let mut check = OracleCheck::new(NAME);
    for (k, c) in clusters.iter().enumerate() {
        if !occluded.get(k).copied().unwrap_or(false) {
            continue;
        }
        for &f in &c.triangle_indices {
            for (i, near) in nearest.iter().enumerate() {
                let Some(near) = *near else { continue };
                let (x, y) = (i % camera.width, i / camera.width);
                check.checked += 1;
                if let Some(z) = caster.face_depth(x, y, f as usize) {
                    if z <= near {
                        check.violation(|| {
                            format!(
                                "cluster {k} marked occluded but face {f} is visible at pixel ({x}, {y}), depth {z}"
                            )
                        });
                    }
                }
            }
        }
    }
    Ok(check)
}

/// Scalar anchor filter. Same arithmetic, in the same order, as the fast
/// path, so verdicts must agree exactly.
pub fn reference_cull_anchors(
    positions: &[Vec3],
    camera: &Camera,
    depth: &DepthMap,
    params: &CullParams,
) -> Vec<Verdict> {
    let v = &camera.view_matrix.0;
    let p = &camera.proj_matrix.0;
    let (w, h) = (camera.width, camera.height);
    let mut out = Vec::with_capacity(positions.len());
    for a in positions {
        let mut view = [0.0; 4];
        for r in 0..4 {
            view[r] = v[r][0] * a.x + v[r][1] * a.y + v[r][2] * a.z + v[r][3];
        }
        let mut clip = [0.0; 4];
        for r in 0..4 {
            clip[r] = p[r][0] * view[0] + p[r][1] * view[1] + p[r][2] * view[2] + p[r][3] * view[3];
        }
        if !(clip[3] > params.projection.tau_near) {
            out.push(Verdict::CulledNear);
            continue;
        }
        let denom = clip[3] + params.projection.epsilon;
        let x_ndc = clip[0] / denom;
        let y_ndc = clip[1] / denom;
        let x = ((x_ndc + 1.0) / 2.0 * w as f64).floor() as i64;
        let y = ((y_ndc + 1.0) / 2.0 * h as f64).floor() as i64;
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            out.push(Verdict::CulledOffscreen);
            continue;
        }
        let z = depth.values[y as usize * w + x as usize];
        if z == 1.0 {
            out.push(Verdict::Kept);
            continue;
        }
        let (n, f) = (camera.near, camera.far);
        let linear = n * f / (f - z as f64 * (f - n));
        out.push(if view[2] > linear + params.gamma { Verdict::CulledOccluded } else { Verdict::Kept });
    }
    out
}

pub fn check_anchor_cull(
    positions: &[Vec3],
    camera: &Camera,
    fast_depth: &DepthMap,
    reference_depth: &DepthMap,
    params: &CullParams,
) -> Result<OracleCheck> {
    let anchors = crate::visibility::AnchorSet { positions: positions.to_vec() };
    let fast = cull_anchors_with(&anchors, camera, fast_depth, params)?;
    let reference = reference_cull_anchors(positions, camera, reference_depth, params);
    let mut check = OracleCheck::new("anchor_cull");
    for (i, (a, b)) in fast.verdicts.iter().zip(&reference).enumerate() {
        check.checked += 1;
        if a != b {
            check.violation(|| format!("anchor {i}: fast {a:?}, reference {b:?}"));
        }
    }
    Ok(check)
}

/// Scalar patch selection: row-major patch sums, strict `ℓ_P > 3ℓ̄`.
pub fn reference_select(error: &ErrorImage, patch_size: usize) -> Vec<bool> {
    let cols = error.width.div_ceil(patch_size);
    let rows = error.height.div_ceil(patch_size);
    let mut means = Vec::with_capacity(cols * rows);
    for py in 0..rows {
        for px in 0..cols {
            let x_end = ((px + 1) * patch_size).min(error.width);
            let y_end = ((py + 1) * patch_size).min(error.height);
            let mut sum = 0.0f64;
            for y in py * patch_size..y_end {
                for x in px * patch_size..x_end {
                    sum += error.values[y * error.width + x] as f64;
                }
            }
            means.push(sum / ((x_end - px * patch_size) * (y_end - py * patch_size)) as f64);
        }
    }
    let mut total = 0.0;
    for m in &means {
        total += m;
    }
    let tau = THRESHOLD_FACTOR * (total / means.len() as f64);
    means.iter().map(|&m| m > tau).collect()
}

/// Deterministic error image with a few hot regions.
pub fn synthetic_error_image(width: usize, height: usize, seed: u64) -> ErrorImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values: Vec<f32> = (0..width * height).map(|_| rng.random_range(0.0..0.1)).collect();
    for _ in 0..6 {
        let (cx, cy) = (rng.random_range(0..width), rng.random_range(0..height));
        let r = rng.random_range(4..24usize);
        for y in cy.saturating_sub(r)..(cy + r).min(height) {
            for x in cx.saturating_sub(r)..(cx + r).min(width) {
                values[y * width + x] += 2.0;
            }
        }
    }
    ErrorImage::new(width, height, values).expect("finite non-negative losses")
}

/// Checks patch selection against [`reference_select`], and every planned
/// anchor against scalar back-projection and re-projection into its patch.
pub fn check_densify(bundle: &SceneBundle, camera: &Camera, depth: &DepthMap, seed: u64) -> Result<OracleCheck> {
    let mut check = OracleCheck::new("densify_backprojection");
    let cfg = &bundle.config;
    if camera.width < cfg.patch_size || camera.height < cfg.patch_size {
        return Ok(OracleCheck::skipped("densify_backprojection", "image smaller than one patch".into()));
    }
    let error = synthetic_error_image(camera.width, camera.height, seed);
    let patches = select_patches(&error, cfg.patch_size)?;
    let want = reference_select(&error, cfg.patch_size);
    for (i, (a, b)) in patches.selected.iter().zip(&want).enumerate() {
        check.checked += 1;
        if a != b {
            check.violation(|| format!("patch {i}: selected {a}, reference {b}"));
        }
    }
    let mut grid = ProxyGrid::for_mesh(&bundle.mesh, cfg.cell_size, cfg.capacity)?;
    let plan = plan_anchors(&patches, depth, camera, &mut grid, 0)?;
    let k_inv = invert3(&camera.intrinsics.0).ok_or(Error::SingularIntrinsics)?;
    let r = &camera.rotation.0;
    for (p, s) in plan.positions.iter().zip(&plan.sources) {
        check.checked += 1;
        let (u, v) = (s.pixel_u as f64, s.pixel_v as f64);
        let z = depth.values[s.pixel_v as usize * depth.width + s.pixel_u as usize] as f64;
        let d = camera.near * camera.far / (camera.far - z * (camera.far - camera.near));
        let mut ray = [0.0; 3];
        for (i, out) in ray.iter_mut().enumerate() {
            *out = (k_inv[i][0] * u + k_inv[i][1] * v + k_inv[i][2]) * d;
        }
        let mut want = [0.0; 3];
        for (i, out) in want.iter_mut().enumerate() {
            // Rᵀ · ray
            *out = camera.center[i] + r[0][i] * ray[0] + r[1][i] * ray[1] + r[2][i] * ray[2];
        }
        let err = (0..3).map(|i| (p[i] - want[i]).abs()).fold(0.0, f64::max);
        let scale = 1.0 + (0..3).map(|i| want[i].abs()).fold(0.0, f64::max);
        if err > 1e-9 * scale {
            check.violation(|| {
                format!("patch ({}, {}): planned {p:?}, scalar back-projection {want:?}", s.patch_x, s.patch_y)
            });
            continue;
        }
        if !reprojects_inside(camera, *p, &patches, s.patch_x as usize, s.patch_y as usize) {
            check.violation(|| {
                format!("patch ({}, {}): anchor {p:?} re-projects outside its patch", s.patch_x, s.patch_y)
            });
        }
    }
    Ok(check)
}

fn reprojects_inside(camera: &Camera, p: Vec3, patches: &PatchGrid, px: usize, py: usize) -> bool {
    let vp = compose4(&camera.proj_matrix.0, &camera.view_matrix.0);
    let c = apply4(&vp, [p.x, p.y, p.z, 1.0]);
    if !(c[3] > 0.0) {
        return false;
    }
    let sx = (c[0] / c[3] + 1.0) / 2.0 * camera.width as f64;
    let sy = (c[1] / c[3] + 1.0) / 2.0 * camera.height as f64;
    let (x0, y0, w, h) = patches.bounds(px, py);
    sx >= x0 as f64 && sx < (x0 + w) as f64 && sy >= y0 as f64 && sy < (y0 + h) as f64
}

/// Random well-conditioned quadrics: the closed-form minimizer must match a
/// coarse-to-fine grid search within its final resolution, and cost no
/// more than the grid minimum.
pub fn check_qem_grid(trials: usize, seed: u64) -> OracleCheck {
    let mut check = OracleCheck::new("qem_grid_search");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..trials {
        let anchor = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let mut q = Quadric::zero();
        for k in 0..4 {
            // Perturbed axes keep the normals well spread.
            let mut n = [0.0; 3];
            n[k % 3] = 1.0;
            let n = Vec3::new(n[0], n[1], n[2])
                + Vec3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4));
            let n = n.normalized().expect("non-zero normal");
            let through = anchor
                + Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let plane = [n.x, n.y, n.z, -n.dot(through)];
            q.add_assign(&Quadric::from_plane(plane, rng.random_range(0.5..2.0)));
        }
        let x = optimal_collapse(&q, &Quadric::zero(), anchor, anchor).position;
        let (best, res) = grid_minimize(&q, anchor, 4.0);
        let cost = q.evaluate(x);
        let grid_cost = q.evaluate(best);
        check.checked += 1;
        let dist = (x - best).length();
        if dist > 2.0 * res || cost > grid_cost + 1e-9 * (1.0 + grid_cost.abs()) {
            check.violation(|| {
                format!("trial {trial}: closed form {x:?} (cost {cost}), grid {best:?} (cost {grid_cost}), step {res}")
            });
        }
    }
    check
}

/// Returns the best grid point and the final grid step.
fn grid_minimize(q: &Quadric, center: Vec3, half: f64) -> (Vec3, f64) {
    const N: i32 = 20;
    let mut c = center;
    let mut h = half;
    let mut step = 2.0 * h / N as f64;
    for _ in 0..6 {
        step = 2.0 * h / N as f64;
        let mut best = (f64::INFINITY, c);
        for i in 0..=N {
            for j in 0..=N {
                for k in 0..=N {
                    let p = Vec3::new(c.x - h + i as f64 * step, c.y - h + j as f64 * step, c.z - h + k as f64 * step);
                    let e = q.evaluate(p);
                    if e < best.0 {
                        best = (e, p);
                    }
                }
            }
        }
        c = best.1;
        h = 2.0 * step;
    }
    (c, step)
}

/// Perturbation applied to the depth buffer handed to the fast anchor
/// filter only, to prove the anchor oracle catches it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthFault {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub value: f32,
}

impl DepthFault {
    pub fn whole(depth: &DepthMap, value: f32) -> Self {
        Self { x0: 0, y0: 0, x1: depth.width.saturating_sub(1), y1: depth.height.saturating_sub(1), value }
    }

    fn apply(&self, depth: &mut DepthMap) {
        for y in self.y0..=self.y1.min(depth.height.saturating_sub(1)) {
            for x in self.x0..=self.x1.min(depth.width.saturating_sub(1)) {
                depth.set(x, y, self.value);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    pub seed: u64,
    pub qem_trials: usize,
    pub depth_fault: Option<DepthFault>,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { seed: 0, qem_trials: 50, depth_fault: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub camera_index: usize,
    pub passed: bool,
    pub occluded_clusters: usize,
    pub checks: Vec<OracleCheck>,
}

impl OracleReport {
    pub fn check(&self, name: &str) -> Option<&OracleCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn violations(&self) -> usize {
        self.checks.iter().map(|c| c.violations).sum()
    }
}

pub fn oracle_suite(bundle: &SceneBundle, camera_index: usize) -> Result<OracleReport> {
    oracle_suite_with(bundle, camera_index, &OracleOptions::default())
}

/// Runs one frame of the pipeline and checks each stage against its oracle.
pub fn oracle_suite_with(bundle: &SceneBundle, camera_index: usize, opts: &OracleOptions) -> Result<OracleReport> {
    let frame = run_pipeline(bundle, camera_index)?;
    let camera = &bundle.cameras[camera_index];
    let cfg = &bundle.config;
    let mut checks = Vec::new();

    let full =
        rasterize_with(&bundle.mesh, camera, None, &RasterOptions { tau_near: cfg.tau_near, ..cfg.raster_options() });
    checks.push(check_raster(&bundle.mesh, camera, &full, cfg.tau_near)?);
    checks.push(check_hiz_footprint(&frame.depth, &build_hiz(&frame.depth)));
    checks.push(check_occlusion_soundness(&bundle.mesh, &bundle.clusters, &frame.occluded, camera, cfg.tau_near)?);

    let mut fast_depth = frame.depth.clone();
    if let Some(fault) = &opts.depth_fault {
        fault.apply(&mut fast_depth);
    }
    checks.push(check_anchor_cull(&bundle.anchors.positions, camera, &fast_depth, &frame.depth, &cfg.cull_params())?);
    checks.push(check_densify(bundle, camera, &frame.depth, opts.seed ^ camera_index as u64)?);
    checks.push(check_qem_grid(opts.qem_trials, opts.seed));

    let passed = checks.iter().all(|c| c.status != CheckStatus::Fail);
    Ok(OracleReport { camera_index, passed, occluded_clusters: frame.stats.clusters_occlusion_culled, checks })
}

/// Scene shape small enough for every ray-cast check, with buildings tall
/// enough to hide one another.
pub fn small_scene_spec() -> SyntheticSpec {
    SyntheticSpec {
        extent: 100.0,
        box_count: 30,
        anchor_count: 2000,
        camera_count: 2,
        width: 128,
        height: 128,
        ground_subdivision: 4,
        min_height: 20.0,
        ..Default::default()
    }
}

/// Generated scene re-clustered into clusters of 2 to 8 triangles, so some
/// of them are small enough to be fully hidden.
pub fn oracle_scene(seed: u64, spec: &SyntheticSpec) -> Result<SceneBundle> {
    let mut bundle = generate_synthetic_scene(seed, spec)?;
    bundle.config.tau_min = 2;
    bundle.config.tau_max = 8;
    bundle.clusters = build_clusters(&bundle.mesh, 2, 8)?;
    Ok(bundle)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub seeds: Vec<u64>,
    pub reports: usize,
    pub violations: usize,
    /// Violations per check name, in suite order.
    pub per_check: Vec<(String, usize)>,
    pub skipped: usize,
    /// Clusters the Hi-Z test hid, summed over all reports.
    pub occluded_clusters: usize,
    pub passed: bool,
}

/// Runs the suite on every camera of [`oracle_scene`] per seed.
pub fn oracle_batch(seeds: &[u64], spec: &SyntheticSpec) -> Result<BatchSummary> {
    let mut per_check: Vec<(String, usize)> = Vec::new();
    let (mut reports, mut skipped, mut occluded_clusters) = (0, 0, 0);
    for &seed in seeds {
        let bundle = oracle_scene(seed, spec)?;
        for cam in 0..bundle.cameras.len() {
            let opts = OracleOptions { seed, qem_trials: 10, ..Default::default() };
            let report = oracle_suite_with(&bundle, cam, &opts)?;
            reports += 1;
            occluded_clusters += report.occluded_clusters;
            for c in &report.checks {
                skipped += (c.status == CheckStatus::Skipped) as usize;
                match per_check.iter_mut().find(|(n, _)| *n == c.name) {
                    Some(entry) => entry.1 += c.violations,
                    None => per_check.push((c.name.clone(), c.violations)),
                }
            }
        }
    }
    let violations = per_check.iter().map(|(_, v)| v).sum();
    Ok(BatchSummary {
        seeds: seeds.to_vec(),
        reports,
        violations,
        per_check,
        skipped,
        occluded_clusters,
        passed: violations == 0,
    })
}
