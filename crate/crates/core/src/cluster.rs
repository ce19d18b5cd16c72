//! Bounded-size triangle clusters and their per-view culling data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::math::{Mat4, Vec3};
use crate::mesh::TriangleMesh;

pub const DEFAULT_TAU_MIN: usize = 32;
pub const DEFAULT_TAU_MAX: usize = 128;
pub const DEFAULT_PADDING: i64 = 1;
pub const DEFAULT_LEVEL_BIAS: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub triangle_indices: Vec<u32>,
    pub aabb_min: Vec3,
    pub aabb_max: Vec3,
}

impl Cluster {
    pub fn from_faces(mesh: &TriangleMesh, triangle_indices: Vec<u32>) -> Self {
        let mut lo = Vec3::splat(f64::INFINITY);
        let mut hi = Vec3::splat(f64::NEG_INFINITY);
        for &f in &triangle_indices {
            for p in mesh.face_positions(f as usize) {
                lo = lo.min(p);
                hi = hi.max(p);
            }
        }
        Self { triangle_indices, aabb_min: lo, aabb_max: hi }
    }

    pub fn len(&self) -> usize {
        self.triangle_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangle_indices.is_empty()
    }

    /// The eight AABB corners, x varying fastest.
    pub fn corners(&self) -> [Vec3; 8] {
        let (lo, hi) = (self.aabb_min, self.aabb_max);
        std::array::from_fn(|i| {
            Vec3::new(
                if i & 1 == 0 { lo.x } else { hi.x },
                if i & 2 == 0 { lo.y } else { hi.y },
                if i & 4 == 0 { lo.z } else { hi.z },
            )
        })
    }
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenRect {
    pub x_min: i64,
    pub y_min: i64,
    pub x_max: i64,
    pub y_max: i64,
    pub empty: bool,
}

impl ScreenRect {
    pub const EMPTY: ScreenRect = ScreenRect { x_min: 0, y_min: 0, x_max: -1, y_max: -1, empty: true };

    pub fn full(width: usize, height: usize) -> Self {
        Self { x_min: 0, y_min: 0, x_max: width as i64 - 1, y_max: height as i64 - 1, empty: false }
    }

    pub fn width(&self) -> i64 {
        self.x_max - self.x_min + 1
    }

    pub fn height(&self) -> i64 {
        self.y_max - self.y_min + 1
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        !self.empty && x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

/// Inclusive texel rectangle at one pyramid level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelRect {
    pub level: u32,
    pub x_min: i64,
    pub y_min: i64,
    pub x_max: i64,
    pub y_max: i64,
}

fn morton_spread(v: u64) -> u64 {
    let mut x = v & 0x1f_ffff;
    x = (x | (x << 32)) & 0x1f00000000ffff;
    x = (x | (x << 16)) & 0x1f0000ff0000ff;
    x = (x | (x << 8)) & 0x100f00f00f00f00f;
    x = (x | (x << 4)) & 0x10c30c30c30c30c3;
    x = (x | (x << 2)) & 0x1249249249249249;
    x
}

/// 63-bit Morton code of `p` quantized to 21 bits per axis inside `[lo, hi]`.
pub fn morton_code(p: Vec3, lo: Vec3, hi: Vec3) -> u64 {
    let q = |v: f64, a: f64, b: f64| -> u64 {
        let span = b - a;
        let t = if span > 0.0 { ((v - a) / span).clamp(0.0, 1.0) } else { 0.0 };
        (t * ((1u64 << 21) - 1) as f64) as u64
    };
    morton_spread(q(p.x, lo.x, hi.x))
        | (morton_spread(q(p.y, lo.y, hi.y)) << 1)
        | (morton_spread(q(p.z, lo.z, hi.z)) << 2)
}

/// Sorts faces by the Morton code of their centroids and cuts the order into
/// runs of `tau_max`. A short tail is rebalanced with the previous run when
/// both halves can then satisfy `tau_min`.
pub fn build_clusters(mesh: &TriangleMesh, tau_min: usize, tau_max: usize) -> Result<Vec<Cluster>> {
    if tau_min < 1 || tau_min > tau_max {
        return Err(Error::InvalidParameter(format!(
            "cluster bounds must satisfy 1 <= tau_min <= tau_max (got {tau_min}, {tau_max})"
        )));
    }
    let Some((lo, hi)) = mesh.aabb() else { return Ok(Vec::new()) };
    let mut keyed: Vec<(u64, u32)> = (0..mesh.face_count())
        .map(|f| {
            let [a, b, c] = mesh.face_positions(f);
            let centroid = (a + b + c) * (1.0 / 3.0);
            (morton_code(centroid, lo, hi), f as u32)
        })
        .collect();
    keyed.sort_unstable();
    let order: Vec<u32> = keyed.into_iter().map(|(_, f)| f).collect();

    let mut sizes: Vec<usize> = order.chunks(tau_max).map(<[u32]>::len).collect();
    if sizes.len() >= 2 {
        let last = *sizes.last().unwrap();
        let merged = tau_max + last;
        if last < tau_min && merged / 2 >= tau_min {
            let n = sizes.len();
            sizes[n - 2] = merged - merged / 2;
            sizes[n - 1] = merged / 2;
        }
    }
    let mut clusters = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for len in sizes {
        clusters.push(Cluster::from_faces(mesh, order[start..start + len].to_vec()));
        start += len;
    }
    Ok(clusters)
}

/// Clip-space images `P·V·[x; 1]` of the eight AABB corners.
pub fn clip_corners(cluster: &Cluster, view_proj: &Mat4) -> [[f64; 4]; 8] {
    cluster.corners().map(|c| view_proj.mul_point(c))
}

pub fn screen_rect(cluster: &Cluster, camera: &Camera, padding: i64) -> ScreenRect {
    screen_rect_from_clip(&clip_corners(cluster, &camera.view_proj()), camera.width, camera.height, padding)
}

/// Outward-rounded, padded bounds of the projected corners clipped to the
/// viewport. Boxes reaching behind the camera cover the whole screen; boxes
/// entirely behind it are empty.
pub fn screen_rect_from_clip(clip: &[[f64; 4]; 8], width: usize, height: usize, padding: i64) -> ScreenRect {
    let behind = clip.iter().filter(|c| c[3] <= 0.0).count();
    if behind == 8 {
        return ScreenRect::EMPTY;
    }
    if behind > 0 {
        return ScreenRect::full(width, height);
    }
    let (w, h) = (width as f64, height as f64);
    let (mut sx_min, mut sy_min) = (f64::INFINITY, f64::INFINITY);
    let (mut sx_max, mut sy_max) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for c in clip {
        let sx = w / 2.0 * (c[0] / c[3] + 1.0);
        let sy = h / 2.0 * (c[1] / c[3] + 1.0);
        sx_min = sx_min.min(sx);
        sx_max = sx_max.max(sx);
        sy_min = sy_min.min(sy);
        sy_max = sy_max.max(sy);
    }
    let to_i = |v: f64| v.clamp(-1e15, 1e15) as i64;
    let (x0, x1) = (to_i(sx_min.floor()), to_i(sx_max.ceil()));
    let (y0, y1) = (to_i(sy_min.floor()), to_i(sy_max.ceil()));
    let (wi, hi) = (width as i64, height as i64);
    if x0 > wi - 1 || x1 < 0 || y0 > hi - 1 || y1 < 0 {
        return ScreenRect::EMPTY;
    }
    ScreenRect {
        x_min: (x0 - padding).max(0),
        y_min: (y0 - padding).max(0),
        x_max: (x1 + padding).min(wi - 1),
        y_max: (y1 + padding).min(hi - 1),
        empty: false,
    }
}

/// Picks a pyramid level from the rectangle's larger side and snaps the
/// rectangle outward to that level's texels.
pub fn snap_level(rect: &ScreenRect, bias: u32, max_level: u32) -> LevelRect {
    debug_assert!(!rect.empty);
    let side = rect.width().max(rect.height()).max(1) as u64;
    let log2 = 63 - side.leading_zeros() as i64;
    let level = (log2 - bias as i64).clamp(0, max_level as i64) as u32;
    let scale = 1i64 << level;
    LevelRect {
        level,
        x_min: rect.x_min.div_euclid(scale),
        y_min: rect.y_min.div_euclid(scale),
        x_max: (rect.x_max + scale - 1).div_euclid(scale),
        y_max: (rect.y_max + scale - 1).div_euclid(scale),
    }
}

pub fn conservative_depth(cluster: &Cluster, camera: &Camera) -> Option<f64> {
    conservative_depth_from_clip(&clip_corners(cluster, &camera.view_proj()))
}

/// Smallest corner NDC depth, clamped below by the near plane (depth 0).
/// `None` ("skip the occlusion test") when any corner is behind the camera or
/// in front of the near plane.
pub fn conservative_depth_from_clip(clip: &[[f64; 4]; 8]) -> Option<f64> {
    const Z_NDC_NEAR: f64 = 0.0;
    let mut best = f64::INFINITY;
    for c in clip {
        if c[3] <= 0.0 {
            return None;
        }
        let z = c[2] / c[3];
        if z < Z_NDC_NEAR {
            return None;
        }
        best = best.min(z.max(Z_NDC_NEAR));
    }
    Some(best)
}
