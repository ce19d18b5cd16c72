//! Densification planning: pick high-error patches, drop their center pixel
//! onto the proxy surface and admit the result through a capacity-limited
//! voxel grid.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{back_project, linearize_depth, Camera};
use crate::math::Vec3;
use crate::mesh::TriangleMesh;
use crate::raster::{DepthMap, BACKGROUND_DEPTH};

pub const DEFAULT_PATCH_SIZE: usize = 16;
pub const DEFAULT_CAPACITY: u32 = 4;
/// Default cell size is the proxy AABB diagonal divided by this.
pub const DEFAULT_GRID_DIVISIONS: f64 = 512.0;
pub const THRESHOLD_FACTOR: f64 = 3.0;

/// Per-pixel loss, row-major, top row first.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl ErrorImage {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "error image has {} values for {width}x{height}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "error image value at ({}, {}) is {}; losses must be finite and >= 0",
                i % width.max(1),
                i / width.max(1),
                values[i]
            )));
        }
        Ok(Self { width, height, values })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub width: usize,
    pub height: usize,
    pub cols: usize,
    pub rows: usize,
    /// Mean loss per patch, row-major.
    pub means: Vec<f64>,
    pub frame_mean: f64,
    pub threshold: f64,
    pub selected: Vec<bool>,
}

impl PatchGrid {
    /// `(x0, y0, w, h)` of patch `(px, py)`; edge patches may be smaller.
    pub fn bounds(&self, px: usize, py: usize) -> (usize, usize, usize, usize) {
        let (x0, y0) = (px * self.patch_size, py * self.patch_size);
        (x0, y0, self.patch_size.min(self.width - x0), self.patch_size.min(self.height - y0))
    }

    pub fn center(&self, px: usize, py: usize) -> (usize, usize) {
        let (x0, y0, w, h) = self.bounds(px, py);
        (x0 + w / 2, y0 + h / 2)
    }

    pub fn selected_count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }
}

pub fn select_patches(error: &ErrorImage, patch_size: usize) -> Result<PatchGrid> {
    if patch_size < 1 || error.width < patch_size || error.height < patch_size {
        return Err(Error::InvalidParameter(format!(
            "patch size {patch_size} does not fit a {}x{} image",
            error.width, error.height
        )));
    }
    let cols = error.width.div_ceil(patch_size);
    let rows = error.height.div_ceil(patch_size);
    let mut grid = PatchGrid {
        patch_size,
        width: error.width,
        height: error.height,
        cols,
        rows,
        means: Vec::new(),
        frame_mean: 0.0,
        threshold: 0.0,
        selected: Vec::new(),
    };
    grid.means = (0..cols * rows)
        .into_par_iter()
        .map(|i| {
            let (x0, y0, w, h) = grid.bounds(i % cols, i / cols);
            let mut sum = 0.0f64;
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    sum += error.get(x, y) as f64;
                }
            }
            sum / (w * h) as f64
        })
        .collect();
    grid.frame_mean = grid.means.iter().sum::<f64>() / grid.means.len() as f64;
    grid.threshold = THRESHOLD_FACTOR * grid.frame_mean;
    grid.selected = grid.means.iter().map(|&m| m > grid.threshold).collect();
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyGrid {
    pub origin: Vec3,
    pub cell_size: f64,
    pub capacity: u32,
    pub occupancy: BTreeMap<[i64; 3], u32>,
}

impl ProxyGrid {
    pub fn new(origin: Vec3, cell_size: f64, capacity: u32) -> Result<Self> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::InvalidParameter(format!("cell size must be > 0 (got {cell_size})")));
        }
        if capacity < 1 {
            return Err(Error::InvalidParameter("cell capacity must be >= 1".into()));
        }
        if !origin.is_finite() {
            return Err(Error::InvalidParameter("grid origin must be finite".into()));
        }
        Ok(Self { origin, cell_size, capacity, occupancy: BTreeMap::new() })
    }

    /// Origin at the mesh AABB minimum; `cell_size` defaults to the AABB
    /// diagonal over [`DEFAULT_GRID_DIVISIONS`].
    pub fn for_mesh(mesh: &TriangleMesh, cell_size: Option<f64>, capacity: u32) -> Result<Self> {
        let (lo, hi) = mesh.aabb().ok_or_else(|| Error::InvalidMesh("mesh has no vertices".into()))?;
        let h = cell_size.unwrap_or((hi - lo).length() / DEFAULT_GRID_DIVISIONS);
        Self::new(lo, h, capacity)
    }

    pub fn cell_of(&self, p: Vec3) -> [i64; 3] {
        let d = p - self.origin;
        [d.x, d.y, d.z].map(|c| (c / self.cell_size).floor() as i64)
    }

    pub fn count(&self, cell: [i64; 3]) -> u32 {
        self.occupancy.get(&cell).copied().unwrap_or(0)
    }

    /// Admits `p` if its cell still has room.
    pub fn insert(&mut self, p: Vec3) -> bool {
        let cell = self.cell_of(p);
        let slot = self.occupancy.entry(cell).or_insert(0);
        if *slot < self.capacity {
            *slot += 1;
            true
        } else {
            false
        }
    }
}

pub fn grid_insert(grid: &mut ProxyGrid, position: Vec3) -> bool {
    grid.insert(position)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSource {
    pub frame: u32,
    pub patch_x: u32,
    pub patch_y: u32,
    pub pixel_u: u32,
    pub pixel_v: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DensificationPlan {
    pub positions: Vec<Vec3>,
    pub sources: Vec<PlanSource>,
    /// Patches whose anchor found its grid cell full.
    pub rejected_count: usize,
    /// Patches whose center pixel saw no proxy surface.
    pub background_skipped: usize,
}

impl DensificationPlan {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn extend(&mut self, other: DensificationPlan) {
        self.positions.extend(other.positions);
        self.sources.extend(other.sources);
        self.rejected_count += other.rejected_count;
        self.background_skipped += other.background_skipped;
    }
}

/// Visits selected patches in row-major order, so admission under a full
/// cell is deterministic.
pub fn plan_anchors(
    patches: &PatchGrid,
    depth: &DepthMap,
    camera: &Camera,
    grid: &mut ProxyGrid,
    frame: u32,
) -> Result<DensificationPlan> {
    for (what, w, h) in [("depth map", depth.width, depth.height), ("error image", patches.width, patches.height)] {
        if w != camera.width || h != camera.height {
            return Err(Error::DimensionMismatch {
                what,
                want_w: camera.width,
                want_h: camera.height,
                got_w: w,
                got_h: h,
            });
        }
    }
    let mut plan = DensificationPlan::default();
    for py in 0..patches.rows {
        for px in 0..patches.cols {
            if !patches.selected[py * patches.cols + px] {
                continue;
            }
            let (u, v) = patches.center(px, py);
            let z_hw = depth.get(u, v);
            if z_hw == BACKGROUND_DEPTH {
                plan.background_skipped += 1;
                continue;
            }
            let d = linearize_depth(z_hw as f64, camera.near, camera.far)?;
            let p = back_project(camera, u as i64, v as i64, d)?;
            if grid.insert(p) {
                plan.positions.push(p);
                plan.sources.push(PlanSource {
                    frame,
                    patch_x: px as u32,
                    patch_y: py as u32,
                    pixel_u: u as u32,
                    pixel_v: v as u32,
                });
            } else {
                plan.rejected_count += 1;
            }
        }
    }
    Ok(plan)
}
