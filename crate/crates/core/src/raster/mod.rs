//! Software depth-only rasterizer.
//!
//! Output follows the hardware convention: NDC depth in `[0, 1]`, 0 on the
//! near plane, 1.0 where nothing was drawn. Samples sit at pixel centers,
//! ties on shared edges go to exactly one triangle (top-left rule), and
//! triangles crossing `w = τ_near` are clipped in clip space first. The
//! screen is split into square tiles that own their pixels exclusively, so
//! the result does not depend on the worker count.

pub mod hiz;

use std::cell::RefCell;

use rayon::prelude::*;

use crate::cluster::Cluster;
use crate::geometry::{Camera, DEFAULT_TAU_NEAR};
use crate::math::{ceil_to_i64, floor_to_i64};
use crate::mesh::TriangleMesh;

pub use hiz::{build_hiz, rect_max, HiZPyramid};

pub const DEFAULT_TILE_SIZE: usize = 64;
pub const BACKGROUND_DEPTH: f32 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first.
    pub values: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, values: vec![BACKGROUND_DEPTH; width * height] }
    }

    pub fn from_values(width: usize, height: usize, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), width * height, "depth buffer size mismatch");
        Self { width, height, values }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.values[y * self.width + x] = v;
    }

    pub fn covered_pixels(&self) -> usize {
        self.values.iter().filter(|&&v| v != BACKGROUND_DEPTH).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterOptions {
    pub tile_size: usize,
    pub tau_near: f64,
    /// Skip triangles that lie entirely behind everything already in a tile.
    pub early_z: bool,
}

impl Default for RasterOptions {
    fn default() -> Self {
        Self { tile_size: DEFAULT_TILE_SIZE, tau_near: DEFAULT_TAU_NEAR, early_z: true }
    }
}

/// Renders every face of `mesh`, or only `faces` when given.
pub fn rasterize_depth(mesh: &TriangleMesh, camera: &Camera, faces: Option<&[u32]>) -> DepthMap {
    rasterize_with(mesh, camera, faces, &RasterOptions::default())
}

/// Renders the clusters whose `visible` flag is set (all when `None`).
pub fn rasterize_clusters(
    mesh: &TriangleMesh,
    clusters: &[Cluster],
    camera: &Camera,
    visible: Option<&[bool]>,
) -> DepthMap {
    let faces: Vec<u32> = clusters
        .iter()
        .enumerate()
        .filter(|(i, _)| visible.is_none_or(|v| v[*i]))
        .flat_map(|(_, c)| c.triangle_indices.iter().copied())
        .collect();
    rasterize_depth(mesh, camera, Some(&faces))
}

pub fn rasterize_with(mesh: &TriangleMesh, camera: &Camera, faces: Option<&[u32]>, opts: &RasterOptions) -> DepthMap {
    SCRATCH.with(|cell| match cell.try_borrow_mut() {
        Ok(mut scratch) => rasterize_into(mesh, camera, faces, opts, &mut scratch),
        // Re-entered from a job stolen while this thread waits on a join.
        Err(_) => rasterize_into(mesh, camera, faces, opts, &mut Scratch::default()),
    })
}

/// Per-frame working buffers, kept per thread so repeated frames do not
/// page-fault fresh multi-megabyte allocations.
#[derive(Default)]
struct Scratch {
    verts: Vec<ClipVertex>,
    tris: Vec<ScreenTri>,
    starts: Vec<u32>,
    fill: Vec<u32>,
    ids: Vec<u32>,
}

thread_local! {
    static SCRATCH: RefCell<Scratch> = RefCell::default();
}

fn rasterize_into(
    mesh: &TriangleMesh,
    camera: &Camera,
    faces: Option<&[u32]>,
    opts: &RasterOptions,
    scratch: &mut Scratch,
) -> DepthMap {
    let (w, h) = (camera.width, camera.height);
    let tile = opts.tile_size.max(1);
    let tiles_x = w.div_ceil(tile);
    let tiles_y = h.div_ceil(tile);
    let (wf, hf) = (w as f64, h as f64);
    let Scratch { verts, tris, starts, fill, ids } = scratch;

    let view_proj = camera.view_proj();
    verts.clear();
    verts.par_extend(mesh.vertices.par_iter().with_min_len(4096).map(|&p| {
        let clip = view_proj.mul_point(p);
        ClipVertex { clip, screen: to_screen(clip, wf, hf) }
    }));

    let verts = &*verts;
    let setup = |f: u32, out: &mut Vec<ScreenTri>| {
        let [a, b, c] = mesh.faces[f as usize];
        setup_face([&verts[a as usize], &verts[b as usize], &verts[c as usize]], wf, hf, opts.tau_near, out);
    };
    let setup_chunk = |chunk: &[u32]| {
        let mut out = Vec::with_capacity(chunk.len() + chunk.len() / 4);
        chunk.iter().for_each(|&f| setup(f, &mut out));
        out
    };
    tris.clear();
    match faces {
        Some(list) => tris.par_extend(list.par_chunks(4096).flat_map_iter(setup_chunk)),
        None => {
            let all: Vec<u32> = (0..mesh.face_count() as u32).collect();
            tris.par_extend(all.par_chunks(4096).flat_map_iter(setup_chunk))
        }
    }

    // Counting sort of triangle ids into tiles, in submission order.
    let tile_span = |t: &ScreenTri| {
        let [x0, y0, x1, y1] = t.bbox;
        (x0 as usize / tile..x1 as usize / tile + 1, y0 as usize / tile..y1 as usize / tile + 1)
    };
    starts.clear();
    starts.resize(tiles_x * tiles_y + 1, 0);
    for t in tris.iter() {
        let (xs, ys) = tile_span(t);
        for ty in ys {
            for tx in xs.clone() {
                starts[ty * tiles_x + tx + 1] += 1;
            }
        }
    }
    for i in 1..starts.len() {
        starts[i] += starts[i - 1];
    }
    fill.clear();
    fill.extend_from_slice(starts);
    ids.clear();
    ids.resize(*starts.last().unwrap() as usize, 0);
    for (i, t) in tris.iter().enumerate() {
        let (xs, ys) = tile_span(t);
        for ty in ys {
            for tx in xs.clone() {
                let slot = &mut fill[ty * tiles_x + tx];
                ids[*slot as usize] = i as u32;
                *slot += 1;
            }
        }
    }

    let (tris, starts, ids) = (&*tris, &*starts, &*ids);
    let mut depth = DepthMap::new(w, h);
    depth.values.par_chunks_mut(w * tile).enumerate().for_each(|(ty, rows)| {
        let rows_here = rows.len() / w;
        let mut buf = vec![BACKGROUND_DEPTH; tile * tile];
        for tx in 0..tiles_x {
            let k = ty * tiles_x + tx;
            let bin = &ids[starts[k] as usize..starts[k + 1] as usize];
            if bin.is_empty() {
                continue;
            }
            let rect = TileRect {
                x0: (tx * tile) as i32,
                y0: (ty * tile) as i32,
                x1: ((tx + 1) * tile).min(w) as i32 - 1,
                y1: (ty * tile + rows_here) as i32 - 1,
            };
            buf.fill(BACKGROUND_DEPTH);
            raster_tile(tris, bin, &rect, tile, &mut buf, opts.early_z);
            let cols = (rect.x1 - rect.x0 + 1) as usize;
            for r in 0..rows_here {
                let dst = &mut rows[r * w + rect.x0 as usize..r * w + rect.x0 as usize + cols];
                dst.copy_from_slice(&buf[r * tile..r * tile + cols]);
            }
        }
    });
    depth
}

#[derive(Debug, Clone, Copy)]
struct ClipVertex {
    clip: [f64; 4],
    /// Pixel x, pixel y and NDC depth; meaningless unless `w > τ_near`.
    screen: [f64; 3],
}

/// Every screen-space vertex goes through here, so faces sharing a vertex
/// (original or clipped) see identical coordinates.
#[inline]
fn to_screen(c: [f64; 4], w: f64, h: f64) -> [f64; 3] {
    [(c[0] / c[3] + 1.0) / 2.0 * w, (c[1] / c[3] + 1.0) / 2.0 * h, c[2] / c[3]]
}

// Plain comparisons; none of the rasterizer's values can be NaN.
#[inline(always)]
fn fmin(a: f64, b: f64) -> f64 {
    if b < a {
        b
    } else {
        a
    }
}

#[inline(always)]
fn fmax(a: f64, b: f64) -> f64 {
    if b > a {
        b
    } else {
        a
    }
}

/// Smallest positive `f64`, so `e > -TINY` is `e >= 0` in one compare.
const TINY: f64 = 5e-324;

#[derive(Debug, Clone, Copy)]
struct Edge {
    /// Canonically ordered endpoint `a`.
    ax: f64,
    ay: f64,
    /// `b - a`, negated when the edge runs from `b` to `a`, so the edge
    /// function keeps its orientation while rounding only depends on the
    /// unordered endpoint pair.
    dx: f64,
    dy: f64,
    /// A pixel is inside iff the edge function exceeds this.
    bias: f64,
}

impl Edge {
    fn new(from: [f64; 3], to: [f64; 3]) -> Self {
        let forward = (from[0], from[1]) < (to[0], to[1]);
        let (a, b) = if forward { (from, to) } else { (to, from) };
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let (dir_x, dir_y) = (to[0] - from[0], to[1] - from[1]);
        // y grows downward: left edges point up, top edges point right.
        let include_zero = dir_y < 0.0 || (dir_y == 0.0 && dir_x > 0.0);
        Self {
            ax: a[0],
            ay: a[1],
            dx: if forward { dx } else { -dx },
            dy: if forward { dy } else { -dy },
            bias: if include_zero { -TINY } else { 0.0 },
        }
    }

    #[inline(always)]
    fn row_term(&self, py: f64) -> f64 {
        self.dx * (py - self.ay)
    }

    #[inline(always)]
    fn eval(&self, row_term: f64, px: f64) -> f64 {
        row_term - self.dy * (px - self.ax)
    }

    #[inline(always)]
    fn inside_at(&self, row_term: f64, x: i32) -> bool {
        self.eval(row_term, x as f64 + 0.5) > self.bias
    }

    /// Narrows `[lo, hi]` to the pixels of this row inside the edge. Each
    /// rounding step of `eval` is monotone in x, so the inside set is a
    /// half-line; the division only seeds the search and every decision is
    /// made by the exact predicate.
    #[inline]
    fn clip_span(&self, row_term: f64, lo: &mut i32, hi: &mut i32) {
        if self.dy == 0.0 {
            if !self.inside_at(row_term, *lo) {
                *hi = *lo - 1;
            }
            return;
        }
        let seed = self.ax + row_term / self.dy - 0.5;
        let x = ceil_to_i64(fmin(fmax(seed, *lo as f64 - 1.0), *hi as f64 + 1.0)) as i32;
        if self.dy < 0.0 {
            // Inside from some x onward: find the first inside pixel.
            let mut x = x.clamp(*lo, *hi + 1);
            while x > *lo && self.inside_at(row_term, x - 1) {
                x -= 1;
            }
            while x <= *hi && !self.inside_at(row_term, x) {
                x += 1;
            }
            *lo = x;
        } else {
            // Inside up to some x: find the last inside pixel.
            let mut x = x.clamp(*lo - 1, *hi);
            while x < *hi && self.inside_at(row_term, x + 1) {
                x += 1;
            }
            while x >= *lo && !self.inside_at(row_term, x) {
                x -= 1;
            }
            *hi = x;
        }
    }

    /// Largest possible rounding error of `eval` for pixel centers with
    /// coordinates below `max_x`, `max_y` (both non-negative).
    #[inline]
    fn error_bound(&self, max_x: f64, max_y: f64) -> f64 {
        EDGE_ERROR * (self.dx.abs() * (max_y + self.ay.abs()) + self.dy.abs() * (max_x + self.ax.abs()))
    }
}

#[derive(Debug, Clone, Copy)]
struct ScreenTri {
    /// Edges opposite vertex 0, 1, 2.
    edges: [Edge; 3],
    /// Depth plane `z = z0 + gx (x - x0) + gy (y - y0)` through vertex 0,
    /// in unclamped NDC depth so near-clipped triangles keep their slope.
    plane: [f64; 5],
    /// Vertex depth range clamped to `[0, 1]`; per-pixel depth is clamped to
    /// it, which also keeps it in the hardware range.
    z_min: f64,
    z_max: f64,
    /// Inclusive pixel bounds `[x0, y0, x1, y1]` of candidate pixel centers.
    bbox: [i32; 4],
}

struct TileRect {
    x0: i32,
    y0: i32,
    x1: i32,
    y1: i32,
}

/// Clips against `w = tau_near` and converts to screen space; a face yields
/// at most two triangles.
fn setup_face(v: [&ClipVertex; 3], width: f64, height: f64, tau_near: f64, out: &mut Vec<ScreenTri>) {
    let inside = v.map(|c| c.clip[3] > tau_near);
    match inside.iter().filter(|&&b| b).count() {
        0 => {}
        3 => out.extend(screen_tri([v[0].screen, v[1].screen, v[2].screen], width, height)),
        _ => {
            let mut poly = [[0.0; 3]; 4];
            let mut n = 0;
            for i in 0..3 {
                let j = (i + 1) % 3;
                if inside[i] {
                    poly[n] = v[i].screen;
                    n += 1;
                }
                if inside[i] != inside[j] {
                    // Interpolate from the inside endpoint so both faces sharing
                    // this edge produce the same vertex.
                    let (pin, pout) = if inside[i] { (v[i].clip, v[j].clip) } else { (v[j].clip, v[i].clip) };
                    let t = (tau_near - pin[3]) / (pout[3] - pin[3]);
                    poly[n] = to_screen(std::array::from_fn(|k| pin[k] + (pout[k] - pin[k]) * t), width, height);
                    n += 1;
                }
            }
            out.extend(screen_tri([poly[0], poly[1], poly[2]], width, height));
            if n == 4 {
                out.extend(screen_tri([poly[0], poly[2], poly[3]], width, height));
            }
        }
    }
}

fn screen_tri(s: [[f64; 3]; 3], w: f64, h: f64) -> Option<ScreenTri> {
    let min_x = fmin(fmin(s[0][0], s[1][0]), s[2][0]);
    let max_x = fmax(fmax(s[0][0], s[1][0]), s[2][0]);
    let min_y = fmin(fmin(s[0][1], s[1][1]), s[2][1]);
    let max_y = fmax(fmax(s[0][1], s[1][1]), s[2][1]);
    // Clamp before converting so far-off coordinates stay in integer range.
    let x0 = ceil_to_i64(fmin(fmax(min_x - 0.5, -1.0), w)).max(0);
    let x1 = floor_to_i64(fmin(fmax(max_x - 0.5, -1.0), w)).min(w as i64 - 1);
    let y0 = ceil_to_i64(fmin(fmax(min_y - 0.5, -1.0), h)).max(0);
    let y1 = floor_to_i64(fmin(fmax(max_y - 0.5, -1.0), h)).min(h as i64 - 1);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    let area = (s[1][0] - s[0][0]) * (s[2][1] - s[0][1]) - (s[1][1] - s[0][1]) * (s[2][0] - s[0][0]);
    if !(area.abs() > 0.0) || !area.is_finite() {
        return None;
    }
    let s = if area > 0.0 { s } else { [s[0], s[2], s[1]] };
    let area = area.abs();
    let (dx1, dy1, dz1) = (s[1][0] - s[0][0], s[1][1] - s[0][1], s[1][2] - s[0][2]);
    let (dx2, dy2, dz2) = (s[2][0] - s[0][0], s[2][1] - s[0][1], s[2][2] - s[0][2]);
    let gx = (dz1 * dy2 - dz2 * dy1) / area;
    let gy = (dz2 * dx1 - dz1 * dx2) / area;
    Some(ScreenTri {
        edges: [Edge::new(s[1], s[2]), Edge::new(s[2], s[0]), Edge::new(s[0], s[1])],
        plane: [s[0][2], s[0][0], s[0][1], gx, gy],
        z_min: fmin(fmax(fmin(fmin(s[0][2], s[1][2]), s[2][2]), 0.0), 1.0),
        z_max: fmin(fmax(fmax(fmax(s[0][2], s[1][2]), s[2][2]), 0.0), 1.0),
        bbox: [x0 as i32, y0 as i32, x1 as i32, y1 as i32],
    })
}

/// Smallest `f32` not below `v`, for `v` in `[0, 1]`, so stored depth never
/// sits in front of the surface it came from.
#[inline]
pub fn store_depth(v: f64) -> f32 {
    let f = v as f32;
    f32::from_bits(f.to_bits() + ((f as f64) < v) as u32)
}

const EARLY_Z_REFRESH: usize = 64;
/// Rows narrower than this are tested pixel by pixel instead of by span.
const NARROW: i32 = 4;
/// Rectangles with at most this many pixels skip the edge classification.
const SMALL_RECT: i32 = 6;
/// Relative bound on the rounding error of one edge-function evaluation,
/// with generous slack.
const EDGE_ERROR: f64 = 1e-13;

/// Returns `None` when some edge rejects every pixel of the inclusive
/// rectangle, else a mask of the edges that may reject some of them. Edges
/// are only settled when the margin exceeds the evaluation error, so the
/// outcome equals testing every pixel.
fn classify_rect(t: &ScreenTri, xa: i32, ya: i32, xb: i32, yb: i32) -> Option<u8> {
    let (px0, px1) = (xa as f64 + 0.5, xb as f64 + 0.5);
    let (py0, py1) = (ya as f64 + 0.5, yb as f64 + 0.5);
    let mut pending = 0u8;
    for (i, e) in t.edges.iter().enumerate() {
        let (r0, r1) = (e.row_term(py0), e.row_term(py1));
        let c = [e.eval(r0, px0), e.eval(r0, px1), e.eval(r1, px0), e.eval(r1, px1)];
        let lo = fmin(fmin(c[0], c[1]), fmin(c[2], c[3]));
        let hi = fmax(fmax(c[0], c[1]), fmax(c[2], c[3]));
        let margin = 2.0 * e.error_bound(px1, py1);
        if hi < -margin {
            return None;
        }
        if !(lo > margin) {
            pending |= 1 << i;
        }
    }
    Some(pending)
}

#[inline(always)]
fn depth_at(t: &ScreenTri, row_base: f64, px: f64) -> f32 {
    store_depth(fmin(fmax(row_base + t.plane[3] * (px - t.plane[1]), t.z_min), t.z_max))
}

#[inline(always)]
fn keep_min(cell: &mut f32, d: f32) {
    if d < *cell {
        *cell = d;
    }
}

fn raster_tile(tris: &[ScreenTri], bin: &[u32], rect: &TileRect, stride: usize, buf: &mut [f32], early_z: bool) {
    let mut tile_max = BACKGROUND_DEPTH as f64;
    for (n, &ti) in bin.iter().enumerate() {
        if early_z && n > 0 && n % EARLY_Z_REFRESH == 0 {
            let rows = (rect.y1 - rect.y0 + 1) as usize;
            let cols = (rect.x1 - rect.x0 + 1) as usize;
            tile_max = (0..rows).flat_map(|r| buf[r * stride..r * stride + cols].iter()).fold(0.0f32, |m, &v| {
                if v > m {
                    v
                } else {
                    m
                }
            }) as f64;
        }
        let t = &tris[ti as usize];
        if early_z && t.z_min > tile_max {
            continue;
        }
        let x0 = t.bbox[0].max(rect.x0);
        let x1 = t.bbox[2].min(rect.x1);
        let y0 = t.bbox[1].max(rect.y0);
        let y1 = t.bbox[3].min(rect.y1);
        let pending = if (x1 - x0 + 1) * (y1 - y0 + 1) <= SMALL_RECT {
            7
        } else {
            match classify_rect(t, x0, y0, x1, y1) {
                Some(p) => p,
                None => continue,
            }
        };
        let mut edges = [&t.edges[0]; 3];
        let mut n_edges = 0;
        for (i, e) in t.edges.iter().enumerate() {
            if pending & (1 << i) != 0 {
                edges[n_edges] = e;
                n_edges += 1;
            }
        }
        let edges = &edges[..n_edges];
        for y in y0..y1 + 1 {
            let py = y as f64 + 0.5;
            let row_base = t.plane[0] + t.plane[4] * (py - t.plane[2]);
            let row = &mut buf[(y - rect.y0) as usize * stride..];
            if x1 - x0 < NARROW {
                let mut r = [0.0; 3];
                for (r, e) in r.iter_mut().zip(edges) {
                    *r = e.row_term(py);
                }
                for x in x0..x1 + 1 {
                    if edges.iter().zip(&r).all(|(e, &r)| e.inside_at(r, x)) {
                        keep_min(&mut row[(x - rect.x0) as usize], depth_at(t, row_base, x as f64 + 0.5));
                    }
                }
                continue;
            }
            let (mut lo, mut hi) = (x0, x1);
            for e in edges {
                e.clip_span(e.row_term(py), &mut lo, &mut hi);
            }
            if lo > hi {
                continue;
            }
            // Pixel centers are small half-integers, so stepping by one is exact.
            let mut px = lo as f64 + 0.5;
            for c in &mut row[(lo - rect.x0) as usize..(hi - rect.x0) as usize + 1] {
                keep_min(c, depth_at(t, row_base, px));
                px += 1.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{Mat3, Mat4, Vec3};

    /// Identity view and projection, so world xy is NDC and z is depth.
    fn ndc_camera(w: usize, h: usize) -> Camera {
        Camera::new(Mat4::IDENTITY, Mat4::IDENTITY, Mat3::IDENTITY, Vec3::ZERO, Mat3::IDENTITY, 1.0, 100.0, w, h)
            .unwrap()
    }

    fn cover(z: f64) -> [Vec3; 3] {
        [Vec3::new(-1.0, -1.0, z), Vec3::new(3.0, -1.0, z), Vec3::new(-1.0, 3.0, z)]
    }

    fn mesh_of(tris: &[[Vec3; 3]]) -> TriangleMesh {
        let vertices = tris.iter().flatten().copied().collect();
        let faces = (0..tris.len() as u32).map(|i| [3 * i, 3 * i + 1, 3 * i + 2]).collect();
        TriangleMesh::new(vertices, faces).unwrap()
    }

    #[test]
    fn constant_cover() {
        let d = rasterize_depth(&mesh_of(&[cover(0.25)]), &ndc_camera(37, 23), None);
        assert!(d.values.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn keep_minimum_any_order() {
        let cam = ndc_camera(70, 70);
        let a = rasterize_depth(&mesh_of(&[cover(0.25), cover(0.75)]), &cam, None);
        let b = rasterize_depth(&mesh_of(&[cover(0.75), cover(0.25)]), &cam, None);
        assert!(a.values.iter().all(|&v| v == 0.25));
        assert_eq!(a, b);
    }

    #[test]
    fn quad_split_is_watertight() {
        let cam = ndc_camera(64, 64);
        // Diagonal passes exactly through pixel centers.
        let (a, b, c, d) = (
            Vec3::new(-0.5, -0.5, 0.5),
            Vec3::new(0.5, -0.5, 0.5),
            Vec3::new(0.5, 0.5, 0.5),
            Vec3::new(-0.5, 0.5, 0.5),
        );
        for (t1, t2) in [([a, b, c], [a, c, d]), ([a, c, b], [a, d, c]), ([b, c, d], [b, d, a])] {
            let m1 = mesh_of(&[t1]);
            let m2 = mesh_of(&[t2]);
            let d1 = rasterize_depth(&m1, &cam, None);
            let d2 = rasterize_depth(&m2, &cam, None);
            let both = rasterize_depth(&mesh_of(&[t1, t2]), &cam, None);
            let overlap = d1.values.iter().zip(&d2.values).filter(|(x, y)| **x < 1.0 && **y < 1.0).count();
            assert_eq!(overlap, 0);
            assert_eq!(both.covered_pixels(), d1.covered_pixels() + d2.covered_pixels());
            // [-0.5, 0.5] in NDC is pixels 16..48 → 32x32 pixel centers.
            assert_eq!(both.covered_pixels(), 32 * 32);
        }
    }

    #[test]
    fn near_clipped_triangle_covers_expected_half() {
        let cam =
            Camera::look_at(Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, -1.0, 0.0), 90.0, 1.0, 100.0, 32, 32)
                .unwrap();
        // Floor plane y = 1 extending behind the camera.
        let m = mesh_of(&[[Vec3::new(-50.0, 1.0, -50.0), Vec3::new(50.0, 1.0, -50.0), Vec3::new(0.0, 1.0, 50.0)]]);
        let d = rasterize_depth(&m, &cam, None);
        for y in 0..32 {
            for x in 0..32 {
                let v = d.get(x, y);
                if y < 16 {
                    assert_eq!(v, 1.0, "above horizon at ({x},{y})");
                }
                assert!((0.0..=1.0).contains(&v));
            }
        }
        assert!(d.covered_pixels() > 0);
    }

    #[test]
    fn tile_size_and_early_z_do_not_change_output() {
        let cam = ndc_camera(150, 97);
        let mut tris = Vec::new();
        for i in 0..40 {
            let t = i as f64 / 40.0;
            tris.push([
                Vec3::new(-1.0 + t, -0.9, 0.9 - t * 0.5),
                Vec3::new(0.8, -0.5 + t, 0.2 + t * 0.3),
                Vec3::new(-0.3, 0.9 - t, 0.5),
            ]);
        }
        tris.push(cover(0.05));
        let m = mesh_of(&tris);
        let base = rasterize_with(&m, &cam, None, &RasterOptions { early_z: false, ..Default::default() });
        for tile in [1, 7, 16, 64, 200] {
            for early_z in [false, true] {
                let d =
                    rasterize_with(&m, &cam, None, &RasterOptions { tile_size: tile, early_z, ..Default::default() });
                assert_eq!(d, base, "tile {tile} early_z {early_z}");
            }
        }
    }

    #[test]
    fn reused_buffers_match_fresh_ones() {
        let small = mesh_of(&[[Vec3::new(-0.9, -0.8, 0.3), Vec3::new(0.7, -0.2, 0.6), Vec3::new(0.1, 0.9, 0.4)]]);
        let big = mesh_of(&[
            cover(0.5),
            cover(0.2),
            [Vec3::new(-1.0, 0.0, 0.1), Vec3::new(1.0, 0.0, 0.1), Vec3::new(0.0, 1.0, 0.1)],
        ]);
        let (cam_a, cam_b) = (ndc_camera(90, 40), ndc_camera(33, 129));
        let opts = RasterOptions::default();
        let first = rasterize_into(&small, &cam_a, None, &opts, &mut Scratch::default());
        let other = rasterize_into(&big, &cam_b, Some(&[2, 0]), &opts, &mut Scratch::default());
        for _ in 0..3 {
            assert_eq!(rasterize_with(&big, &cam_b, Some(&[2, 0]), &opts), other);
            assert_eq!(rasterize_with(&small, &cam_a, None, &opts), first);
        }
    }

    #[test]
    fn store_depth_rounds_up() {
        for v in [0.1f64, 0.3, 0.7, 1.0 / 3.0, 0.999_999_999] {
            let s = store_depth(v);
            assert!(s as f64 >= v);
            assert!((s as f64 - v) < 1e-7);
        }
        assert_eq!(store_depth(0.25), 0.25);
    }
}
