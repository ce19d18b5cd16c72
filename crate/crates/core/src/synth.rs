//! Seeded box-world street scenes for testing and benchmarking.
//!
//! World z is up. The ground is the square `[-extent, extent]²` at z = 0,
//! streets run along every multiple of the block size in x and y, and
//! buildings are axis-aligned boxes placed inside the blocks. Cameras stand
//! at eye height on the street along y = 0 and look roughly along +x.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::build_clusters;
use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::math::Vec3;
use crate::mesh::MeshBuilder;
use crate::scene::{SceneBundle, SceneConfig};
use crate::visibility::AnchorSet;

pub const BLOCK_SIZE: f64 = 40.0;
pub const STREET_WIDTH: f64 = 12.0;
pub const EYE_HEIGHT: f64 = 1.7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Half-size of the ground square.
    pub extent: f64,
    pub box_count: usize,
    pub anchor_count: usize,
    pub camera_count: usize,
    pub width: usize,
    pub height: usize,
    pub fov_y_deg: f64,
    pub near: f64,
    pub far: f64,
    /// Each box face is split into `n × n` quads.
    pub box_subdivision: usize,
    pub ground_subdivision: usize,
    pub min_height: f64,
    pub max_height: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            extent: 200.0,
            box_count: 50,
            anchor_count: 100_000,
            camera_count: 4,
            width: 1000,
            height: 1000,
            fov_y_deg: 70.0,
            near: 0.1,
            far: 1000.0,
            box_subdivision: 1,
            ground_subdivision: 16,
            min_height: 8.0,
            max_height: 50.0,
        }
    }
}

impl SyntheticSpec {
    /// Picks `box_subdivision` so the mesh has at least `triangles` faces.
    pub fn with_triangle_target(mut self, triangles: usize) -> Self {
        let ground = 2 * self.ground_subdivision.max(1).pow(2);
        let per_level = 10 * self.box_count.max(1);
        let needed = triangles.saturating_sub(ground).div_ceil(per_level);
        self.box_subdivision = (needed as f64).sqrt().ceil().max(1.0) as usize;
        self
    }
}

struct Surface {
    origin: Vec3,
    u: Vec3,
    v: Vec3,
    normal: Vec3,
    area: f64,
}

fn surfaces_of_box(min: Vec3, max: Vec3) -> [Surface; 5] {
    let d = max - min;
    let (ex, ey, ez) = (Vec3::new(d.x, 0.0, 0.0), Vec3::new(0.0, d.y, 0.0), Vec3::new(0.0, 0.0, d.z));
    let s = |origin: Vec3, u: Vec3, v: Vec3, normal: Vec3| Surface { origin, u, v, normal, area: u.cross(v).length() };
    [
        s(min, ez, ey, Vec3::new(-1.0, 0.0, 0.0)),
        s(min + ex, ey, ez, Vec3::new(1.0, 0.0, 0.0)),
        s(min, ex, ez, Vec3::new(0.0, -1.0, 0.0)),
        s(min + ey, ez, ex, Vec3::new(0.0, 1.0, 0.0)),
        s(min + ez, ex, ey, Vec3::new(0.0, 0.0, 1.0)),
    ]
}

fn inside_any(p: Vec3, boxes: &[(Vec3, Vec3)]) -> bool {
    boxes.iter().any(|(lo, hi)| (0..3).all(|k| p[k] > lo[k] && p[k] < hi[k]))
}

pub fn generate_synthetic_scene(seed: u64, spec: &SyntheticSpec) -> Result<SceneBundle> {
    if spec.camera_count < 1 || !(spec.extent > STREET_WIDTH) || spec.width < 1 || spec.height < 1 {
        return Err(Error::InvalidParameter(
            "synthetic scene needs camera_count >= 1, extent > street width and a non-empty viewport".into(),
        ));
    }
    if !(spec.min_height > 0.0 && spec.max_height >= spec.min_height) {
        return Err(Error::InvalidParameter("building heights must satisfy 0 < min_height <= max_height".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = spec.extent;

    // Block index range whose lots fit inside the ground square.
    let lot = BLOCK_SIZE - STREET_WIDTH;
    let first = (-e / BLOCK_SIZE).floor() as i64;
    let last = (e / BLOCK_SIZE).ceil() as i64 - 1;
    let blocks: Vec<i64> = (first..=last)
        .filter(|&b| {
            b as f64 * BLOCK_SIZE + STREET_WIDTH / 2.0 >= -e && (b + 1) as f64 * BLOCK_SIZE - STREET_WIDTH / 2.0 <= e
        })
        .collect();
    if spec.box_count > 0 && blocks.is_empty() {
        return Err(Error::InvalidParameter(format!("extent {e} leaves no room for buildings")));
    }

    let mut boxes = Vec::with_capacity(spec.box_count);
    for _ in 0..spec.box_count {
        let bx = blocks[rng.random_range(0..blocks.len())];
        let by = blocks[rng.random_range(0..blocks.len())];
        let mut lo = Vec3::ZERO;
        let mut hi = Vec3::ZERO;
        for (k, b) in [bx, by].into_iter().enumerate() {
            let start = b as f64 * BLOCK_SIZE + STREET_WIDTH / 2.0;
            let size = rng.random_range(lot * 0.3..=lot);
            let offset = rng.random_range(0.0..=lot - size);
            let (a, z) = (start + offset, start + offset + size);
            if k == 0 {
                lo.x = a;
                hi.x = z;
            } else {
                lo.y = a;
                hi.y = z;
            }
        }
        hi.z = rng.random_range(spec.min_height..=spec.max_height);
        boxes.push((lo, hi));
    }

    let mut builder = MeshBuilder::default();
    builder.add_quad(
        Vec3::new(-e, -e, 0.0),
        Vec3::new(2.0 * e, 0.0, 0.0),
        Vec3::new(0.0, 2.0 * e, 0.0),
        spec.ground_subdivision,
    );
    let mut surfaces = vec![Surface {
        origin: Vec3::new(-e, -e, 0.0),
        u: Vec3::new(2.0 * e, 0.0, 0.0),
        v: Vec3::new(0.0, 2.0 * e, 0.0),
        normal: Vec3::new(0.0, 0.0, 1.0),
        area: 4.0 * e * e,
    }];
    for &(lo, hi) in &boxes {
        builder.add_box(lo, hi, spec.box_subdivision, false);
        surfaces.extend(surfaces_of_box(lo, hi));
    }
    let mesh = builder.build()?;

    let mut cameras = Vec::with_capacity(spec.camera_count);
    for i in 0..spec.camera_count {
        let t = if spec.camera_count == 1 { 0.5 } else { i as f64 / (spec.camera_count - 1) as f64 };
        let x = -0.8 * e + t * 1.3 * e;
        let y = rng.random_range(-STREET_WIDTH / 4.0..=STREET_WIDTH / 4.0);
        let yaw = rng.random_range(-15.0f64..=15.0).to_radians();
        let eye = Vec3::new(x, y, EYE_HEIGHT);
        let target = eye + Vec3::new(yaw.cos(), yaw.sin(), 0.0);
        cameras.push(Camera::look_at(
            eye,
            target,
            Vec3::new(0.0, 0.0, 1.0),
            spec.fov_y_deg,
            spec.near,
            spec.far,
            spec.width,
            spec.height,
        )?);
    }

    // Half of the anchors hug surfaces (with a little noise along the normal,
    // so some sink below the ground or into walls); the rest float in the air
    // outside buildings.
    let total_area: f64 = surfaces.iter().map(|s| s.area).sum();
    let cumulative: Vec<f64> = surfaces
        .iter()
        .scan(0.0, |acc, s| {
            *acc += s.area;
            Some(*acc)
        })
        .collect();
    let near_count = spec.anchor_count / 2;
    let mut positions = Vec::with_capacity(spec.anchor_count);
    for _ in 0..near_count {
        let r = rng.random_range(0.0..total_area);
        let k = cumulative.partition_point(|&c| c <= r).min(surfaces.len() - 1);
        let s = &surfaces[k];
        let (a, b) = (rng.random::<f64>(), rng.random::<f64>());
        let offset = rng.random_range(-0.25..0.75);
        positions.push(s.origin + s.u * a + s.v * b + s.normal * offset);
    }
    let top = boxes.iter().map(|b| b.1.z).fold(spec.max_height, f64::max);
    for _ in near_count..spec.anchor_count {
        let mut p = Vec3::ZERO;
        for _ in 0..100 {
            p = Vec3::new(rng.random_range(-e..e), rng.random_range(-e..e), rng.random_range(0.0..top));
            if !inside_any(p, &boxes) {
                break;
            }
        }
        positions.push(p);
    }
    let anchors = AnchorSet::new(positions)?;

    let config = SceneConfig::default();
    let clusters = build_clusters(&mesh, config.tau_min, config.tau_max)?;
    Ok(SceneBundle { mesh, clusters, cameras, anchors, config })
}
