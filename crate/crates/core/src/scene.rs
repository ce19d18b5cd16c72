//! Scene bundles: proxy mesh, clusters, cameras, anchors and the parameter
//! set, loaded from a JSON manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cluster::{build_clusters, Cluster, DEFAULT_LEVEL_BIAS, DEFAULT_PADDING, DEFAULT_TAU_MAX, DEFAULT_TAU_MIN};
use crate::densify::{DEFAULT_CAPACITY, DEFAULT_PATCH_SIZE};
use crate::error::{Error, Result};
use crate::geometry::{Camera, ProjectionParams, DEFAULT_EPSILON, DEFAULT_TAU_NEAR};
use crate::io::{self, PlyEncoding};
use crate::mesh::TriangleMesh;
use crate::raster::{RasterOptions, DEFAULT_TILE_SIZE};
use crate::simplify::{DEFAULT_BOUNDARY_WEIGHT, DEFAULT_FEATURE_ANGLE_DEG};
use crate::visibility::{AnchorSet, CullParams, DEFAULT_GAMMA};

/// Every tunable constant of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub gamma: f64,
    pub tau_near: f64,
    pub epsilon: f64,
    /// Screen-rect padding in pixels.
    pub padding: i64,
    /// Hi-Z level bias `c`.
    pub level_bias: u32,
    pub patch_size: usize,
    /// Proxy-grid cell capacity `K`.
    pub capacity: u32,
    /// Proxy-grid cell size; `None` uses the AABB diagonal / 512.
    pub cell_size: Option<f64>,
    pub boundary_weight: f64,
    pub feature_angle_deg: f64,
    pub tau_min: usize,
    pub tau_max: usize,
    pub tile_size: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            tau_near: DEFAULT_TAU_NEAR,
            epsilon: DEFAULT_EPSILON,
            padding: DEFAULT_PADDING,
            level_bias: DEFAULT_LEVEL_BIAS,
            patch_size: DEFAULT_PATCH_SIZE,
            capacity: DEFAULT_CAPACITY,
            cell_size: None,
            boundary_weight: DEFAULT_BOUNDARY_WEIGHT,
            feature_angle_deg: DEFAULT_FEATURE_ANGLE_DEG,
            tau_min: DEFAULT_TAU_MIN,
            tau_max: DEFAULT_TAU_MAX,
            tile_size: DEFAULT_TILE_SIZE,
        }
    }
}

impl SceneConfig {
    /// Defaults overlaid by each JSON object in turn (later wins).
    pub fn layered(layers: &[serde_json::Value]) -> Result<Self> {
        let mut merged = serde_json::to_value(Self::default()).expect("config serializes");
        for layer in layers {
            match layer {
                serde_json::Value::Object(m) => {
                    for (k, v) in m {
                        merged[k] = v.clone();
                    }
                }
                serde_json::Value::Null => {}
                other => return Err(Error::InvalidParameter(format!("config layer must be an object, got {other}"))),
            }
        }
        let cfg: Self = serde_json::from_value(merged).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            v.push(format!("gamma must be >= 0 (got {})", self.gamma));
        }
        if !(self.tau_near >= 0.0 && self.tau_near.is_finite()) {
            v.push(format!("tau_near must be >= 0 (got {})", self.tau_near));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            v.push(format!("epsilon must be >= 0 (got {})", self.epsilon));
        }
        if self.padding < 0 {
            v.push(format!("padding must be >= 0 (got {})", self.padding));
        }
        if self.patch_size < 1 {
            v.push("patch_size must be >= 1".into());
        }
        if self.capacity < 1 {
            v.push("capacity must be >= 1".into());
        }
        if let Some(h) = self.cell_size {
            if !(h > 0.0 && h.is_finite()) {
                v.push(format!("cell_size must be > 0 (got {h})"));
            }
        }
        if !(self.boundary_weight >= 0.0 && self.boundary_weight.is_finite()) {
            v.push(format!("boundary_weight must be >= 0 (got {})", self.boundary_weight));
        }
        if !(self.tau_min >= 1 && self.tau_min <= self.tau_max) {
            v.push(format!("need 1 <= tau_min <= tau_max (got {}, {})", self.tau_min, self.tau_max));
        }
        if self.tile_size < 1 {
            v.push("tile_size must be >= 1".into());
        }
        v
    }

    pub fn check(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Invariants(v))
        }
    }

    pub fn projection(&self) -> ProjectionParams {
        ProjectionParams { epsilon: self.epsilon, tau_near: self.tau_near }
    }

    pub fn cull_params(&self) -> CullParams {
        CullParams { gamma: self.gamma, projection: self.projection() }
    }

    pub fn raster_options(&self) -> RasterOptions {
        RasterOptions { tile_size: self.tile_size, tau_near: self.tau_near, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub mesh: TriangleMesh,
    pub clusters: Vec<Cluster>,
    pub cameras: Vec<Camera>,
    pub anchors: AnchorSet,
    pub config: SceneConfig,
}

impl SceneBundle {
    /// Lists every broken cross-reference or invariant.
    pub fn violations(&self) -> Vec<String> {
        let mut v: Vec<String> = self.config.violations().into_iter().map(|m| format!("config: {m}")).collect();
        for (i, c) in self.cameras.iter().enumerate() {
            if let Err(list) = c.validate() {
                v.extend(list.into_iter().map(|m| format!("camera {i}: {m}")));
            }
        }
        let faces = self.mesh.face_count();
        let mut seen = vec![false; faces];
        for (k, c) in self.clusters.iter().enumerate() {
            if c.is_empty() {
                v.push(format!("cluster {k} is empty"));
            }
            for &t in &c.triangle_indices {
                match seen.get_mut(t as usize) {
                    None => v.push(format!("cluster {k} references face {t} but the mesh has {faces}")),
                    Some(s) if *s => v.push(format!("face {t} appears in more than one cluster")),
                    Some(s) => *s = true,
                }
            }
            if let Some(bad) =
                c.triangle_indices.iter().find(|&&t| (t as usize) < faces && !aabb_contains(c, &self.mesh, t))
            {
                v.push(format!("cluster {k} AABB does not contain face {bad}"));
            }
        }
        if !self.clusters.is_empty() {
            let missing = seen.iter().filter(|s| !**s).count();
            if missing > 0 {
                v.push(format!("{missing} faces belong to no cluster"));
            }
        }
        if let Some(i) = self.anchors.positions.iter().position(|p| !p.is_finite()) {
            v.push(format!("anchor {i} has a non-finite coordinate"));
        }
        v
    }
}

fn aabb_contains(c: &Cluster, mesh: &TriangleMesh, t: u32) -> bool {
    mesh.face_positions(t as usize).iter().all(|p| (0..3).all(|k| p[k] >= c.aabb_min[k] && p[k] <= c.aabb_max[k]))
}

/// Manifest paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub mesh: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<PathBuf>,
    pub cameras: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchors: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

/// Loads and validates a bundle. `overrides` are applied on top of the
/// manifest's own config block.
pub fn load_scene(manifest_path: &Path, overrides: &[serde_json::Value]) -> Result<SceneBundle> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: SceneManifest =
        serde_json::from_str(&text).map_err(|e| Error::parse(manifest_path, e.to_string()))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut layers = vec![manifest.config.clone().unwrap_or(serde_json::Value::Null)];
    layers.extend(overrides.iter().cloned());
    let config = SceneConfig::layered(&layers)?;

    let mesh = io::read_mesh(&base.join(&manifest.mesh))?;
    let cameras = io::read_cameras(&base.join(&manifest.cameras))?;
    let anchors = match &manifest.anchors {
        Some(p) => io::read_anchors(&base.join(p))?,
        None => AnchorSet::default(),
    };
    let mut problems = Vec::new();
    let clusters = match &manifest.clusters {
        Some(p) => {
            let path = base.join(p);
            let (clusters, faces) = io::read_clusters(&path)?;
            if faces != mesh.face_count() {
                problems.push(format!(
                    "{}: built for a mesh with {faces} faces, mesh has {}",
                    path.display(),
                    mesh.face_count()
                ));
            }
            clusters
        }
        None => build_clusters(&mesh, config.tau_min, config.tau_max)?,
    };
    let bundle = SceneBundle { mesh, clusters, cameras, anchors, config };
    problems.extend(bundle.violations());
    if problems.is_empty() {
        Ok(bundle)
    } else {
        Err(Error::Invariants(problems))
    }
}

/// Writes `scene.json` plus its mesh, cluster, camera and anchor files into `dir`.
pub fn write_scene(dir: &Path, bundle: &SceneBundle) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = SceneManifest {
        mesh: "proxy.ply".into(),
        clusters: Some("proxy.clusters".into()),
        cameras: "cameras.json".into(),
        anchors: Some("anchors.bin".into()),
        config: Some(serde_json::to_value(bundle.config).expect("config serializes")),
    };
    io::write_mesh(&dir.join(&manifest.mesh), &bundle.mesh, PlyEncoding::BinaryLittleEndian)?;
    io::write_clusters(&dir.join("proxy.clusters"), &bundle.clusters, bundle.mesh.face_count())?;
    io::write_cameras(&dir.join(&manifest.cameras), &bundle.cameras)?;
    io::write_anchors(&dir.join("anchors.bin"), &bundle.anchors)?;
    let path = dir.join("scene.json");
    io::write_json(&path, &manifest)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn layers_override_in_order() {
        let cfg = SceneConfig::layered(&[json!({"gamma": 0.6, "capacity": 2}), json!({"gamma": 1.0})]).unwrap();
        assert_eq!((cfg.gamma, cfg.capacity, cfg.tau_near), (1.0, 2, 1e-4));
        assert!(SceneConfig::layered(&[json!({"gama": 1.0})]).is_err());
        assert!(
            matches!(SceneConfig::layered(&[json!({"gamma": -1.0, "tau_min": 0})]), Err(Error::Invariants(v)) if v.len() == 2)
        );
    }

    #[test]
    fn defaults() {
        let c = SceneConfig::default();
        assert_eq!((c.epsilon, c.tau_near, c.gamma), (1e-7, 1e-4, 0.3));
    }
}
