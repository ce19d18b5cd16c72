//! File formats. Cameras and configuration are JSON; bulk data is binary.

mod binary;
mod mesh_format;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use binary::*;
pub use mesh_format::*;

use crate::error::{Error, Result};
use crate::geometry::{perspective_from_intrinsics, Camera};
use crate::math::{Mat3, Mat4, Vec3};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewConvention {
    /// x right, y down, looking down +z.
    #[default]
    Opencv,
    /// x right, y up, looking down -z. Converted on load.
    Opengl,
}

/// On-disk camera. `view_matrix`/`proj_matrix` may be omitted, in which case
/// they are derived from the pinhole fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_matrix: Option<Mat4>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proj_matrix: Option<Mat4>,
    pub rotation: Mat3,
    pub center: Vec3,
    pub intrinsics: Mat3,
    pub near: f64,
    pub far: f64,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub view_convention: ViewConvention,
}

impl From<&Camera> for CameraRecord {
    fn from(c: &Camera) -> Self {
        Self {
            view_matrix: Some(c.view_matrix),
            proj_matrix: Some(c.proj_matrix),
            rotation: c.rotation,
            center: c.center,
            intrinsics: c.intrinsics,
            near: c.near,
            far: c.far,
            width: c.width,
            height: c.height,
            view_convention: ViewConvention::Opencv,
        }
    }
}

impl CameraRecord {
    /// Normalizes to the +z-forward, y-down view convention and validates.
    /// A projection given alongside an OpenGL-convention view is replaced by
    /// one derived from the intrinsics.
    pub fn into_camera(self) -> Result<Camera> {
        let mut rotation = self.rotation;
        let mut view = self.view_matrix;
        let mut proj = self.proj_matrix;
        if self.view_convention == ViewConvention::Opengl {
            for r in 1..3 {
                rotation.0[r] = rotation.0[r].map(|v| -v);
                if let Some(v) = view.as_mut() {
                    v.0[r] = v.0[r].map(|x| -x);
                }
            }
            proj = None;
        }
        let view = view.unwrap_or_else(|| Mat4::from_rotation_translation(&rotation, -rotation.mul_vec(self.center)));
        let proj = proj.unwrap_or_else(|| {
            perspective_from_intrinsics(&self.intrinsics, self.near, self.far, self.width, self.height)
        });
        Camera::new(view, proj, rotation, self.center, self.intrinsics, self.near, self.far, self.width, self.height)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CameraList {
    Bare(Vec<CameraRecord>),
    Wrapped { cameras: Vec<CameraRecord> },
}

/// Parses a JSON array of cameras or `{"cameras": [...]}`. Every invalid
/// camera is reported.
pub fn parse_cameras(text: &str, path: &Path) -> Result<Vec<Camera>> {
    let list: CameraList = serde_json::from_str(text).map_err(|e| Error::parse(path, e.to_string()))?;
    let records = match list {
        CameraList::Bare(v) | CameraList::Wrapped { cameras: v } => v,
    };
    let mut cams = Vec::with_capacity(records.len());
    let mut problems = Vec::new();
    for (i, r) in records.into_iter().enumerate() {
        match r.into_camera() {
            Ok(c) => cams.push(c),
            Err(Error::InvalidCamera(list)) => {
                problems.extend(list.into_iter().map(|m| format!("{}: camera {i}: {m}", path.display())))
            }
            Err(e) => problems.push(format!("{}: camera {i}: {e}", path.display())),
        }
    }
    if problems.is_empty() {
        Ok(cams)
    } else {
        Err(Error::Invariants(problems))
    }
}

pub fn read_cameras(path: &Path) -> Result<Vec<Camera>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cameras(&text, path)
}

pub fn cameras_to_json(cameras: &[Camera]) -> String {
    let records: Vec<CameraRecord> = cameras.iter().map(CameraRecord::from).collect();
    serde_json::to_string_pretty(&serde_json::json!({ "cameras": records })).expect("cameras serialize")
}

pub fn write_cameras(path: &Path, cameras: &[Camera]) -> Result<()> {
    std::fs::write(path, cameras_to_json(cameras)).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> Camera {
        Camera::look_at(
            Vec3::new(1.0, 2.0, 3.0),
            Vec3::new(5.0, 2.5, 3.0),
            Vec3::new(0.0, 0.0, 1.0),
            70.0,
            0.1,
            500.0,
            64,
            48,
        )
        .unwrap()
    }

    #[test]
    fn camera_json_round_trip_is_exact() {
        let c = cam();
        let back = parse_cameras(&cameras_to_json(std::slice::from_ref(&c)), Path::new("c.json")).unwrap();
        assert_eq!(back, vec![c]);
    }

    #[test]
    fn pinhole_only_and_opengl() {
        let c = cam();
        let mut r = CameraRecord::from(&c);
        r.view_matrix = None;
        r.proj_matrix = None;
        assert_eq!(r.clone().into_camera().unwrap(), c);
        let mut gl = r;
        for row in 1..3 {
            gl.rotation.0[row] = gl.rotation.0[row].map(|v| -v);
        }
        gl.view_convention = ViewConvention::Opengl;
        assert_eq!(gl.into_camera().unwrap(), c);
    }

    #[test]
    fn every_bad_camera_is_listed() {
        let mut a = CameraRecord::from(&cam());
        a.far = 0.05;
        let mut b = CameraRecord::from(&cam());
        b.width = 0;
        let text = serde_json::to_string(&vec![a, b]).unwrap();
        match parse_cameras(&text, Path::new("c.json")).unwrap_err() {
            Error::Invariants(list) => {
                assert!(list.iter().any(|m| m.contains("camera 0") && m.contains("far")));
                assert!(list.iter().any(|m| m.contains("camera 1")));
            }
            e => panic!("{e}"),
        }
        let e = parse_cameras("[{\"near\": 1}", Path::new("c.json")).unwrap_err().to_string();
        assert!(e.contains("line"), "{e}");
    }
}
