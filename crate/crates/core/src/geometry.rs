//! Camera model and the world → view → clip → NDC → pixel chain.
//!
//! Conventions: view space looks down +z with y pointing down (depth is
//! positive in front of the camera), NDC depth is in `[0, 1]` with 0 on the
//! near plane, and pixel `(0, 0)` is the top-left corner of the image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{floor_to_i64, Mat3, Mat4, Vec3};

/// Added to `w_h` before the perspective divide.
pub const DEFAULT_EPSILON: f64 = 1e-7;
/// Points with `w_h` at or below this are behind / too close to the camera.
pub const DEFAULT_TAU_NEAR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    pub epsilon: f64,
    pub tau_near: f64,
}

impl Default for ProjectionParams {
    fn default() -> Self {
        Self { epsilon: DEFAULT_EPSILON, tau_near: DEFAULT_TAU_NEAR }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// World → view.
    pub view_matrix: Mat4,
    /// View → clip.
    pub proj_matrix: Mat4,
    /// World → camera rotation.
    pub rotation: Mat3,
    /// Camera origin in world space.
    pub center: Vec3,
    /// Pinhole intrinsics in pixels; integer pixel coordinates address pixel centers.
    pub intrinsics: Mat3,
    pub near: f64,
    pub far: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Builds a camera from explicit matrices and checks every invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        view_matrix: Mat4,
        proj_matrix: Mat4,
        rotation: Mat3,
        center: Vec3,
        intrinsics: Mat3,
        near: f64,
        far: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = Self { view_matrix, proj_matrix, rotation, center, intrinsics, near, far, width, height };
        cam.validate().map_err(Error::InvalidCamera)?;
        Ok(cam)
    }

    /// Derives `V = [R | -R o]` and the perspective matrix matching `K`, so the
    /// rasterized depth, the anchor projection and the back-projection agree
    /// on which ray each pixel center represents.
    pub fn from_pinhole(
        rotation: Mat3,
        center: Vec3,
        intrinsics: Mat3,
        near: f64,
        far: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let t = -rotation.mul_vec(center);
        let view = Mat4::from_rotation_translation(&rotation, t);
        let proj = perspective_from_intrinsics(&intrinsics, near, far, width, height);
        Self::new(view, proj, rotation, center, intrinsics, near, far, width, height)
    }

    /// Camera at `eye` looking at `target`; `up` is a world-space hint.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        fov_y_deg: f64,
        near: f64,
        far: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let bad = || Error::InvalidCamera(vec!["degenerate look-at frame".into()]);
        let forward = (target - eye).normalized().ok_or_else(bad)?;
        let right = forward.cross(up).normalized().ok_or_else(bad)?;
        let down = forward.cross(right);
        let rotation = Mat3::from_rows(right, down, forward);
        let fy = (height as f64 / 2.0) / (fov_y_deg.to_radians() / 2.0).tan();
        let intrinsics =
            Mat3([[fy, 0.0, (width as f64 - 1.0) / 2.0], [0.0, fy, (height as f64 - 1.0) / 2.0], [0.0, 0.0, 1.0]]);
        Self::from_pinhole(rotation, eye, intrinsics, near, far, width, height)
    }

    /// Lists every violated invariant.
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if !(self.near > 0.0 && self.near.is_finite()) {
            errs.push(format!("near must be > 0 (got {})", self.near));
        }
        if !(self.far > self.near && self.far.is_finite()) {
            errs.push(format!("far must be > near (near={}, far={})", self.near, self.far));
        }
        if self.width < 1 || self.height < 1 {
            errs.push(format!("viewport must be at least 1x1 (got {}x{})", self.width, self.height));
        }
        if !self.view_matrix.is_finite() || !self.proj_matrix.is_finite() {
            errs.push("view/projection matrices must be finite".into());
        }
        if !self.center.is_finite() {
            errs.push("center must be finite".into());
        }
        let origin = self.view_matrix.mul_point(self.center);
        let scale = 1.0 + self.center.length();
        if origin[..3].iter().any(|c| c.abs() > 1e-9 * scale) || (origin[3] - 1.0).abs() > 1e-9 {
            errs.push(format!("view_matrix does not map center to the view origin (got {:?})", &origin[..3]));
        }
        for r in 0..3 {
            for c in 0..3 {
                if (self.view_matrix.0[r][c] - self.rotation.0[r][c]).abs() > 1e-9 {
                    errs.push(format!("view_matrix rotation block differs from rotation at ({r},{c})"));
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    /// Combined world → clip matrix `P·V`.
    pub fn view_proj(&self) -> Mat4 {
        self.proj_matrix.mul_mat(&self.view_matrix)
    }

    /// Unit forward direction in world space (third row of `R`).
    pub fn forward(&self) -> Vec3 {
        self.rotation.row(2)
    }
}

/// Perspective matrix for the top-left-origin pinhole `K` with hardware depth in `[0, 1]`.
pub fn perspective_from_intrinsics(k: &Mat3, near: f64, far: f64, width: usize, height: usize) -> Mat4 {
    let (w, h) = (width as f64, height as f64);
    let k = &k.0;
    let a = far / (far - near);
    let b = -far * near / (far - near);
    Mat4([
        [2.0 * k[0][0] / w, 2.0 * k[0][1] / w, 2.0 * (k[0][2] + 0.5) / w - 1.0, 0.0],
        [0.0, 2.0 * k[1][1] / h, 2.0 * (k[1][2] + 0.5) / h - 1.0, 0.0],
        [0.0, 0.0, a, b],
        [0.0, 0.0, 1.0, 0.0],
    ])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NdcPoint {
    pub x_ndc: f64,
    pub y_ndc: f64,
    pub z_ndc: f64,
    /// Homogeneous `w_h` before division.
    pub w_clip: f64,
    /// Clip-space `z_h` before division.
    pub z_clip: f64,
    /// Third component of `V·[p; 1]`.
    pub view_depth: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelCoord {
    pub x_pix: i64,
    pub y_pix: i64,
    pub in_bounds: bool,
}

pub fn project(camera: &Camera, p_world: Vec3) -> NdcPoint {
    project_with(camera, p_world, &ProjectionParams::default())
}

#[inline]
pub fn project_with(camera: &Camera, p_world: Vec3, params: &ProjectionParams) -> NdcPoint {
    let view = camera.view_matrix.mul_point(p_world);
    let [xh, yh, zh, wh] = camera.proj_matrix.mul_vec4(view);
    let denom = wh + params.epsilon;
    NdcPoint {
        x_ndc: xh / denom,
        y_ndc: yh / denom,
        z_ndc: zh / denom,
        w_clip: wh,
        z_clip: zh,
        view_depth: view[2],
        valid: wh > params.tau_near,
    }
}

#[inline]
pub fn ndc_to_pixel(ndc: &NdcPoint, width: usize, height: usize) -> PixelCoord {
    let x_pix = floor_to_i64((ndc.x_ndc + 1.0) / 2.0 * width as f64);
    let y_pix = floor_to_i64((ndc.y_ndc + 1.0) / 2.0 * height as f64);
    let in_bounds = x_pix >= 0 && x_pix < width as i64 && y_pix >= 0 && y_pix < height as i64;
    PixelCoord { x_pix, y_pix, in_bounds }
}

/// Hardware depth → linear camera-space depth.
pub fn linearize_depth(z_hw: f64, near: f64, far: f64) -> Result<f64> {
    let denom = far - z_hw * (far - near);
    if !(denom > 0.0) {
        return Err(Error::DepthDomain { z_hw, near, far });
    }
    Ok(near * far / denom)
}

/// Inverse of [`linearize_depth`]: linear view depth → hardware depth.
pub fn hardware_depth(view_depth: f64, near: f64, far: f64) -> f64 {
    far * (view_depth - near) / (view_depth * (far - near))
}

/// World point on the ray through pixel `(u, v)` at linear depth `depth_linear`.
pub fn back_project(camera: &Camera, u: i64, v: i64, depth_linear: f64) -> Result<Vec3> {
    let k_inv = camera.intrinsics.inverse().ok_or(Error::SingularIntrinsics)?;
    let ray = k_inv.mul_vec(Vec3::new(u as f64, v as f64, 1.0));
    Ok(camera.center + camera.rotation.transpose().mul_vec(ray * depth_linear))
}
