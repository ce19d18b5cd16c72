//! Small fixed-size linear algebra used by the projection paths.
//!
//! Matrices are row-major and act on column vectors (`M * p`). Every product
//! is accumulated left to right without fused multiply-add, so a scalar
//! re-implementation of the same formula reproduces results bit for bit.

use std::ops::{Add, Index, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// `v.floor() as i64` (saturating, NaN to 0) without a libm call on
/// targets lacking a rounding instruction.
#[inline]
pub fn floor_to_i64(v: f64) -> i64 {
    let i = v as i64;
    i.saturating_sub(((i as f64) > v) as i64)
}

/// `v.ceil() as i64`, likewise.
#[inline]
pub fn ceil_to_i64(v: f64) -> i64 {
    let i = v as i64;
    i.saturating_add(((i as f64) < v) as i64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn splat(v: f64) -> Self {
        Self::new(v, v, v)
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(self.y * o.z - self.z * o.y, self.z * o.x - self.x * o.z, self.x * o.y - self.y * o.x)
    }

    pub fn length(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Unit vector, or `None` for a zero-length input.
    pub fn normalized(self) -> Option<Vec3> {
        let len = self.length();
        (len > 0.0 && len.is_finite()).then(|| self * (1.0 / len))
    }

    pub fn min(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn from_rows(r0: Vec3, r1: Vec3, r2: Vec3) -> Self {
        Mat3([r0.to_array(), r1.to_array(), r2.to_array()])
    }

    pub fn row(&self, r: usize) -> Vec3 {
        Vec3::from(self.0[r])
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([[m[0][0], m[1][0], m[2][0]], [m[0][1], m[1][1], m[2][1]], [m[0][2], m[1][2], m[2][2]]])
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Adjugate inverse; `None` when the determinant is zero or not finite.
    pub fn inverse(&self) -> Option<Mat3> {
        let det = self.determinant();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let m = &self.0;
        let inv = 1.0 / det;
        Some(Mat3([
            [
                (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv,
                (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv,
                (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv,
            ],
            [
                (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv,
                (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv,
                (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv,
            ],
            [
                (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv,
                (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv,
                (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv,
            ],
        ]))
    }
}

/// Row-major 4×4 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mat4(pub [[f64; 4]; 4]);

impl Mat4 {
    pub const IDENTITY: Mat4 =
        Mat4([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]);

    /// `[R | t; 0 0 0 1]`.
    pub fn from_rotation_translation(r: &Mat3, t: Vec3) -> Mat4 {
        let m = &r.0;
        Mat4([
            [m[0][0], m[0][1], m[0][2], t.x],
            [m[1][0], m[1][1], m[1][2], t.y],
            [m[2][0], m[2][1], m[2][2], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ])
    }

    pub fn row(&self, r: usize) -> [f64; 4] {
        self.0[r]
    }

    /// `M * [p; 1]`.
    #[inline]
    pub fn mul_point(&self, p: Vec3) -> [f64; 4] {
        let m = &self.0;
        let mut out = [0.0; 4];
        for (o, row) in out.iter_mut().zip(m.iter()) {
            *o = row[0] * p.x + row[1] * p.y + row[2] * p.z + row[3];
        }
        out
    }

    #[inline]
    pub fn mul_vec4(&self, v: [f64; 4]) -> [f64; 4] {
        let m = &self.0;
        let mut out = [0.0; 4];
        for (o, row) in out.iter_mut().zip(m.iter()) {
            *o = row[0] * v[0] + row[1] * v[1] + row[2] * v[2] + row[3] * v[3];
        }
        out
    }

    pub fn mul_mat(&self, o: &Mat4) -> Mat4 {
        let mut out = [[0.0; 4]; 4];
        for (r, out_row) in out.iter_mut().enumerate() {
            for (c, cell) in out_row.iter_mut().enumerate() {
                *cell = self.0[r][0] * o.0[0][c]
                    + self.0[r][1] * o.0[1][c]
                    + self.0[r][2] * o.0[2][c]
                    + self.0[r][3] * o.0[3][c];
            }
        }
        Mat4(out)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    /// General inverse through nalgebra's LU; `None` when singular.
    pub fn inverse(&self) -> Option<Mat4> {
        let m = nalgebra::Matrix4::from_fn(|r, c| self.0[r][c]);
        let inv = m.try_inverse()?;
        Some(Mat4(std::array::from_fn(|r| std::array::from_fn(|c| inv[(r, c)]))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_floor_matches_std() {
        for v in [
            0.0,
            -0.0,
            0.5,
            -0.5,
            1.0,
            -1.0,
            2.999,
            -2.999,
            1e15 + 0.5,
            -1e15 - 0.5,
            1e30,
            -1e30,
            f64::NAN,
            f64::INFINITY,
            f64::NEG_INFINITY,
        ] {
            assert_eq!(floor_to_i64(v), v.floor() as i64, "{v}");
            assert_eq!(ceil_to_i64(v), v.ceil() as i64, "{v}");
        }
    }

    #[test]
    fn mat3_inverse_round_trip() {
        let m = Mat3([[500.0, 0.0, 499.5], [0.0, 480.0, 300.25], [0.0, 0.0, 1.0]]);
        let inv = m.inverse().unwrap();
        let v = Vec3::new(3.0, -2.0, 1.0);
        let back = m.mul_vec(inv.mul_vec(v));
        assert!((back - v).length() < 1e-12);
        assert!(Mat3([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 1.0]]).inverse().is_none());
    }

    #[test]
    fn mat4_product_matches_sequential_application() {
        let a = Mat4([[1.0, 2.0, 0.0, 1.0], [0.0, 1.0, 3.0, -1.0], [0.5, 0.0, 1.0, 2.0], [0.0, 0.0, 1.0, 0.0]]);
        let b = Mat4::from_rotation_translation(&Mat3::IDENTITY, Vec3::new(1.0, 2.0, 3.0));
        let p = Vec3::new(0.25, -1.0, 4.0);
        let seq = a.mul_vec4(b.mul_point(p));
        let fused = a.mul_mat(&b).mul_point(p);
        for i in 0..4 {
            assert!((seq[i] - fused[i]).abs() < 1e-12);
        }
        let inv = a.inverse().unwrap();
        let id = a.mul_mat(&inv);
        for r in 0..4 {
            for c in 0..4 {
                let e = if r == c { 1.0 } else { 0.0 };
                assert!((id.0[r][c] - e).abs() < 1e-12);
            }
        }
    }
}
