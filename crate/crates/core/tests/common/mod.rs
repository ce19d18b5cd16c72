//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the code paths it is used to check.
#![allow(dead_code)]

use proxycull_core::Vec3;

/// Closest distance from `p` to triangle `abc` (Ericson's region test).
pub fn point_triangle_distance(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> f64 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (p - a).length();
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (p - b).length();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (p - (a + ab * v)).length();
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (p - c).length();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (p - (a + ac * w)).length();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (p - (b + (c - b) * w)).length();
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (p - (a + ab * v + ac * w)).length()
}

/// Exhaustive point-to-mesh distance.
pub fn point_mesh_distance(p: Vec3, vertices: &[Vec3], faces: &[[u32; 3]]) -> f64 {
    faces
        .iter()
        .map(|f| point_triangle_distance(p, vertices[f[0] as usize], vertices[f[1] as usize], vertices[f[2] as usize]))
        .fold(f64::INFINITY, f64::min)
}

/// Camera at a random position looking at a random nearby target.
pub fn random_camera(rng: &mut impl rand::Rng, width: usize, height: usize) -> proxycull_core::Camera {
    loop {
        let eye = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let target = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let fov = rng.random_range(30.0..100.0);
        let near = rng.random_range(0.05..0.5);
        let far = near * rng.random_range(20.0..2000.0);
        let up = Vec3::new(0.0, 0.0, 1.0);
        if let Ok(c) = proxycull_core::Camera::look_at(eye, target, up, fov, near, far, width, height) {
            return c;
        }
    }
}

/// `M · v` with the sum written out left to right.
pub fn mat_vec4(m: &[[f64; 4]; 4], v: [f64; 4]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for r in 0..4 {
        let mut s = 0.0;
        for c in 0..4 {
            s += m[r][c] * v[c];
        }
        out[r] = s;
    }
    out
}

pub fn mat_mul4(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            for k in 0..4 {
                out[r][c] += a[r][k] * b[k][c];
            }
        }
    }
    out
}

/// Triangle soup in and around the view of `cam`: mostly in front, some
/// straddling the near plane, some entirely behind or off to the side.
pub fn random_soup(rng: &mut impl rand::Rng, cam: &proxycull_core::Camera, n: usize) -> proxycull_core::TriangleMesh {
    let fwd = cam.forward();
    let right = cam.rotation.row(0);
    let down = cam.rotation.row(1);
    let mut vertices = Vec::with_capacity(3 * n);
    let mut faces = Vec::with_capacity(n);
    for i in 0..n {
        let depth = match rng.random_range(0..10) {
            0 => rng.random_range(-2.0..cam.near * 2.0),
            1 => rng.random_range(-10.0..-1.0),
            _ => rng.random_range(cam.near..(cam.far * 0.05).max(cam.near * 4.0)),
        };
        let spread = depth.abs().max(1.0);
        let center = cam.center
            + fwd * depth
            + right * (rng.random_range(-1.2..1.2) * spread)
            + down * (rng.random_range(-1.2..1.2) * spread);
        let size = spread * rng.random_range(0.02..0.8);
        for _ in 0..3 {
            let off = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            vertices.push(center + off * size);
        }
        let b = 3 * i as u32;
        faces.push([b, b + 1, b + 2]);
    }
    proxycull_core::TriangleMesh::new(vertices, faces).expect("soup is valid")
}
