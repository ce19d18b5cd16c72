//! Indexed triangle meshes plus a few procedural shapes.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::math::Vec3;

pub type Face = [u32; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<Face>,
    /// Vertex lies on an edge used by exactly one face.
    pub boundary_flags: Vec<bool>,
    /// Undirected edges `(lo, hi)` whose dihedral angle exceeds the feature threshold.
    pub feature_edges: BTreeSet<(u32, u32)>,
}

pub fn edge_key(a: u32, b: u32) -> (u32, u32) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl TriangleMesh {
    /// Validates indices and derives boundary flags. No feature edges are marked.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<Face>) -> Result<Self> {
        let n = vertices.len();
        if let Some(i) = vertices.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidMesh(format!("vertex {i} has non-finite coordinates")));
        }
        for (fi, f) in faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&v| v as usize >= n) {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} references vertex {bad} but the mesh has {n} vertices"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {fi} is degenerate: {f:?}")));
            }
        }
        let mut mesh = Self { vertices, faces, boundary_flags: Vec::new(), feature_edges: BTreeSet::new() };
        mesh.boundary_flags = mesh.compute_boundary_flags();
        Ok(mesh)
    }

    /// Marks feature edges: interior edges whose incident face normals differ
    /// by more than `angle_deg`.
    pub fn with_features(mut self, angle_deg: f64) -> Self {
        self.mark_feature_edges(angle_deg);
        self
    }

    pub fn mark_feature_edges(&mut self, angle_deg: f64) {
        let cos_limit = angle_deg.to_radians().cos();
        self.feature_edges.clear();
        for (edge, faces) in self.edge_faces() {
            if faces.len() != 2 {
                continue;
            }
            let (Some(n0), Some(n1)) = (self.face_normal(faces[0]), self.face_normal(faces[1])) else {
                continue;
            };
            if n0.dot(n1) < cos_limit {
                self.feature_edges.insert(edge);
            }
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn face_positions(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    /// Unnormalized normal `(b - a) × (c - a)`.
    pub fn face_area_vector(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.face_positions(f);
        (b - a).cross(c - a)
    }

    pub fn face_normal(&self, f: usize) -> Option<Vec3> {
        self.face_area_vector(f).normalized()
    }

    /// Plane `(a, b, c, d)` with unit `(a, b, c)`; `None` for zero-area faces.
    pub fn face_plane(&self, f: usize) -> Option<[f64; 4]> {
        let n = self.face_normal(f)?;
        let p = self.vertices[self.faces[f][0] as usize];
        Some([n.x, n.y, n.z, -n.dot(p)])
    }

    /// Map from undirected edge to incident faces, in face order.
    pub fn edge_faces(&self) -> HashMap<(u32, u32), Vec<usize>> {
        let mut map: HashMap<(u32, u32), Vec<usize>> = HashMap::with_capacity(self.faces.len() * 3 / 2);
        for (fi, f) in self.faces.iter().enumerate() {
            for k in 0..3 {
                map.entry(edge_key(f[k], f[(k + 1) % 3])).or_default().push(fi);
            }
        }
        map
    }

    fn compute_boundary_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.vertices.len()];
        for ((a, b), faces) in self.edge_faces() {
            if faces.len() == 1 {
                flags[a as usize] = true;
                flags[b as usize] = true;
            }
        }
        flags
    }

    /// Axis-aligned bounds of the referenced and unreferenced vertices alike.
    pub fn aabb(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v))))
    }

    /// Every edge has one or two incident faces and every vertex fan is a
    /// single edge-connected component.
    pub fn is_manifold(&self) -> bool {
        let edges = self.edge_faces();
        if edges.values().any(|f| f.len() > 2) {
            return false;
        }
        let mut vertex_faces: Vec<Vec<usize>> = vec![Vec::new(); self.vertices.len()];
        for (fi, f) in self.faces.iter().enumerate() {
            for &v in f {
                vertex_faces[v as usize].push(fi);
            }
        }
        for (v, faces) in vertex_faces.iter().enumerate() {
            if faces.len() <= 1 {
                continue;
            }
            // Flood fill across faces sharing an edge through v.
            let mut seen = vec![false; faces.len()];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(i) = stack.pop() {
                let fi = &self.faces[faces[i]];
                for (j, &fj) in faces.iter().enumerate() {
                    if seen[j] {
                        continue;
                    }
                    let other = &self.faces[fj];
                    let shared = fi.iter().filter(|&&x| x != v as u32 && other.contains(&x)).count();
                    if shared > 0 {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            if seen.iter().any(|s| !s) {
                return false;
            }
        }
        true
    }

    /// `V - E + F` over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for f in &self.faces {
            for &v in f {
                used[v as usize] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        let e = self.edge_faces().len() as i64;
        v - e + self.faces.len() as i64
    }

    /// Flat `n × n` vertex grid over `[0, 1]²` in the plane `z = 0`.
    pub fn grid(n: usize) -> TriangleMesh {
        assert!(n >= 2);
        let step = 1.0 / (n - 1) as f64;
        let vertices =
            (0..n).flat_map(|j| (0..n).map(move |i| Vec3::new(i as f64 * step, j as f64 * step, 0.0))).collect();
        let mut faces = Vec::with_capacity(2 * (n - 1) * (n - 1));
        for j in 0..n - 1 {
            for i in 0..n - 1 {
                let a = (j * n + i) as u32;
                let b = a + 1;
                let c = a + n as u32;
                let d = c + 1;
                faces.push([a, b, d]);
                faces.push([a, d, c]);
            }
        }
        TriangleMesh::new(vertices, faces).expect("grid is valid")
    }

    /// Unit icosphere with `20 · 4^subdivisions` faces, outward winding.
    pub fn icosphere(subdivisions: u32) -> TriangleMesh {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut vertices: Vec<Vec3> = [
            (-1.0, t, 0.0),
            (1.0, t, 0.0),
            (-1.0, -t, 0.0),
            (1.0, -t, 0.0),
            (0.0, -1.0, t),
            (0.0, 1.0, t),
            (0.0, -1.0, -t),
            (0.0, 1.0, -t),
            (t, 0.0, -1.0),
            (t, 0.0, 1.0),
            (-t, 0.0, -1.0),
            (-t, 0.0, 1.0),
        ]
        .iter()
        .map(|&(x, y, z)| Vec3::new(x, y, z).normalized().unwrap())
        .collect();
        let mut faces: Vec<Face> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..subdivisions {
            let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
            let mut mid = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
                *midpoints.entry(edge_key(a, b)).or_insert_with(|| {
                    let m = (verts[a as usize] + verts[b as usize]) * 0.5;
                    verts.push(m.normalized().unwrap());
                    (verts.len() - 1) as u32
                })
            };
            let mut next = Vec::with_capacity(faces.len() * 4);
            for &[a, b, c] in &faces {
                let ab = mid(a, b, &mut vertices);
                let bc = mid(b, c, &mut vertices);
                let ca = mid(c, a, &mut vertices);
                next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            faces = next;
        }
        TriangleMesh::new(vertices, faces).expect("icosphere is valid")
    }

    /// Closed axis-aligned box, outward winding, 12 faces.
    pub fn cuboid(min: Vec3, max: Vec3) -> TriangleMesh {
        let mut b = MeshBuilder::default();
        b.add_box(min, max, 1, true);
        b.build().expect("box is valid")
    }
}

/// Accumulates quads and boxes into one indexed mesh.
#[derive(Debug, Default, Clone)]
pub struct MeshBuilder {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<Face>,
}

impl MeshBuilder {
    /// Quad `origin + s·u + t·v`, `s, t ∈ [0, 1]`, split into `n × n` cells.
    /// Winding follows `u × v`.
    pub fn add_quad(&mut self, origin: Vec3, u: Vec3, v: Vec3, n: usize) {
        let n = n.max(1);
        let base = self.vertices.len() as u32;
        for j in 0..=n {
            for i in 0..=n {
                let (s, t) = (i as f64 / n as f64, j as f64 / n as f64);
                self.vertices.push(origin + u * s + v * t);
            }
        }
        let row = (n + 1) as u32;
        for j in 0..n as u32 {
            for i in 0..n as u32 {
                let a = base + j * row + i;
                let b = a + 1;
                let c = a + row;
                let d = c + 1;
                self.faces.push([a, b, d]);
                self.faces.push([a, d, c]);
            }
        }
    }

    /// Box faces with outward winding and shared corner/edge vertices; the
    /// bottom (`min.z`) face is optional.
    pub fn add_box(&mut self, min: Vec3, max: Vec3, subdiv: usize, bottom: bool) {
        let d = max - min;
        let (ex, ey, ez) = (Vec3::new(d.x, 0.0, 0.0), Vec3::new(0.0, d.y, 0.0), Vec3::new(0.0, 0.0, d.z));
        let mut local = MeshBuilder::default();
        // -x, +x, -y, +y, +z, -z
        local.add_quad(min, ez, ey, subdiv);
        local.add_quad(min + ex, ey, ez, subdiv);
        local.add_quad(min, ex, ez, subdiv);
        local.add_quad(min + ey, ez, ex, subdiv);
        local.add_quad(min + ez, ex, ey, subdiv);
        if bottom {
            local.add_quad(min, ey, ex, subdiv);
        }
        local.weld();
        let base = self.vertices.len() as u32;
        self.vertices.extend(local.vertices);
        self.faces.extend(local.faces.iter().map(|f| f.map(|v| v + base)));
    }

    /// Merges vertices with bit-identical positions.
    pub fn weld(&mut self) {
        let mut index: HashMap<[u64; 3], u32> = HashMap::with_capacity(self.vertices.len());
        let mut remap = Vec::with_capacity(self.vertices.len());
        let mut kept = Vec::new();
        for v in &self.vertices {
            let key = [v.x.to_bits(), v.y.to_bits(), v.z.to_bits()];
            let id = *index.entry(key).or_insert_with(|| {
                kept.push(*v);
                (kept.len() - 1) as u32
            });
            remap.push(id);
        }
        self.vertices = kept;
        for f in &mut self.faces {
            *f = f.map(|v| remap[v as usize]);
        }
    }

    pub fn build(self) -> Result<TriangleMesh> {
        TriangleMesh::new(self.vertices, self.faces)
    }
}
