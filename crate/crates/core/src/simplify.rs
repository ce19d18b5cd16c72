//! Quadric-error-metric edge collapse.
//!
//! Each vertex carries the sum of its incident face-plane quadrics. Boundary
//! and crease edges add two heavily weighted constraint planes whose
//! intersection is the edge line, which pins those vertices to the line.
//! Collapses are popped from a min-heap keyed by cost; stale entries are
//! detected through per-vertex generation counters.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use thiserror::Error;

use crate::math::Vec3;
use crate::mesh::{edge_key, Face, TriangleMesh};

pub const DEFAULT_BOUNDARY_WEIGHT: f64 = 1e3;
pub const DEFAULT_FEATURE_ANGLE_DEG: f64 = 40.0;
/// `A` counts as invertible when `σ_min > SINGULAR_RATIO · σ_max`.
pub const SINGULAR_RATIO: f64 = 1e-10;

/// Symmetric 4×4 quadric `Q`, with blocks `A` (3×3), `b` and `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadric {
    pub matrix: [[f64; 4]; 4],
}

impl Default for Quadric {
    fn default() -> Self {
        Self::zero()
    }
}

impl Quadric {
    pub fn zero() -> Self {
        Self { matrix: [[0.0; 4]; 4] }
    }

    /// `w · p pᵀ`.
    pub fn from_plane(p: [f64; 4], weight: f64) -> Self {
        let mut matrix = [[0.0; 4]; 4];
        for (r, row) in matrix.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell = weight * p[r] * p[c];
            }
        }
        Self { matrix }
    }

    pub fn add(&self, o: &Quadric) -> Quadric {
        let mut out = *self;
        out.add_assign(o);
        out
    }

    pub fn add_assign(&mut self, o: &Quadric) {
        for (row, orow) in self.matrix.iter_mut().zip(o.matrix.iter()) {
            for (a, b) in row.iter_mut().zip(orow.iter()) {
                *a += b;
            }
        }
    }

    /// `E(x) = [x; 1]ᵀ Q [x; 1]`.
    pub fn evaluate(&self, x: Vec3) -> f64 {
        let v = [x.x, x.y, x.z, 1.0];
        let mut e = 0.0;
        for r in 0..4 {
            let row = self.matrix[r].iter().zip(&v).fold(0.0, |acc, (m, x)| acc + m * x);
            e += v[r] * row;
        }
        e
    }

    pub fn a_block(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.matrix[r][c])
    }

    pub fn b_block(&self) -> Vector3<f64> {
        Vector3::new(self.matrix[0][3], self.matrix[1][3], self.matrix[2][3])
    }

    pub fn c_block(&self) -> f64 {
        self.matrix[3][3]
    }
}

/// Result of minimizing a combined quadric over one edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contraction {
    pub position: Vec3,
    pub cost: f64,
    /// `true` when `A` was invertible and `x* = -A⁻¹ b` was used.
    pub solved: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollapseCandidate {
    pub edge: (u32, u32),
    pub optimal_position: Vec3,
    pub cost: f64,
    /// Generations of `(edge.0, edge.1)` when the candidate was computed.
    pub generation: (u32, u32),
}

/// Per-vertex quadrics: incident face planes plus `λ_b`-weighted constraint
/// planes for every boundary edge and every marked feature edge.
pub fn vertex_quadrics(mesh: &TriangleMesh, boundary_weight: f64) -> Vec<Quadric> {
    let planes: Vec<Option<[f64; 4]>> = (0..mesh.face_count()).map(|f| mesh.face_plane(f)).collect();
    // Face order is fixed, so the per-vertex sums are reproducible.
    let mut quadrics = vec![Quadric::zero(); mesh.vertex_count()];
    for (f, face) in mesh.faces.iter().enumerate() {
        if let Some(p) = planes[f] {
            let q = Quadric::from_plane(p, 1.0);
            for &v in face {
                quadrics[v as usize].add_assign(&q);
            }
        }
    }
    if boundary_weight == 0.0 {
        return quadrics;
    }
    let mut constrained: Vec<((u32, u32), Vec<usize>)> =
        mesh.edge_faces().into_iter().filter(|(e, faces)| faces.len() == 1 || mesh.feature_edges.contains(e)).collect();
    constrained.sort_unstable_by_key(|(e, _)| *e);
    for ((a, b), faces) in constrained {
        let x0 = mesh.vertices[a as usize];
        let Some(t) = (mesh.vertices[b as usize] - x0).normalized() else { continue };
        let normal_sum = faces
            .iter()
            .filter_map(|&f| planes[f].map(|p| Vec3::new(p[0], p[1], p[2])))
            .fold(Vec3::ZERO, |acc, n| acc + n);
        let Some(n_hat) = normal_sum.normalized() else { continue };
        let Some(m) = t.cross(n_hat).normalized() else { continue };
        let p1 = [n_hat.x, n_hat.y, n_hat.z, -n_hat.dot(x0)];
        let p2 = [m.x, m.y, m.z, -m.dot(x0)];
        let q = Quadric::from_plane(p1, boundary_weight).add(&Quadric::from_plane(p2, boundary_weight));
        quadrics[a as usize].add_assign(&q);
        quadrics[b as usize].add_assign(&q);
    }
    quadrics
}

/// Minimizes `Q_i + Q_j`. Singular `A` falls back to the best of the
/// midpoint, `x_i` and `x_j`, preferring them in that order on exact ties.
pub fn optimal_collapse(q_i: &Quadric, q_j: &Quadric, x_i: Vec3, x_j: Vec3) -> Contraction {
    let q = q_i.add(q_j);
    if let Some(x) = solve_minimizer(&q) {
        return Contraction { position: x, cost: q.evaluate(x).max(0.0), solved: true };
    }
    let mid = (x_i + x_j) * 0.5;
    let mut best = Contraction { position: mid, cost: q.evaluate(mid), solved: false };
    for x in [x_i, x_j] {
        let e = q.evaluate(x);
        if e < best.cost {
            best = Contraction { position: x, cost: e, solved: false };
        }
    }
    best.cost = best.cost.max(0.0);
    best
}

/// `-A⁻¹ b` when `A` passes the scale-relative singular-value test.
fn solve_minimizer(q: &Quadric) -> Option<Vec3> {
    let a = q.a_block();
    if !a.iter().all(|v| v.is_finite()) {
        return None;
    }
    let eig = SymmetricEigen::new(a);
    let sv = eig.eigenvalues.map(f64::abs);
    let (lo, hi) = (sv.min(), sv.max());
    if !(hi > 0.0) || lo <= SINGULAR_RATIO * hi {
        return None;
    }
    // Solve through the eigendecomposition already computed.
    let rhs = eig.eigenvectors.transpose() * (-q.b_block());
    let y = rhs.component_div(&eig.eigenvalues);
    let x = eig.eigenvectors * y;
    let x = Vec3::new(x[0], x[1], x[2]);
    x.is_finite().then_some(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simplified {
    pub mesh: TriangleMesh,
    pub collapses: usize,
    /// Sum of accepted collapse costs.
    pub total_cost: f64,
}

#[derive(Debug, Error)]
pub enum SimplifyError {
    #[error("target face count must be at least 4 (got {0})")]
    InvalidTarget(usize),
    #[error("no further valid collapse: stopped at {} faces (target {target})", .partial.mesh.face_count())]
    Exhausted { target: usize, partial: Box<Simplified> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplifyParams {
    pub target_faces: usize,
    pub boundary_weight: f64,
    pub feature_angle_deg: f64,
}

impl SimplifyParams {
    pub fn new(target_faces: usize) -> Self {
        Self { target_faces, boundary_weight: DEFAULT_BOUNDARY_WEIGHT, feature_angle_deg: DEFAULT_FEATURE_ANGLE_DEG }
    }
}

pub fn simplify(mesh: &TriangleMesh, params: &SimplifyParams) -> Result<Simplified, SimplifyError> {
    if params.target_faces < 4 {
        return Err(SimplifyError::InvalidTarget(params.target_faces));
    }
    let mut s = Simplifier::new(mesh, params.boundary_weight, params.feature_angle_deg);
    while s.face_count() > params.target_faces {
        if s.step().is_none() {
            return Err(SimplifyError::Exhausted { target: params.target_faces, partial: Box::new(s.finish()) });
        }
    }
    Ok(s.finish())
}

#[derive(Debug, Clone, Copy)]
struct HeapEntry {
    cost: f64,
    a: u32,
    b: u32,
    gen_a: u32,
    gen_b: u32,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| (other.a, other.b).cmp(&(self.a, self.b)))
            .then_with(|| (other.gen_a, other.gen_b).cmp(&(self.gen_a, self.gen_b)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptedCollapse {
    /// Surviving vertex.
    pub keep: u32,
    /// Removed vertex.
    pub removed: u32,
    pub position: Vec3,
    pub cost: f64,
}

/// Incremental collapse state; [`simplify`] drives it to a face budget.
pub struct Simplifier {
    positions: Vec<Vec3>,
    quadrics: Vec<Quadric>,
    faces: Vec<Face>,
    face_alive: Vec<bool>,
    vertex_faces: Vec<Vec<u32>>,
    vertex_alive: Vec<bool>,
    generation: Vec<u32>,
    heap: BinaryHeap<HeapEntry>,
    alive_faces: usize,
    collapses: usize,
    total_cost: f64,
}

impl Simplifier {
    pub fn new(mesh: &TriangleMesh, boundary_weight: f64, feature_angle_deg: f64) -> Self {
        let mut annotated = mesh.clone();
        annotated.mark_feature_edges(feature_angle_deg);
        let quadrics = vertex_quadrics(&annotated, boundary_weight);
        let mut vertex_faces = vec![Vec::new(); mesh.vertex_count()];
        for (fi, f) in mesh.faces.iter().enumerate() {
            for &v in f {
                vertex_faces[v as usize].push(fi as u32);
            }
        }
        let vertex_alive = vertex_faces.iter().map(|f| !f.is_empty()).collect();
        let mut s = Self {
            positions: mesh.vertices.clone(),
            quadrics,
            faces: mesh.faces.clone(),
            face_alive: vec![true; mesh.face_count()],
            vertex_faces,
            vertex_alive,
            generation: vec![0; mesh.vertex_count()],
            heap: BinaryHeap::new(),
            alive_faces: mesh.face_count(),
            collapses: 0,
            total_cost: 0.0,
        };
        let mut edges: Vec<(u32, u32)> = mesh.edge_faces().into_keys().collect();
        edges.sort_unstable();
        for (a, b) in edges {
            s.push_edge(a, b);
        }
        s
    }

    pub fn face_count(&self) -> usize {
        self.alive_faces
    }

    pub fn collapses(&self) -> usize {
        self.collapses
    }

    pub fn quadric(&self, v: u32) -> &Quadric {
        &self.quadrics[v as usize]
    }

    fn push_edge(&mut self, a: u32, b: u32) {
        let (a, b) = edge_key(a, b);
        let c = self.contraction(a, b);
        self.heap.push(HeapEntry {
            cost: c.cost,
            a,
            b,
            gen_a: self.generation[a as usize],
            gen_b: self.generation[b as usize],
        });
    }

    fn contraction(&self, a: u32, b: u32) -> Contraction {
        optimal_collapse(
            &self.quadrics[a as usize],
            &self.quadrics[b as usize],
            self.positions[a as usize],
            self.positions[b as usize],
        )
    }

    fn neighbors(&self, v: u32) -> Vec<u32> {
        let mut n: Vec<u32> =
            self.vertex_faces[v as usize].iter().flat_map(|&f| self.faces[f as usize]).filter(|&x| x != v).collect();
        n.sort_unstable();
        n.dedup();
        n
    }

    fn is_boundary_edge(&self, a: u32, b: u32) -> bool {
        self.shared_faces(a, b).len() == 1
    }

    fn shared_faces(&self, a: u32, b: u32) -> Vec<u32> {
        self.vertex_faces[a as usize].iter().copied().filter(|&f| self.faces[f as usize].contains(&b)).collect()
    }

    fn is_boundary_vertex(&self, v: u32) -> bool {
        self.neighbors(v).into_iter().any(|n| self.is_boundary_edge(v, n))
    }

    /// Link condition, duplicate-face and orientation checks for collapsing
    /// `(a, b)` into `position`.
    pub fn is_valid_collapse(&self, a: u32, b: u32, position: Vec3) -> bool {
        let shared = self.shared_faces(a, b);
        if shared.is_empty() || shared.len() > 2 {
            return false;
        }
        let mut opposite: Vec<u32> =
            shared.iter().flat_map(|&f| self.faces[f as usize]).filter(|&x| x != a && x != b).collect();
        opposite.sort_unstable();
        let na = self.neighbors(a);
        let nb = self.neighbors(b);
        let common: Vec<u32> = na.iter().copied().filter(|x| nb.binary_search(x).is_ok()).collect();
        if common != opposite {
            return false;
        }
        if shared.len() == 2 && self.is_boundary_vertex(a) && self.is_boundary_vertex(b) {
            return false;
        }
        let mut new_faces: Vec<[u32; 3]> = Vec::new();
        for v in [a, b] {
            for &f in &self.vertex_faces[v as usize] {
                let face = self.faces[f as usize];
                if face.contains(&a) && face.contains(&b) {
                    continue;
                }
                let old = self.face_area(face, None);
                let new = self.face_area(face, Some((a, b, position)));
                if new.dot(old) <= 0.0 {
                    return false;
                }
                let mut key = face.map(|x| if x == b { a } else { x });
                key.sort_unstable();
                new_faces.push(key);
            }
        }
        new_faces.sort_unstable();
        new_faces.windows(2).all(|w| w[0] != w[1])
    }

    fn face_area(&self, face: Face, moved: Option<(u32, u32, Vec3)>) -> Vec3 {
        let p = face.map(|v| match moved {
            Some((a, b, pos)) if v == a || v == b => pos,
            _ => self.positions[v as usize],
        });
        (p[1] - p[0]).cross(p[2] - p[0])
    }

    /// Every live edge with its current candidate and validity.
    pub fn candidates(&self) -> Vec<(CollapseCandidate, bool)> {
        let mut edges: Vec<(u32, u32)> = Vec::new();
        for (fi, f) in self.faces.iter().enumerate() {
            if !self.face_alive[fi] {
                continue;
            }
            for k in 0..3 {
                edges.push(edge_key(f[k], f[(k + 1) % 3]));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        edges
            .into_iter()
            .map(|(a, b)| {
                let c = self.contraction(a, b);
                let cand = CollapseCandidate {
                    edge: (a, b),
                    optimal_position: c.position,
                    cost: c.cost,
                    generation: (self.generation[a as usize], self.generation[b as usize]),
                };
                (cand, self.is_valid_collapse(a, b, c.position))
            })
            .collect()
    }

    /// Pops until one collapse is accepted; `None` when the queue is exhausted.
    pub fn step(&mut self) -> Option<AcceptedCollapse> {
        while let Some(e) = self.heap.pop() {
            let (a, b) = (e.a, e.b);
            if !self.vertex_alive[a as usize]
                || !self.vertex_alive[b as usize]
                || self.generation[a as usize] != e.gen_a
                || self.generation[b as usize] != e.gen_b
            {
                continue;
            }
            let c = self.contraction(a, b);
            if !self.is_valid_collapse(a, b, c.position) {
                continue;
            }
            self.apply(a, b, c);
            return Some(AcceptedCollapse { keep: a, removed: b, position: c.position, cost: c.cost });
        }
        None
    }

    fn apply(&mut self, a: u32, b: u32, c: Contraction) {
        let (ai, bi) = (a as usize, b as usize);
        for f in self.shared_faces(a, b) {
            self.face_alive[f as usize] = false;
            self.alive_faces -= 1;
            for v in self.faces[f as usize] {
                self.vertex_faces[v as usize].retain(|&x| x != f);
            }
        }
        let moved = std::mem::take(&mut self.vertex_faces[bi]);
        for f in moved {
            for v in self.faces[f as usize].iter_mut() {
                if *v == b {
                    *v = a;
                }
            }
            self.vertex_faces[ai].push(f);
        }
        self.vertex_faces[ai].sort_unstable();
        self.vertex_alive[bi] = false;
        self.positions[ai] = c.position;
        self.quadrics[ai] = self.quadrics[ai].add(&self.quadrics[bi]);
        self.generation[ai] += 1;
        self.generation[bi] += 1;
        self.collapses += 1;
        self.total_cost += c.cost;

        // Costs change only for edges at `a`; validity can change for any
        // edge touching the one-ring of `a`.
        let ring = self.neighbors(a);
        for &n in &ring {
            self.push_edge(a, n);
        }
        let mut seen: HashMap<(u32, u32), ()> = HashMap::new();
        for &n in &ring {
            for m in self.neighbors(n) {
                if m == a {
                    continue;
                }
                if seen.insert(edge_key(n, m), ()).is_none() {
                    self.push_edge(n, m);
                }
            }
        }
    }

    /// Compacts live vertices and faces into a new mesh.
    pub fn finish(&self) -> Simplified {
        let mut remap = vec![u32::MAX; self.positions.len()];
        let mut vertices = Vec::new();
        let mut faces = Vec::with_capacity(self.alive_faces);
        for (fi, f) in self.faces.iter().enumerate() {
            if !self.face_alive[fi] {
                continue;
            }
            let mapped = f.map(|v| {
                let slot = &mut remap[v as usize];
                if *slot == u32::MAX {
                    *slot = vertices.len() as u32;
                    vertices.push(self.positions[v as usize]);
                }
                *slot
            });
            faces.push(mapped);
        }
        let mesh = TriangleMesh::new(vertices, faces).expect("collapse keeps faces non-degenerate");
        Simplified { mesh, collapses: self.collapses, total_cost: self.total_cost }
    }
}
