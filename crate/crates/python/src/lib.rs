//! Python bindings. Points are `(x, y, z)` tuples; depth maps and error
//! images are row-major float sequences.

use std::path::PathBuf;

use proxycull_core::densify::{plan_anchors, select_patches, ErrorImage, ProxyGrid};
use proxycull_core::io::{read_mesh, write_mesh, PlyEncoding};
use proxycull_core::oracle::oracle_suite;
use proxycull_core::pipeline::{bench, run_pipeline, FrameResult};
use proxycull_core::raster::{rasterize_depth, DepthMap as CoreDepth};
use proxycull_core::scene::{load_scene, write_scene, SceneBundle};
use proxycull_core::simplify::{simplify as core_simplify, SimplifyParams};
use proxycull_core::synth::{generate_synthetic_scene, SyntheticSpec};
use proxycull_core::visibility::{cull_anchors, AnchorSet};
use proxycull_core::{geometry, Error, TriangleMesh, Vec3};
use pyo3::exceptions::{PyIOError, PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;

type Point = (f64, f64, f64);

fn err(e: Error) -> PyErr {
    let msg = format!("{}: {e}", e.kind());
    match e {
        Error::Io { .. } => PyIOError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn vec3(p: Point) -> Vec3 {
    Vec3::new(p.0, p.1, p.2)
}

fn point(v: Vec3) -> Point {
    (v.x, v.y, v.z)
}

/// Serializable value as plain Python objects.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(module = "proxycull")]
pub struct Mesh {
    inner: TriangleMesh,
}

#[pymethods]
impl Mesh {
    #[new]
    fn new(vertices: Vec<Point>, faces: Vec<[u32; 3]>) -> PyResult<Self> {
        let inner = TriangleMesh::new(vertices.into_iter().map(vec3).collect(), faces).map_err(err)?;
        Ok(Self { inner })
    }

    /// Reads OBJ or PLY by extension.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: read_mesh(&path).map_err(err)? })
    }

    #[staticmethod]
    fn icosphere(subdivisions: u32) -> Self {
        Self { inner: TriangleMesh::icosphere(subdivisions) }
    }

    /// Unit square in z = 0 split into `n × n` quads.
    #[staticmethod]
    fn grid(n: usize) -> Self {
        Self { inner: TriangleMesh::grid(n) }
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_mesh(&path, &self.inner, PlyEncoding::BinaryLittleEndian).map_err(err)
    }

    #[getter]
    fn vertex_count(&self) -> usize {
        self.inner.vertex_count()
    }

    #[getter]
    fn face_count(&self) -> usize {
        self.inner.face_count()
    }

    #[getter]
    fn vertices(&self) -> Vec<Point> {
        self.inner.vertices.iter().map(|&v| point(v)).collect()
    }

    #[getter]
    fn faces(&self) -> Vec<[u32; 3]> {
        self.inner.faces.clone()
    }

    fn is_manifold(&self) -> bool {
        self.inner.is_manifold()
    }

    /// Returns `(mesh, total_cost)`. Raises if the target cannot be reached.
    #[pyo3(signature = (target_faces, boundary_weight = None, feature_angle_deg = None))]
    fn simplify(
        &self,
        target_faces: usize,
        boundary_weight: Option<f64>,
        feature_angle_deg: Option<f64>,
    ) -> PyResult<(Mesh, f64)> {
        let mut params = SimplifyParams::new(target_faces);
        if let Some(w) = boundary_weight {
            params.boundary_weight = w;
        }
        if let Some(a) = feature_angle_deg {
            params.feature_angle_deg = a;
        }
        let out = core_simplify(&self.inner, &params).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok((Mesh { inner: out.mesh }, out.total_cost))
    }

    fn __repr__(&self) -> String {
        format!("Mesh(vertices={}, faces={})", self.inner.vertex_count(), self.inner.face_count())
    }
}

#[pyclass(module = "proxycull")]
pub struct Camera {
    inner: geometry::Camera,
}

#[pymethods]
impl Camera {
    #[staticmethod]
    #[pyo3(signature = (eye, target, width, height, fov_y_deg = 60.0, near = 0.1, far = 1000.0, up = (0.0, 0.0, 1.0)))]
    #[allow(clippy::too_many_arguments)]
    fn look_at(
        eye: Point,
        target: Point,
        width: usize,
        height: usize,
        fov_y_deg: f64,
        near: f64,
        far: f64,
        up: Point,
    ) -> PyResult<Self> {
        let inner = geometry::Camera::look_at(vec3(eye), vec3(target), vec3(up), fov_y_deg, near, far, width, height)
            .map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }

    #[getter]
    fn near(&self) -> f64 {
        self.inner.near
    }

    #[getter]
    fn far(&self) -> f64 {
        self.inner.far
    }

    #[getter]
    fn center(&self) -> Point {
        point(self.inner.center)
    }

    /// `(x_ndc, y_ndc, z_ndc, view_depth, valid)`.
    fn project(&self, p: Point) -> (f64, f64, f64, f64, bool) {
        let n = geometry::project(&self.inner, vec3(p));
        (n.x_ndc, n.y_ndc, n.z_ndc, n.view_depth, n.valid)
    }

    /// World point on the ray through pixel `(u, v)` at view depth `depth`.
    fn back_project(&self, u: i64, v: i64, depth: f64) -> PyResult<Point> {
        geometry::back_project(&self.inner, u, v, depth).map(point).map_err(err)
    }

    fn linearize(&self, z_hw: f64) -> PyResult<f64> {
        geometry::linearize_depth(z_hw, self.inner.near, self.inner.far).map_err(err)
    }

    fn __repr__(&self) -> String {
        let c = self.inner.center;
        format!("Camera({}x{}, center=({}, {}, {}))", self.inner.width, self.inner.height, c.x, c.y, c.z)
    }
}

/// Hardware depth in `[0, 1]`; background pixels hold 1.0.
#[pyclass(module = "proxycull")]
pub struct DepthMap {
    inner: CoreDepth,
}

#[pymethods]
impl DepthMap {
    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }

    fn get(&self, x: usize, y: usize) -> PyResult<f32> {
        if x >= self.inner.width || y >= self.inner.height {
            return Err(PyIndexError::new_err(format!(
                "pixel ({x}, {y}) outside {}x{}",
                self.inner.width, self.inner.height
            )));
        }
        Ok(self.inner.get(x, y))
    }

    fn covered_pixels(&self) -> usize {
        self.inner.covered_pixels()
    }

    fn values(&self) -> Vec<f32> {
        self.inner.values.clone()
    }

    /// Little-endian f32, e.g. for `numpy.frombuffer(..., "<f4")`.
    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        let bytes: Vec<u8> = self.inner.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        PyBytes::new(py, &bytes)
    }
}

#[pyclass(module = "proxycull")]
pub struct Frame {
    inner: FrameResult,
}

#[pymethods]
impl Frame {
    #[getter]
    fn depth(&self) -> DepthMap {
        DepthMap { inner: self.inner.depth.clone() }
    }

    /// `bytes` with one code per anchor: 0 kept, 1 near, 2 off-screen, 3 occluded.
    #[getter]
    fn verdicts(&self) -> Vec<u8> {
        self.inner.mask.to_bytes()
    }

    #[getter]
    fn occluded_clusters(&self) -> Vec<bool> {
        self.inner.occluded.clone()
    }

    #[getter]
    fn frustum_culled_clusters(&self) -> Vec<bool> {
        self.inner.frustum_culled.clone()
    }

    fn counts<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.mask.counts())
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.stats)
    }
}

#[pyclass(module = "proxycull")]
pub struct Scene {
    inner: SceneBundle,
}

#[pymethods]
impl Scene {
    /// Street-like scene of boxes on a ground plane.
    #[staticmethod]
    #[pyo3(signature = (seed = 0, anchors = 100_000, boxes = 50, cameras = 4, width = 1000, height = 1000, extent = 200.0, triangles = None))]
    #[allow(clippy::too_many_arguments)]
    fn synthetic(
        seed: u64,
        anchors: usize,
        boxes: usize,
        cameras: usize,
        width: usize,
        height: usize,
        extent: f64,
        triangles: Option<usize>,
    ) -> PyResult<Self> {
        let mut spec = SyntheticSpec {
            anchor_count: anchors,
            box_count: boxes,
            camera_count: cameras,
            width,
            height,
            extent,
            ..Default::default()
        };
        if let Some(t) = triangles {
            spec = spec.with_triangle_target(t);
        }
        Ok(Self { inner: generate_synthetic_scene(seed, &spec).map_err(err)? })
    }

    /// Loads a scene manifest; `overrides` is a dict of config keys.
    #[staticmethod]
    #[pyo3(signature = (path, overrides = None))]
    fn load(py: Python<'_>, path: PathBuf, overrides: Option<Bound<'_, PyAny>>) -> PyResult<Self> {
        let mut layers = Vec::new();
        if let Some(o) = overrides {
            let text: String = py.import("json")?.call_method1("dumps", (o,))?.extract()?;
            layers.push(serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?);
        }
        Ok(Self { inner: load_scene(&path, &layers).map_err(err)? })
    }

    /// Writes the scene files into `dir` and returns the manifest path.
    fn save(&self, dir: PathBuf) -> PyResult<PathBuf> {
        write_scene(&dir, &self.inner).map_err(err)
    }

    #[getter]
    fn mesh(&self) -> Mesh {
        Mesh { inner: self.inner.mesh.clone() }
    }

    #[getter]
    fn cameras(&self) -> Vec<Camera> {
        self.inner.cameras.iter().map(|c| Camera { inner: c.clone() }).collect()
    }

    #[getter]
    fn anchors(&self) -> Vec<Point> {
        self.inner.anchors.positions.iter().map(|&v| point(v)).collect()
    }

    #[getter]
    fn cluster_count(&self) -> usize {
        self.inner.clusters.len()
    }

    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.config)
    }

    /// Frustum culling, depth pass, Hi-Z occlusion and the anchor filter.
    fn run(&self, py: Python<'_>, camera: usize) -> PyResult<Frame> {
        let inner = py.detach(|| run_pipeline(&self.inner, camera)).map_err(err)?;
        Ok(Frame { inner })
    }

    #[pyo3(signature = (camera = 0, frames = 100, warmup = 10))]
    fn bench<'py>(&self, py: Python<'py>, camera: usize, frames: usize, warmup: usize) -> PyResult<Bound<'py, PyAny>> {
        let report = py.detach(|| bench(&self.inner, camera, frames, warmup)).map_err(err)?;
        to_py(py, &report)
    }

    /// Independent checks of one frame; returns the report as a dict.
    fn oracle<'py>(&self, py: Python<'py>, camera: usize) -> PyResult<Bound<'py, PyAny>> {
        let report = py.detach(|| oracle_suite(&self.inner, camera)).map_err(err)?;
        to_py(py, &report)
    }

    /// New anchors for patches whose mean error exceeds three times the frame
    /// mean. `errors` maps camera index to a row-major error image.
    fn densify_plan(&self, py: Python<'_>, errors: Vec<(usize, Vec<f32>)>) -> PyResult<(Vec<Point>, usize)> {
        let b = &self.inner;
        let mut grid = ProxyGrid::for_mesh(&b.mesh, b.config.cell_size, b.config.capacity).map_err(err)?;
        let mut positions = Vec::new();
        let mut rejected = 0;
        for (cam, values) in errors {
            let camera =
                b.cameras.get(cam).ok_or_else(|| PyIndexError::new_err(format!("camera {cam} out of range")))?;
            let img = ErrorImage::new(camera.width, camera.height, values).map_err(err)?;
            let patches = select_patches(&img, b.config.patch_size).map_err(err)?;
            let depth = py.detach(|| run_pipeline(b, cam)).map_err(err)?.depth;
            let plan = plan_anchors(&patches, &depth, camera, &mut grid, cam as u32).map_err(err)?;
            positions.extend(plan.positions.into_iter().map(point));
            rejected += plan.rejected_count;
        }
        Ok((positions, rejected))
    }
}

#[pyfunction]
#[pyo3(signature = (mesh, camera, faces = None))]
fn rasterize(py: Python<'_>, mesh: &Mesh, camera: &Camera, faces: Option<Vec<u32>>) -> PyResult<DepthMap> {
    if let Some(bad) = faces.iter().flatten().find(|&&f| f as usize >= mesh.inner.face_count()) {
        return Err(PyIndexError::new_err(format!("face {bad} out of range ({} faces)", mesh.inner.face_count())));
    }
    let inner = py.detach(|| rasterize_depth(&mesh.inner, &camera.inner, faces.as_deref()));
    Ok(DepthMap { inner })
}

/// Verdict codes as `bytes`, one per point (see `Frame.verdicts`).
#[pyfunction]
#[pyo3(signature = (points, camera, depth, gamma = 0.3))]
fn cull(points: Vec<Point>, camera: &Camera, depth: &DepthMap, gamma: f64) -> PyResult<Vec<u8>> {
    let anchors = AnchorSet::new(points.into_iter().map(vec3).collect()).map_err(err)?;
    Ok(cull_anchors(&anchors, &camera.inner, &depth.inner, gamma).map_err(err)?.to_bytes())
}

/// Row-major selection flags, one per patch.
#[pyfunction]
#[pyo3(signature = (values, width, height, patch_size = 16))]
fn select(values: Vec<f32>, width: usize, height: usize, patch_size: usize) -> PyResult<Vec<bool>> {
    let img = ErrorImage::new(width, height, values).map_err(err)?;
    Ok(select_patches(&img, patch_size).map_err(err)?.selected)
}

#[pymodule]
fn proxycull(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Mesh>()?;
    m.add_class::<Camera>()?;
    m.add_class::<DepthMap>()?;
    m.add_class::<Frame>()?;
    m.add_class::<Scene>()?;
    m.add_function(wrap_pyfunction!(rasterize, m)?)?;
    m.add_function(wrap_pyfunction!(cull, m)?)?;
    m.add_function(wrap_pyfunction!(select, m)?)?;
    Ok(())
}
