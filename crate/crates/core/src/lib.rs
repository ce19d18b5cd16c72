//! Proxy-mesh visibility pipeline: simplify a reconstruction mesh into a
//! lightweight proxy, rasterize depth-only views of it, build Hi-Z pyramids,
//! cull occluded anchor points and plan surface-projected densification.

// `!(x > y)` guards are written to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cluster;
pub mod densify;
pub mod error;
pub mod geometry;
pub mod io;
pub mod math;
pub mod mesh;
pub mod oracle;
pub mod pipeline;
pub mod raster;
pub mod scene;
pub mod simplify;
pub mod synth;
pub mod visibility;

pub use error::{Error, Result};
pub use geometry::{Camera, NdcPoint, PixelCoord, ProjectionParams};
pub use math::{Mat3, Mat4, Vec3};
pub use mesh::TriangleMesh;
