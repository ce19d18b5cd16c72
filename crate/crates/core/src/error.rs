use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid camera: {}", .0.join("; "))]
    InvalidCamera(Vec<String>),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("depth out of domain: z_hw={z_hw}, near={near}, far={far} gives a non-positive denominator")]
    DepthDomain { z_hw: f64, near: f64, far: f64 },

    #[error("intrinsics matrix is singular")]
    SingularIntrinsics,

    #[error("{what} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    DimensionMismatch { what: &'static str, want_w: usize, want_h: usize, got_w: usize, got_h: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("scene invariants violated:\n  {}", .0.join("\n  "))]
    Invariants(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), message: message.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Short machine-readable tag used by the CLI's JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidCamera(_) => "invalid_camera",
            Error::InvalidMesh(_) => "invalid_mesh",
            Error::DepthDomain { .. } => "depth_domain",
            Error::SingularIntrinsics => "singular_intrinsics",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Parse { .. } => "parse",
            Error::Invariants(_) => "invariants",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
