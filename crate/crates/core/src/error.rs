use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("open contour on layer {layer}: gap of {gap_mm:.4} mm exceeds the stitching tolerance")]
    OpenContour { layer: usize, gap_mm: f64 },

    #[error("image {path} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    DimensionMismatch { path: PathBuf, got_w: u32, got_h: u32, want_w: u32, want_h: u32 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("starting cube side {l_init} mm is not a power-of-two multiple of the line width {w} mm")]
    NotPowerOfTwoCube { l_init: f64, w: f64 },

    #[error("cell {cell} is already at the maximum depth {max_depth}")]
    MaxDepthExceeded { cell: usize, max_depth: u32 },

    #[error("cell {0} is not a leaf")]
    NotALeaf(usize),

    #[error("traversal at z = {z} mm did not close after {steps} cells")]
    TraversalNotClosed { z: f64, steps: usize },

    #[error("{count} discontinuities above tolerance remain after continuity enforcement (worst {worst_mm:.6} mm)")]
    Discontinuity { count: usize, worst_mm: f64 },

    #[error("no bridge of at most {max_len_mm:.3} mm connects the component centered at ({cx:.3}, {cy:.3})")]
    Unbridgeable { cx: f64, cy: f64, max_len_mm: f64 },

    #[error("compensation samples are not monotone: {0}")]
    NonMonotone(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Error::Io { path: path.to_path_buf(), message: e.to_string() }
    }
}
