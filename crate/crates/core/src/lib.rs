//! Graded-density foam infill built from a space-filling surface of prism cells.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! 1. [`density_field`] loads the requested density as a voxel grid and integrates it over cells.
//! 2. [`forest`] holds the subdivision tree and neighbor graph of typed prism cells.
//! 3. [`grading`] picks subdivision levels: a lower-bound pass, error-diffusion dithering and
//!    top-skin support.
//! 4. [`surface`] derives the patch edges and makes them continuous across level differences.
//! 5. [`slicing`] traces one closed curve per layer and removes overlaps.
//! 6. [`infill_fit`] trims the curve to the model and bridges everything into one toolpath.
//! 7. [`export`] writes G-code, SVG and statistics; [`analysis`] measures what was produced.
//!
//! [`pipeline`] wires the stages together for the command-line front end.

// NaN must fail range checks, and index loops mirror the per-axis math
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
pub mod analysis;
pub mod density_field;
pub mod error;
pub mod export;
pub mod forest;
pub mod geometry;
pub mod grading;
pub mod infill_fit;
pub mod pipeline;
pub mod slicing;
pub mod surface;

pub use error::{Error, Result};
