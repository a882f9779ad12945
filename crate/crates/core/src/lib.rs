//! Thin-plate-spline distortion modelling and per-image undistortion.
//!
//! The crate is organised bottom-up:
//!
//! - [`tps`] solves the spline parameters for a set of source control points
//!   against a fixed target grid and turns them into per-pixel sampling grids.
//! - [`sampler`] fetches image values (bilinear) and labels (nearest) at grid
//!   coordinates, with analytic gradients with respect to the coordinates.
//! - [`losses`] holds MS-SSIM, the reconstruction, grid and semantic losses,
//!   their weighted sum, and the residual distortion statistics.
//! - [`synth`] samples calibrated random distortions and applies them.
//! - [`solver`] recovers source control points with Adam on the joint loss.
//! - [`formats`] reads and writes control-point and grid files.

// Negated comparisons deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod formats;
pub mod grid;
pub mod image;
pub mod losses;
pub mod sampler;
pub mod solver;
pub mod synth;
pub mod tps;

pub use error::{Error, Result};
pub use grid::SamplingGrid;
pub use image::{ImageBuffer, LabelMap, NUM_CLASSES};
pub use tps::{ControlPointSet, Point, TpsSystem, TpsTransform};
