//! Continuity-constrained deformation operators for guided depth
//! super-resolution.
//!
//! The crate is `no_std` with `alloc`. It provides:
//!
//! - [`grid`]: dense grids, window geometry and ordered sums.
//! - [`capo`]: the windowed, volume-conserving deformation operator and its
//!   reverse pass.
//! - [`pcgd`]: gradient-domain deformation built from four CAPO passes.
//! - [`guidance`]: luminance and ground-truth guidance producers.
//! - [`resample`]: cubic-convolution down/upsampling and RMSE/MAD.
//! - [`optim`]: L1 objective, Adam and finite-difference gradient checks.
//! - [`pipeline`]: upsampling followed by both deformation stages.
//!
//! All operations are pure functions of their inputs; summation order is
//! fixed so results are bit-reproducible.
#![no_std]

extern crate alloc;

pub mod capo;
mod error;
pub mod grid;
pub mod guidance;
pub mod optim;
pub mod pcgd;
pub mod pipeline;
pub mod resample;

pub use capo::{
    capo_apply, capo_backward, conserve, interaction, CapoParams, Layer, VariationVector,
};
pub use error::{Error, Result};
pub use grid::{
    extract_windows, make_grid, stable_sum, transpose, DepthGrid, Grid, GuidanceGrid, Padding,
    WindowSet, WindowShape, WindowSpec,
};
pub use pcgd::{differentiate, integrate, pcgd_apply, pcgd_backward, Axis, GradientField};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineParams};
