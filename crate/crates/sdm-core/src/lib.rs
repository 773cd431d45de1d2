//! Two-stage conditional diffusion for human silhouette segmentation from
//! dual-plane RF heatmaps.
//!
//! The pipeline ingests a horizontal (plan-view) and a vertical (side-view)
//! intensity heatmap per frame, encodes them into a multi-scale condition
//! pyramid, and runs a denoising diffusion chain over an embedded mask to
//! produce a binary silhouette on the image plane. A first training stage
//! fits the frame-level model; a second stage freezes it and fine-tunes
//! spatio-temporal attention blocks over frame windows.
//!
//! All numeric code is generic over the scalar type ([`num::Scalar`],
//! implemented for `f32` and `f64`); concrete aliases for the common
//! training precision live at the crate root.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod num;
pub mod losses;
pub mod optim;
pub mod params;
pub mod schedule;

pub use error::{Error, Result};
pub use num::Scalar;

/// Training-precision alias for the diffusion schedule.
pub type Schedule32 = schedule::DiffusionSchedule<f32>;
/// Double-precision alias used by numerical oracles.
pub type Schedule64 = schedule::DiffusionSchedule<f64>;
