//! Head-and-neck PET/CT prognosis toolkit.
//!
//! The crate covers every stage between raw PET/CT scans plus binary tumour
//! masks and a patient risk score:
//!
//! - [`volume`]: voxel grids, NIfTI-1 I/O, resampling and intensity preprocessing
//! - [`localizer`]: head-and-neck crop box from axial intensity profiles
//! - [`morphology`]: connected components and per-tumour shape/intensity descriptors
//! - [`classifier`]: RBF-kernel SVM (SMO) tumour typing and F1 metrics
//! - [`survival`]: Cox PH, Weibull AFT, concordance index, calibration sweeps
//! - [`neural`]: MTLR survival head, tumour-graph GATv2 network and training
//! - [`pipeline`]: splitting, synthetic cohorts, evaluation and the end-to-end runner
//!
//! # Conventions
//!
//! Every 3-vector (indices, spacing, origin, positions) is stored in `(z, y, x)`
//! order, matching the memory layout of [`volume::Volume`]. The `z` axis runs
//! superior to inferior: index 0 is the top of the head, and physical `z` grows
//! downwards.

pub mod classifier;
pub mod error;
pub mod localizer;
pub mod morphology;
pub mod neural;
pub mod par;
pub mod pipeline;
pub mod survival;
pub mod volume;

pub use error::{Error, Result};
