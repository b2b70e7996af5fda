//! Knee cartilage morphometrics library.
//!
//! Pipeline pieces, roughly bottom-up:
//! - [`nifti`]: NIfTI-1 volume and vector-field I/O
//! - [`volume`]: image/label types and standardization (RAS+ reorientation,
//!   resampling, intensity normalization, masking, LR flipping)
//! - [`field`]: stationary-velocity-field deformations (exponentiation,
//!   composition, warping, field resampling, Jacobians)
//! - [`reg`]: similarity losses, the two-stage joint template learning and
//!   registration optimizer, template mask construction, rigid pose search
//! - [`mesh`]: marching-cubes surfaces, bone-cartilage interface extraction,
//!   DSC/HD95/area metrics, thickness mapping
//! - [`morph`]: laterality/pose standardization, tibial parcellation,
//!   full-thickness cartilage loss estimation, per-region reports
//! - [`synth`]: deterministic synthetic phantoms for tests and demos

pub mod error;
pub mod geom;
pub mod grid;

pub mod field;
pub mod mesh;
pub mod morph;
pub mod nifti;
pub mod reg;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};
