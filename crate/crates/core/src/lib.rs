//! Fusion, refinement and evaluation of 3D brain tumor segmentations.
//!
//! The crate covers the label-map half of a segmentation pipeline:
//!
//! * NIfTI-1 reading and writing ([`nifti`])
//! * canonical reorientation, isotropic resampling, brain cropping,
//!   field-of-view resizing and z-score normalization ([`preprocess`])
//! * connected components, dilation, surfaces and exact Euclidean
//!   distance transforms ([`morphology`])
//! * Dice, 95th-percentile Hausdorff distance and their lesion-wise
//!   variants ([`metrics`])
//! * consensus fusion of several predicted label maps by majority vote or
//!   binary STAPLE run per tumor region ([`fusion`])
//! * two-stage cleanup of enhancing-tumor predictions ([`postprocess`])

pub mod error;
pub mod fusion;
pub mod metrics;
pub mod morphology;
pub mod nifti;
pub mod postprocess;
pub mod preprocess;
pub mod volume;

pub use error::{Error, Result};
