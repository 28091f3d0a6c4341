//! Scanpath comparison on image-patch features.
//!
//! Each fixation of a scanpath is cropped out of its stimulus as a square
//! patch and turned into a feature vector. Two scanpaths are then compared
//! with a Smith-Waterman local alignment whose match score is a constant
//! minus the feature distance of the two patches. On top of the resulting
//! similarity matrices the crate provides Ward clustering, leave-one-out
//! nearest-neighbour classification of viewer groups, Cohen's kappa and an
//! archetype ranking.
//!
//! The pipeline, module by module:
//!
//! * [`model`]: fixations, scanpaths, stimuli, manifest and CSV I/O.
//! * [`patch`]: border-shifted patch extraction.
//! * [`embed`]: the built-in descriptor and the `.dsem` interchange format.
//! * [`align`]: feature-distance local alignment, calibration, the
//!   symbolic AOI baseline.
//! * [`pairwise`]: all-pairs similarity and per-subject aggregation.
//! * [`analysis`]: clustering, kNN classification, kappa, archetypes.
//! * [`synth`]: synthetic labelled datasets.
//! * [`pipeline`]: end-to-end orchestration used by the command line tool.

pub mod align;
pub mod analysis;
pub mod embed;
mod error;
pub mod fmt;
pub mod model;
pub mod pairwise;
pub mod patch;
pub mod pgm;
pub mod pipeline;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
