//! Synthetic FMCW radar hand-gesture recognition.
//!
//! The crate is organised along the processing chain:
//!
//! * [`radar_sim`] generates complex baseband returns for parametric hand gestures.
//! * [`dsp`] turns raw frames into range-Doppler maps, runs CA-CFAR, estimates
//!   azimuth and folds 128 frames into a range/speed/azimuth (RSA) image.
//! * [`nn`] is a small tensor and layer stack with hand-written backward passes.
//! * [`models`] builds the VGG-10 / ResNet-20 classifiers and the DTW template baseline.
//! * [`dataset`] synthesises, augments, splits and persists labelled RSA images.
//! * [`eval`] computes per-class accuracy, confusion matrices and CSV reports.

pub mod dataset;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod models;
pub mod nn;
pub mod radar_sim;
pub mod selftest;

pub use error::{Error, Result};
pub use radar_sim::GestureClass;

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Number of gesture classes.
pub const NUM_CLASSES: usize = 4;
