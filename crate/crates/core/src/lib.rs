//! Self-supervised monophonic pitch estimation.
//!
//! The pipeline: [`dsp`] turns audio into constant-Q magnitude frames,
//! [`model`] trains a small convolutional encoder so that the difference
//! between its scalar outputs for two shifted CQT slices is proportional
//! to the shift, [`calib`] maps that relative scalar to absolute semitones
//! using synthetic harmonic tones, and [`eval`] scores the result with
//! raw pitch accuracy and voicing recall.

pub mod calib;
pub mod dsp;
pub mod eval;
pub mod model;
pub mod nn;
pub mod parallel;
pub mod real;
pub mod synth;
