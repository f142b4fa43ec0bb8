//! Simulation, reconstruction and scoring of twin-beam intensity correlations.
//!
//! The pipeline runs in five layers: [`trace`] holds digitized photocurrent
//! sequences, [`sim`] produces squeezed twin beams and disrupts one of them,
//! [`neural`] and [`training`] learn to reconstruct the disrupted beam, and
//! [`dsp`] plus [`info`] score the result, tied together by [`eval`].

pub mod dsp;
pub mod error;
pub mod eval;
pub mod info;
pub mod neural;
pub mod rng;
pub mod sim;
pub mod trace;
pub mod training;

pub use error::{Error, Result};
