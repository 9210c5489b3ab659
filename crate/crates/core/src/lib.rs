//! Three-stage transfer-learning cascade for two-view mammogram
//! classification: patch classifier, single-view classifier, two-view
//! fusion classifier.

pub mod dataio;
pub mod error;
pub mod evalstat;
pub mod netforge;
pub mod patchkit;
pub mod pipecli;
pub mod pixelops;
pub mod rng;
pub mod trainloop;

pub use error::{Error, Result};
