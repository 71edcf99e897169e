//! Identity-leakage experiments on synthetic biometric data.
//!
//! Authentic identities are drawn as unit prototypes with Gaussian
//! within-class noise; a generator fitted to them produces synthetic
//! identities that deliberately retain part of each authentic prototype.
//! Small embedding networks are trained on synthetic subsets with a
//! classification margin loss, a teacher-matching loss, or a mixture, and
//! then scored with standard verification metrics.

pub mod bioeval;
pub mod datagen;
pub mod embedder;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod losses;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
pub use linalg::Matrix;
