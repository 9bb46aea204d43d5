//! Side-output residual network (SRN) for pixel-wise object symmetry detection.
//!
//! A small reverse-mode autodiff core drives a VGG-style toy backbone whose
//! side-outputs are chained through output residual units and trained with
//! class-balanced deep supervision. Around it sit non-maximal suppression,
//! a precision/recall evaluator, and a synthetic benchmark generator.

pub mod config;
pub mod error;
pub mod evaluation;
pub mod image;
pub(crate) mod io_util;
pub mod model;
pub mod postprocess;
pub mod residual;
pub mod supervision;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use config::RunConfig;
pub use error::{Result, SrnError};
pub use tensor::{Graph, Tensor, Var};
