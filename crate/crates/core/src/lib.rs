//! Data-driven output regulation for input-affine nonlinear plants.
//!
//! From one sampled experiment the crate solves a semidefinite program
//! that enforces incremental passivity of the closed loop, then closes the
//! loop with a passive internal model of the exosystem.

extern crate openblas_src;

pub mod data;
pub mod error;
pub mod examples;
pub mod instances;
pub mod linalg;
pub mod model;
pub mod regulator;
pub mod sdp;
pub mod simulate;
pub mod stabilization;
pub mod synthesis;
pub mod verify;

pub use error::{Error, Result};
pub use model::{Exosystem, FunctionLibrary, InputSignal, PlantModel, Term};
pub use synthesis::{synthesize, SynthesisMode, SynthesisOptions, SynthesisResult};
