//! Tri-modal (text, video, audio) contrastive training on a toy encoder.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! * [`data`] generates synthetic aligned triples;
//! * [`model`] defines the per-modality encoders and the fusion head;
//! * [`objectives`] builds the pairwise, distillation and tuple losses;
//! * [`trainer`] runs the per-step training algorithm;
//! * [`eval`] scores the 12 query→target retrieval directions;
//! * [`compress`] and [`diagnostics`] cover post-hoc compression,
//!   triple-cosine geometry and attractor concentration;
//! * [`config`], [`io`], [`report`] and [`ablation`] tie it together for
//!   the command line.

pub mod ablation;
pub mod compress;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod io;
pub mod modality;
pub mod model;
pub mod objectives;
pub mod report;
pub mod trainer;

pub use embedding::EmbeddingSet;
pub use error::{Error, Result};
pub use modality::{Modality, ViewSet};
pub use trimodal_autodiff as autodiff;
pub use trimodal_autodiff::Tensor;
