//! Token-level text sanitization under metric differential privacy.
//!
//! The crate provides an embedding table with exact cosine nearest-neighbor
//! search ([`embeddings`]), Gaussian context windows ([`stencil`]),
//! multivariate Laplacian noise ([`noise`]), five sanitization mechanisms
//! ([`mechanisms`]), a streaming corpus pipeline ([`corpus`]) and evaluation
//! tools: a nearest-neighbor reconstruction attack, a Monte-Carlo privacy
//! audit and a parameter sweep ([`evaluation`]).
//!
//! Data-parallel loops run on rayon when the `parallel` feature is enabled
//! (the default); see [`par::Exec`].

pub mod corpus;
pub mod embeddings;
mod error;
pub mod evaluation;
pub mod mechanisms;
pub mod noise;
pub mod par;
pub mod rng;
pub mod stencil;

pub use crate::embeddings::{EmbeddingTable, LoadOptions, Neighbor, TokenId};
pub use crate::error::{Error, Result};
pub use crate::mechanisms::{MechanismConfig, MechanismKind, SanitizedToken, Sanitizer};
pub use crate::rng::RngState;
