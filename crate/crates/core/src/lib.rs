//! Multi-perspective answer summarization toolkit: thread filtering,
//! unsupervised silver-data construction, summary rewards and the
//! self-critical training objective.
//!
//! The numeric modules are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the `f64` instantiations used by the pipeline and CLI.

pub mod augment;
pub mod corpus;
pub mod error;
pub mod geometry;
pub mod rewards;
pub mod rltrain;
pub mod scalar;
pub mod scoring;
pub mod seed;
pub mod textproc;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Embeddings = geometry::EmbeddingMatrix<f64>;
pub type Point = geometry::Point2<f64>;
pub type Policy = rltrain::ToyPolicy<f64>;
pub type Task = rltrain::ExtractiveTask<f64>;
pub type Trace = rltrain::PolicyTrace<f64>;
pub type Weights = rltrain::MixWeights<f64>;
