//! Sequential social recommendation: a causal transformer over each user's
//! behavior sequence, an edge-attributed graph attention network over their
//! sampled social neighborhood, and a linear fusion of the two — trained
//! with a negative-sampled softmax and sparse Adam, evaluated with
//! leave-latest-out ranking metrics, and served through locality-sensitive
//! hashing over the learned embeddings.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod gat;
pub mod mat;
pub mod model;
pub mod params;
pub mod retrieval;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod tape;
pub mod train;
pub mod transformer;

pub use config::{RunConfig, SampleMode, Variant};
pub use error::{Error, Result};
pub use mat::Mat;
pub use model::{Model, UserRep};
pub use scalar::{Dtype, Scalar};
