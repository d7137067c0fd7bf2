//! Combinatorial meta-class embeddings for open-set retrieval and clustering.
//!
//! An encoder maps feature vectors to an embedding that splits into M
//! subvectors. Each subvector is softly assigned to one of K_m learned
//! prototypes, so the concatenated assignment lives on a product of M small
//! codebooks. Classes seen during training supervise the prototypes through
//! per-set meta-class labels; unlabeled and novel-class data shape the space
//! through a pseudo-positive contrastive term and a cross-view consistency
//! term. Trained models support compact bit-packed codes, asymmetric-distance
//! retrieval, and open-set cluster evaluation.
//!
//! All numeric code is generic over [`Scalar`] (f32 or f64); the pipeline
//! default is [`Real`]. On-disk formats always store f32 features and
//! parameters.

pub mod cluster_eval;
pub mod config;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod kmeans;
pub mod metascheme;
pub mod model;
pub mod objectives;
pub mod retrieval;
pub mod rng;
pub mod scalar;
pub mod trainer;
pub mod vecmath;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default scalar for the end-to-end pipeline.
pub type Real = f64;

/// Model instantiated at the pipeline scalar.
pub type RealModel = model::Model<Real>;
