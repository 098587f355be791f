//! PointHR: a high-resolution point cloud network at desk scale.
//!
//! The crate provides exact spatial operators (KNN, farthest point
//! sampling, grid pooling), three knn-based sequence operators with
//! analytic gradients, a precomputed index cache, and the multi-branch
//! multi-stage fusion graph with segmentation and classification heads.
//! Every kernel is deterministic: fixed summation orders, counter-based
//! seeded initialization, and index tie-breaks make runs bit-reproducible
//! regardless of thread count.

pub mod cloud;
pub mod config;
pub mod error;
pub mod mat;
pub mod oracle;
pub mod rng;
pub mod seqops;
pub mod spatial;
pub mod weights;

pub use cloud::PointCloud;
pub use config::{DecoderKind, ModelConfig, OperatorKind};
pub use error::{Error, Result};
pub use mat::Mat;
pub use weights::WeightStore;
