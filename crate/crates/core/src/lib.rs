//! Deep nearest centroids: a nonparametric classifier that represents every
//! class by K unit-norm sub-centroids in a learned embedding space and
//! predicts by winner-takes-all cosine similarity.
//!
//! Training alternates two steps: class-wise online clustering (a
//! Sinkhorn-Knopp relaxation of balanced assignment, run over the current
//! batch plus a FIFO memory of recent embeddings) discovers the sub-centroids,
//! and cross-entropy over per-class best similarities trains the encoder —
//! the sub-centroids themselves are moved only by momentum blends of cluster
//! means, never by backprop. Sub-centroids can be anchored to real training
//! observations, which buys exemplar-level IF...THEN explanations at a small
//! accuracy cost. A parametric linear-softmax head trained on identical
//! encoders serves as the comparison baseline.

pub mod bank;
pub mod baseline;
pub mod error;
pub mod explain;
pub mod gradcheck;
pub mod head;
pub mod io;
pub mod memory;
pub mod net;
pub mod numerics;
pub mod rng;
pub mod sinkhorn;
pub mod trainer;

pub use bank::{MomentumConfig, SubCentroidBank};
pub use baseline::LinearClassifier;
pub use error::{Error, Result};
pub use explain::{Rule, SimilarityReport};
pub use head::{LossConfig, Prediction};
pub use io::{Checkpoint, LabeledDataset, SyntheticSpec};
pub use memory::FeatureMemory;
pub use net::EncoderParams;
pub use numerics::Matrix;
pub use sinkhorn::{AssignmentMatrix, SinkhornConfig};
pub use trainer::{
    ClassifierKind, ClassifierState, ClusterAlgo, KSpec, Metrics, TrainConfig, TrainState, Trainer,
};
