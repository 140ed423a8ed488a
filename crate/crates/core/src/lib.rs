//! Association engine for online multi-object tracking.
//!
//! Tracklets (the last observed instance of each identity) and the current
//! frame's detections form a gated bipartite candidate graph. A small graph
//! convolutional network turns appearance embeddings into interaction
//! features, a linear metric learner scores every candidate pair from cosine
//! similarity and IoU, and a slack-augmented Sinkhorn normalization turns the
//! scores into a soft assignment that respects the one-to-one constraints
//! while allowing births and deaths. At inference time the soft assignment is
//! thresholded and binarized with the Hungarian method.
//!
//! The whole forward path is differentiable; [`train`] carries the matching
//! reverse pass, an Adam optimizer, and a finite-difference gradient checker.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the command
//! line, and everything touching the filesystem live in the `sinkmot` crate.

#![no_std]
#![warn(missing_debug_implementations, rust_2018_idioms)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod assoc;
pub mod embeddings;
pub mod gcnn;
pub mod geom;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod tracker;
pub mod train;

pub use assoc::{AffinityMatrix, MatchResult, NormalizedAssignment, SinkhornConfig};
pub use embeddings::{AppearanceEmbedding, EmbeddingSource, SyntheticProvider};
pub use geom::{BoundingBox, FrameSize, GeomFeatures};
pub use graph::CandidateGraph;
pub use linalg::Matrix;
pub use params::{LinearLayer, ModelConfig, ParameterStore, Parameters};
pub use pipeline::{Ablation, PipelineConfig};
pub use tracker::{Tracker, TrackerConfig};
