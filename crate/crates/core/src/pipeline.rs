//! One full forward pass of the association model for a tracklet set and a
//! detection set.

use thiserror::Error;

use crate::assoc::{self, AffinityMatrix, AssocError, NormalizedAssignment, PairFeatures, SinkhornConfig, SinkhornTrace};
use crate::gcnn::{gcn_forward_mode, EdgeMode, GcnState};
use crate::geom::FrameSize;
use crate::graph::{build_graph, CandidateGraph, GraphError, ObjectInstance};
use crate::params::{Parameters, ParamsError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Assoc(#[from] AssocError),
}

impl PipelineError {
    pub fn is_invariant_violation(&self) -> bool {
        matches!(self, PipelineError::Assoc(e) if e.is_invariant_violation())
    }
}

/// Architecture switches for ablation runs. The default is the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Ablation {
    /// Feed only the cosine similarity to the affinity learner (IoU held at 0).
    pub appearance_only: bool,
    /// Zero every edge scalar on every layer: no message passing.
    pub feed_forward: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    /// Maximum center distance, in pixels, for a candidate pair.
    pub gate_px: f64,
    pub sinkhorn: SinkhornConfig,
    pub ablation: Ablation,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { gate_px: 200.0, sinkhorn: SinkhornConfig::default(), ablation: Ablation::default() }
    }
}

/// Intermediate values of a forward pass, enough to run the reverse pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub graph: CandidateGraph,
    pub edge_mode: EdgeMode,
    pub gcn: GcnState,
    pub pair_features: alloc::vec::Vec<PairFeatures>,
    pub scores: AffinityMatrix,
    pub assignment: NormalizedAssignment,
    pub sinkhorn: SinkhornTrace,
}

pub fn forward(
    tracklets: &[ObjectInstance],
    detections: &[ObjectInstance],
    frame: FrameSize,
    params: &Parameters,
    config: &PipelineConfig,
) -> Result<ForwardTrace, PipelineError> {
    let mut graph = build_graph(tracklets, detections, frame, config.gate_px)?;
    let d_app = params.config().d_app;
    if graph.num_nodes() > 0 && graph.feature_dim() != d_app {
        return Err(ParamsError::DimensionMismatch { expected: d_app, found: graph.feature_dim() }.into());
    }
    let edge_mode = if config.ablation.feed_forward {
        graph.zero_edge_weights();
        EdgeMode::Isolated
    } else {
        graph.compute_edge_weights(&params.f_edge)?;
        EdgeMode::Propagate
    };
    let gcn = if graph.num_nodes() > 0 {
        gcn_forward_mode(&graph, params, edge_mode)?
    } else {
        // Nothing to propagate; keep a well-formed empty state.
        let empty = crate::linalg::Matrix::zeros(0, params.config().d_inter);
        GcnState {
            h: alloc::vec![graph.node_features.clone(), empty],
            z: alloc::vec![alloc::vec::Vec::new(); 2],
            pre: alloc::vec![crate::linalg::Matrix::zeros(0, params.config().d_inter)],
            z_pre: alloc::vec![alloc::vec::Vec::new()],
            degrees: alloc::vec![alloc::vec::Vec::new()],
        }
    };
    let pair_features = assoc::pair_features(gcn.h_inter(), &graph, !config.ablation.appearance_only);
    let scores = assoc::affinity_scores(&graph, &pair_features, &params.f_affinity, config.sinkhorn.s_slack)?;
    let (assignment, sinkhorn) = assoc::sinkhorn_traced(&scores, config.sinkhorn.entropy, config.sinkhorn.iters)?;
    Ok(ForwardTrace { graph, edge_mode, gcn, pair_features, scores, assignment, sinkhorn })
}
