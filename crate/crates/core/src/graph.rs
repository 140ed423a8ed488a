//! Bipartite candidate graph between tracklets and current detections.
//!
//! Node order is all tracklets first (`0..m`), then detections (`m..m+n`).
//! A tracklet/detection pair becomes an edge only if the box centers are
//! within the gate distance; everything else is infeasible downstream.

use alloc::vec;
use alloc::vec::Vec;
use thiserror::Error;

use crate::embeddings::AppearanceEmbedding;
use crate::geom::{center_distance, geom_features, BoundingBox, FrameSize, GeomFeatures};
use crate::linalg::Matrix;
use crate::params::{LinearLayer, ParamsError, GEOM_DIM};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("embedding of node {node} has {found} components, expected {expected}")]
    EmbeddingDimension { node: usize, expected: usize, found: usize },
    #[error(transparent)]
    Params(#[from] ParamsError),
}

/// One tracklet (its last instance) or detection.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInstance {
    pub bbox: BoundingBox,
    pub embedding: AppearanceEmbedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGraph {
    m: usize,
    n: usize,
    /// Appearance features, one row per node.
    pub node_features: Matrix,
    pub geom: Vec<GeomFeatures>,
    pub boxes: Vec<BoundingBox>,
    /// `(tracklet index, detection index)`, sorted lexicographically.
    pub edges: Vec<(usize, usize)>,
    /// Current edge scalars, one per edge, always non-negative.
    pub edge_weights: Vec<f64>,
    /// `f_edge` output before the ReLU, kept for the reverse pass.
    pub edge_preact: Vec<f64>,
    edge_lookup: Vec<Option<usize>>,
}

/// Builds the gated candidate graph. Isolated nodes are allowed.
pub fn build_graph(
    tracklets: &[ObjectInstance],
    detections: &[ObjectInstance],
    frame: FrameSize,
    gate_px: f64,
) -> Result<CandidateGraph, GraphError> {
    let m = tracklets.len();
    let n = detections.len();
    let dim = tracklets.iter().chain(detections).next().map_or(0, |o| o.embedding.dim());
    let mut node_features = Matrix::zeros(m + n, dim);
    let mut geom = Vec::with_capacity(m + n);
    let mut boxes = Vec::with_capacity(m + n);
    for (v, obj) in tracklets.iter().chain(detections).enumerate() {
        if obj.embedding.dim() != dim {
            return Err(GraphError::EmbeddingDimension { node: v, expected: dim, found: obj.embedding.dim() });
        }
        node_features.row_mut(v).copy_from_slice(obj.embedding.as_slice());
        geom.push(geom_features(&obj.bbox, frame));
        boxes.push(obj.bbox);
    }
    let mut edges = Vec::new();
    let mut edge_lookup = vec![None; m * n];
    for (i, t) in tracklets.iter().enumerate() {
        for (j, d) in detections.iter().enumerate() {
            if center_distance(&t.bbox, &d.bbox) <= gate_px {
                edge_lookup[i * n + j] = Some(edges.len());
                edges.push((i, j));
            }
        }
    }
    let e = edges.len();
    Ok(CandidateGraph {
        m,
        n,
        node_features,
        geom,
        boxes,
        edges,
        edge_weights: vec![0.0; e],
        edge_preact: vec![0.0; e],
        edge_lookup,
    })
}

impl CandidateGraph {
    /// Number of tracklet nodes.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of detection nodes.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_nodes(&self) -> usize {
        self.m + self.n
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.cols()
    }

    /// Node index of detection `j`.
    #[inline]
    pub fn det_node(&self, j: usize) -> usize {
        self.m + j
    }

    /// Endpoints of edge `e` as node indices.
    #[inline]
    pub fn edge_nodes(&self, e: usize) -> (usize, usize) {
        let (i, j) = self.edges[e];
        (i, self.m + j)
    }

    pub fn edge_index(&self, tracklet: usize, detection: usize) -> Option<usize> {
        self.edge_lookup[tracklet * self.n + detection]
    }

    /// `(tracklet h_app, tracklet h_geom, detection h_app, detection h_geom)`.
    pub fn edge_input(&self, e: usize) -> Vec<f64> {
        let (u, v) = self.edge_nodes(e);
        let mut x = Vec::with_capacity(2 * self.feature_dim() + 2 * GEOM_DIM);
        x.extend_from_slice(self.node_features.row(u));
        x.extend_from_slice(self.geom[u].as_slice());
        x.extend_from_slice(self.node_features.row(v));
        x.extend_from_slice(self.geom[v].as_slice());
        x
    }

    /// Sets every edge weight to `relu(f_edge(edge_input))`.
    pub fn compute_edge_weights(&mut self, f_edge: &LinearLayer) -> Result<(), GraphError> {
        if self.edges.is_empty() {
            return Ok(());
        }
        let expected = 2 * self.feature_dim() + 2 * GEOM_DIM;
        if f_edge.in_dim() != expected || f_edge.out_dim() != 1 {
            return Err(ParamsError::DimensionMismatch { expected, found: f_edge.in_dim() }.into());
        }
        for e in 0..self.edges.len() {
            let pre = f_edge.scalar_pre(&self.edge_input(e));
            self.edge_preact[e] = pre;
            self.edge_weights[e] = pre.max(0.0);
        }
        Ok(())
    }

    /// Drops all message passing: every edge scalar becomes 0, so each node
    /// only sees its own features (the feed-forward ablation).
    pub fn zero_edge_weights(&mut self) {
        self.edge_weights.fill(0.0);
        self.edge_preact.fill(f64::NEG_INFINITY);
    }
}
