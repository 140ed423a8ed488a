//! Graph convolution over the candidate graph.
//!
//! Layer `k` computes `H_k = act(D^-1/2 (Z + I) D^-1/2 H_{k-1} W_k)` where `Z`
//! is the symmetric adjacency built from the current edge scalars and `D` its
//! row sums (so every degree is at least 1). Then every edge scalar is
//! refreshed from the new node features with `z = relu(phi(z, h_m, h_n))`.
//! Hidden layers use ReLU; the last layer is linear.

use alloc::vec;
use alloc::vec::Vec;

use crate::graph::CandidateGraph;
use crate::linalg::Matrix;
use crate::params::{LinearLayer, Parameters, ParamsError};

/// Per-layer record of a forward pass. Index 0 of `h` and `z` holds the
/// inputs; `pre`, `z_pre` and `degrees` are per layer (`0..K`).
#[derive(Debug, Clone, PartialEq)]
pub struct GcnState {
    pub h: Vec<Matrix>,
    pub z: Vec<Vec<f64>>,
    pub pre: Vec<Matrix>,
    pub z_pre: Vec<Vec<f64>>,
    pub degrees: Vec<Vec<f64>>,
}

impl GcnState {
    pub fn layers(&self) -> usize {
        self.pre.len()
    }

    /// Final node features.
    pub fn h_inter(&self) -> &Matrix {
        self.h.last().expect("state holds the input layer")
    }
}

/// `1 + sum of incident edge scalars` for every node.
pub fn degrees(graph: &CandidateGraph, z: &[f64]) -> Vec<f64> {
    let mut d = vec![1.0; graph.num_nodes()];
    for (e, &w) in z.iter().enumerate() {
        let (u, v) = graph.edge_nodes(e);
        d[u] += w;
        d[v] += w;
    }
    d
}

/// `D^-1/2 (Z + I) D^-1/2 H` without forming the dense adjacency.
pub fn propagate(graph: &CandidateGraph, z: &[f64], deg: &[f64], h: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(h.rows(), h.cols());
    for v in 0..h.rows() {
        let s = 1.0 / deg[v];
        for (o, x) in out.row_mut(v).iter_mut().zip(h.row(v)) {
            *o = s * x;
        }
    }
    for (e, &w) in z.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let (u, v) = graph.edge_nodes(e);
        let a = w / libm::sqrt(deg[u] * deg[v]);
        for c in 0..h.cols() {
            let hu = h[(u, c)];
            let hv = h[(v, c)];
            out[(u, c)] += a * hv;
            out[(v, c)] += a * hu;
        }
    }
    out
}

/// One propagation layer. Returns `(pre-activation, output)`.
pub fn gcn_layer(
    graph: &CandidateGraph,
    h_prev: &Matrix,
    z_prev: &[f64],
    w: &Matrix,
    last: bool,
) -> Result<(Matrix, Matrix), ParamsError> {
    if h_prev.rows() == 0 {
        return Ok((Matrix::zeros(0, w.cols()), Matrix::zeros(0, w.cols())));
    }
    if h_prev.cols() != w.rows() {
        return Err(ParamsError::DimensionMismatch { expected: w.rows(), found: h_prev.cols() });
    }
    let deg = degrees(graph, z_prev);
    let pre = propagate(graph, z_prev, &deg, h_prev).matmul(w);
    let h = if last { pre.clone() } else { pre.map(|x| x.max(0.0)) };
    Ok((pre, h))
}

/// `phi` input: `(z, h_m, h_n)`.
pub fn edge_update_input(z_prev: f64, h_m: &[f64], h_n: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(1 + h_m.len() + h_n.len());
    x.push(z_prev);
    x.extend_from_slice(h_m);
    x.extend_from_slice(h_n);
    x
}

/// `relu(phi(z_prev, h_m, h_n))`.
pub fn edge_update(z_prev: f64, h_m: &[f64], h_n: &[f64], phi: &LinearLayer) -> Result<f64, ParamsError> {
    let x = edge_update_input(z_prev, h_m, h_n);
    if x.len() != phi.in_dim() {
        return Err(ParamsError::DimensionMismatch { expected: phi.in_dim(), found: x.len() });
    }
    Ok(phi.scalar_pre(&x).max(0.0))
}

/// Whether edge scalars carry messages between nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EdgeMode {
    #[default]
    Propagate,
    /// Every edge scalar is held at 0 on every layer, so the network acts
    /// node-wise like a plain feed-forward stack.
    Isolated,
}

/// Runs all layers from the graph's current node features and edge weights.
pub fn gcn_forward(graph: &CandidateGraph, params: &Parameters) -> Result<GcnState, ParamsError> {
    gcn_forward_mode(graph, params, EdgeMode::Propagate)
}

pub fn gcn_forward_mode(graph: &CandidateGraph, params: &Parameters, mode: EdgeMode) -> Result<GcnState, ParamsError> {
    let k_layers = params.gcn.len();
    let mut state = GcnState {
        h: vec![graph.node_features.clone()],
        z: vec![match mode {
            EdgeMode::Propagate => graph.edge_weights.clone(),
            EdgeMode::Isolated => vec![0.0; graph.edges.len()],
        }],
        pre: Vec::with_capacity(k_layers),
        z_pre: Vec::with_capacity(k_layers),
        degrees: Vec::with_capacity(k_layers),
    };
    for (k, w) in params.gcn.iter().enumerate() {
        let h_prev = &state.h[k];
        let z_prev = &state.z[k];
        state.degrees.push(degrees(graph, z_prev));
        let (pre, h) = gcn_layer(graph, h_prev, z_prev, w, k + 1 == k_layers)?;
        let d = h.cols();
        if params.phi.in_dim() != 1 + 2 * d {
            return Err(ParamsError::DimensionMismatch { expected: params.phi.in_dim(), found: 1 + 2 * d });
        }
        let mut z_pre = Vec::with_capacity(z_prev.len());
        let mut z_next = Vec::with_capacity(z_prev.len());
        for (e, &z) in z_prev.iter().enumerate() {
            if mode == EdgeMode::Isolated {
                z_pre.push(f64::NEG_INFINITY);
                z_next.push(0.0);
                continue;
            }
            let (u, v) = graph.edge_nodes(e);
            let p = params.phi.scalar_pre(&edge_update_input(z, h.row(u), h.row(v)));
            z_pre.push(p);
            z_next.push(p.max(0.0));
        }
        state.pre.push(pre);
        state.h.push(h);
        state.z_pre.push(z_pre);
        state.z.push(z_next);
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::AppearanceEmbedding;
    use crate::geom::{BoundingBox, FrameSize};
    use crate::graph::{build_graph, ObjectInstance};
    use crate::params::{Activation, ModelConfig};
    use crate::rng;
    use rand::Rng as _;

    fn graph_from(m: usize, n: usize, feats: &Matrix, gate: f64) -> CandidateGraph {
        let objs: Vec<ObjectInstance> = (0..m + n)
            .map(|v| ObjectInstance {
                bbox: BoundingBox::new(10.0 * v as f64, 0.0, 5.0, 5.0).unwrap(),
                embedding: AppearanceEmbedding::new(feats.row(v).to_vec()).unwrap(),
            })
            .collect();
        build_graph(&objs[..m], &objs[m..], FrameSize::new(100.0, 100.0).unwrap(), gate).unwrap()
    }

    /// Dense reference: explicit adjacency, degree matrix and products.
    fn dense_layer(graph: &CandidateGraph, h: &Matrix, z: &[f64], w: &Matrix, last: bool) -> Matrix {
        let nn = graph.num_nodes();
        let mut a = Matrix::identity(nn);
        for (e, &zw) in z.iter().enumerate() {
            let (u, v) = graph.edge_nodes(e);
            a[(u, v)] = zw;
            a[(v, u)] = zw;
        }
        let mut d_inv_sqrt = Matrix::zeros(nn, nn);
        for (v, s) in a.row_sums().into_iter().enumerate() {
            d_inv_sqrt[(v, v)] = 1.0 / libm::sqrt(s);
        }
        let out = d_inv_sqrt.matmul(&a).matmul(&d_inv_sqrt).matmul(h).matmul(w);
        if last {
            out
        } else {
            out.map(|x| x.max(0.0))
        }
    }

    fn dense_forward(graph: &CandidateGraph, p: &Parameters) -> Matrix {
        let mut h = graph.node_features.clone();
        let mut z = graph.edge_weights.clone();
        for (k, w) in p.gcn.iter().enumerate() {
            h = dense_layer(graph, &h, &z, w, k + 1 == p.gcn.len());
            z = (0..z.len())
                .map(|e| {
                    let (u, v) = graph.edge_nodes(e);
                    let mut x = vec![z[e]];
                    x.extend_from_slice(h.row(u));
                    x.extend_from_slice(h.row(v));
                    p.phi.forward(&x).unwrap()[0]
                })
                .collect();
        }
        h
    }

    fn rel_close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
        a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| (x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0))
    }

    #[test]
    fn single_isolated_node_is_identity() {
        let feats = Matrix::from_rows(&[&[1.5, -2.0]]);
        let g = graph_from(1, 0, &feats, 200.0);
        let (_, h) = gcn_layer(&g, &feats, &[], &Matrix::identity(2), true).unwrap();
        assert_eq!(h, feats);
    }

    #[test]
    fn empty_graph_has_empty_output() {
        let g = build_graph(&[], &[], FrameSize::new(100.0, 100.0).unwrap(), 200.0).unwrap();
        let p = Parameters::init(&ModelConfig { d_app: 4, d_inter: 3, layers: 2 }, 0).unwrap();
        let s = gcn_forward(&g, &p).unwrap();
        assert_eq!(s.h_inter().shape(), (0, 3));
    }

    #[test]
    fn zero_edge_weight_keeps_nodes_separate() {
        let feats = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let g = graph_from(1, 1, &feats, 200.0);
        assert_eq!(g.edges.len(), 1);
        let (_, h) = gcn_layer(&g, &feats, &[0.0], &Matrix::identity(2), true).unwrap();
        assert_eq!(h, feats);
    }

    #[test]
    fn weighted_edge_matches_hand_computation() {
        // Z~ = [[1, 3], [3, 1]], degrees (4, 4): rows become (1/4, 3/4) and (3/4, 1/4).
        let feats = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let g = graph_from(1, 1, &feats, 200.0);
        let (_, h) = gcn_layer(&g, &feats, &[3.0], &Matrix::identity(2), true).unwrap();
        let expected = Matrix::from_rows(&[&[0.25, 0.75], &[0.75, 0.25]]);
        assert!(h.max_abs_diff(&expected) < 1e-15);
        assert!(h.max_abs_diff(&dense_layer(&g, &feats, &[3.0], &Matrix::identity(2), true)) < 1e-15);
    }

    #[test]
    fn edge_update_examples() {
        let mut phi = LinearLayer::zeros(5, 1, Activation::Relu);
        assert_eq!(edge_update(0.7, &[1.0, 2.0], &[3.0, 4.0], &phi).unwrap(), 0.0);
        phi.weights[(0, 0)] = 1.0;
        assert_eq!(edge_update(0.7, &[1.0, 2.0], &[3.0, 4.0], &phi).unwrap(), 0.7);
        phi.weights = Matrix::from_rows(&[&[0.5, -1.0, 0.25, 2.0, -0.5]]);
        phi.bias[0] = 0.1;
        let oracle = 0.5 * 0.7 - 1.0 * 1.0 + 0.25 * 2.0 + 2.0 * 3.0 - 0.5 * 4.0 + 0.1;
        assert!((edge_update(0.7, &[1.0, 2.0], &[3.0, 4.0], &phi).unwrap() - oracle).abs() < 1e-15);
        assert!(edge_update(0.7, &[1.0], &[3.0, 4.0], &phi).is_err());
    }

    #[test]
    fn edgeless_identity_network() {
        let feats = Matrix::from_rows(&[&[1.0, -2.0], &[-0.5, 3.0], &[2.0, 2.0]]);
        let g = graph_from(3, 0, &feats, 200.0);
        let mut p = Parameters::zeros(&ModelConfig { d_app: 2, d_inter: 2, layers: 2 });
        p.gcn = vec![Matrix::identity(2), Matrix::identity(2)];
        let state = gcn_forward(&g, &p).unwrap();
        assert_eq!(state.h_inter(), &feats.map(|x| x.max(0.0)));
    }

    #[test]
    fn identical_features_give_identical_rows() {
        let feats = { let r: &[f64] = &[0.3, 0.9, -0.2]; Matrix::from_rows(&[r; 4]) };
        let g = graph_from(2, 2, &feats, 1e9);
        let mut p = Parameters::init(&ModelConfig { d_app: 3, d_inter: 4, layers: 2 }, 5).unwrap();
        p.phi.bias[0] = 0.3;
        let mut g = g;
        // Constant edge weights keep both sides symmetric.
        g.edge_weights.fill(0.8);
        let s = gcn_forward(&g, &p).unwrap();
        let h = s.h_inter();
        assert!(h.row(0).iter().zip(h.row(1)).all(|(a, b)| (a - b).abs() < 1e-14));
        assert!(h.row(2).iter().zip(h.row(3)).all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn forward_matches_dense_oracle_on_random_graphs() {
        let mut r = rng::seeded(11);
        for trial in 0..30u64 {
            let m = r.random_range(1..=4);
            let n = r.random_range(1..=(8 - m));
            let cfg = ModelConfig { d_app: 5, d_inter: 3, layers: 1 + (trial % 3) as usize };
            let feats = Matrix::from_vec(m + n, 5, (0..(m + n) * 5).map(|_| r.random_range(-1.0..1.0)).collect());
            let mut g = graph_from(m, n, &feats, 35.0);
            let mut p = Parameters::init(&cfg, trial).unwrap();
            p.phi.bias[0] = 0.5;
            p.f_edge.bias[0] = 0.4;
            g.compute_edge_weights(&p.f_edge).unwrap();
            let s = gcn_forward(&g, &p).unwrap();
            assert!(rel_close(s.h_inter(), &dense_forward(&g, &p), 1e-10), "trial {trial}");
            assert!(s.degrees.iter().flatten().all(|&d| d >= 1.0));
        }
    }

    #[test]
    fn no_leakage_without_edge_weight() {
        let mut r = rng::seeded(3);
        let cfg = ModelConfig { d_app: 4, d_inter: 3, layers: 2 };
        let p = Parameters::init(&cfg, 2).unwrap();
        let feats = Matrix::from_vec(5, 4, (0..20).map(|_| r.random_range(-1.0..1.0)).collect());
        let g = graph_from(2, 3, &feats, 1e9);
        let mut perturbed = g.clone();
        perturbed.node_features[(0, 1)] += 0.7;
        let base = gcn_forward_mode(&g, &p, EdgeMode::Isolated).unwrap();
        let after = gcn_forward_mode(&perturbed, &p, EdgeMode::Isolated).unwrap();
        for v in 1..5 {
            assert_eq!(base.h_inter().row(v), after.h_inter().row(v));
        }
        assert_ne!(base.h_inter().row(0), after.h_inter().row(0));

        // Same with propagation enabled but a phi that can only output 0.
        let mut silent = p.clone();
        silent.phi = LinearLayer::zeros(silent.phi.in_dim(), 1, Activation::Relu);
        let base = gcn_forward(&g, &silent).unwrap();
        let after = gcn_forward(&perturbed, &silent).unwrap();
        for v in 1..5 {
            assert_eq!(base.h_inter().row(v), after.h_inter().row(v));
        }
    }
}
