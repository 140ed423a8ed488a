use alloc::vec;
use alloc::vec::Vec;

use crate::geom::iou;
use crate::graph::CandidateGraph;
use crate::linalg::{cosine, Matrix};
use crate::params::{LinearLayer, ParamsError};

/// Score of an infeasible (gated) cell; its Sinkhorn kernel entry is 0.
pub const FORBIDDEN: f64 = f64::NEG_INFINITY;

/// `(m+1) x (n+1)` scores. The last row and column are the slack entries
/// absorbing deaths and births.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    m: usize,
    n: usize,
    pub scores: Matrix,
    gated: Vec<bool>,
}

impl AffinityMatrix {
    /// Wraps an inner `m x n` score matrix (cells equal to [`FORBIDDEN`] are
    /// gated) and appends the slack row and column filled with `s_slack`.
    pub fn with_slack(inner: &Matrix, s_slack: f64) -> Self {
        let (m, n) = inner.shape();
        let mut scores = Matrix::filled(m + 1, n + 1, s_slack);
        let mut gated = vec![false; m * n];
        for i in 0..m {
            for j in 0..n {
                let s = inner[(i, j)];
                scores[(i, j)] = s;
                gated[i * n + j] = s == FORBIDDEN;
            }
        }
        Self { m, n, scores, gated }
    }

    /// Takes a full augmented matrix as is.
    pub fn from_augmented(scores: Matrix) -> Option<Self> {
        let (r, c) = scores.shape();
        if r == 0 || c == 0 {
            return None;
        }
        let (m, n) = (r - 1, c - 1);
        for i in 0..r {
            for j in 0..c {
                let s = scores[(i, j)];
                let slack = i == m || j == n;
                if s.is_nan() || s == f64::INFINITY || (slack && s == FORBIDDEN) {
                    return None;
                }
            }
        }
        let gated = (0..m * n).map(|k| scores[(k / n, k % n)] == FORBIDDEN).collect();
        Some(Self { m, n, scores, gated })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_gated(&self, i: usize, j: usize) -> bool {
        i < self.m && j < self.n && self.gated[i * self.n + j]
    }
}

/// Inputs of the affinity learner for one edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairFeatures {
    pub cosine: f64,
    pub iou: f64,
}

/// Cosine of the interaction features and IoU of the boxes for every edge.
/// With `use_geometry` off the IoU input is held at 0.
pub fn pair_features(h_inter: &Matrix, graph: &CandidateGraph, use_geometry: bool) -> Vec<PairFeatures> {
    (0..graph.edges.len())
        .map(|e| {
            let (u, v) = graph.edge_nodes(e);
            PairFeatures {
                cosine: cosine(h_inter.row(u), h_inter.row(v)),
                iou: if use_geometry { iou(&graph.boxes[u], &graph.boxes[v]) } else { 0.0 },
            }
        })
        .collect()
}

/// Learned score on every edge, [`FORBIDDEN`] elsewhere, `s_slack` on the
/// slack row and column.
pub fn affinity_scores(
    graph: &CandidateGraph,
    features: &[PairFeatures],
    f_affinity: &LinearLayer,
    s_slack: f64,
) -> Result<AffinityMatrix, ParamsError> {
    if f_affinity.in_dim() != 2 || f_affinity.out_dim() != 1 {
        return Err(ParamsError::DimensionMismatch { expected: 2, found: f_affinity.in_dim() });
    }
    let mut inner = Matrix::filled(graph.m(), graph.n(), FORBIDDEN);
    for (&(i, j), f) in graph.edges.iter().zip(features) {
        inner[(i, j)] = f_affinity.scalar_pre(&[f.cosine, f.iou]);
    }
    Ok(AffinityMatrix::with_slack(&inner, s_slack))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::AppearanceEmbedding;
    use crate::geom::{BoundingBox, FrameSize};
    use crate::graph::{build_graph, ObjectInstance};
    use crate::params::Activation;

    fn obj(cx: f64, emb: &[f64]) -> ObjectInstance {
        ObjectInstance {
            bbox: BoundingBox::new(cx, 50.0, 10.0, 10.0).unwrap(),
            embedding: AppearanceEmbedding::new(emb.to_vec()).unwrap(),
        }
    }

    fn sum_layer() -> LinearLayer {
        LinearLayer::new(Matrix::from_rows(&[&[1.0, 1.0]]), vec![0.0], Activation::Identity).unwrap()
    }

    #[test]
    fn identical_pair_scores_two_orthogonal_disjoint_scores_zero() {
        let frame = FrameSize::new(500.0, 500.0).unwrap();
        let g = build_graph(&[obj(50.0, &[1.0, 0.0])], &[obj(50.0, &[2.0, 0.0])], frame, 200.0).unwrap();
        let f = pair_features(&g.node_features, &g, true);
        let a = affinity_scores(&g, &f, &sum_layer(), 0.2).unwrap();
        assert!((a.scores[(0, 0)] - 2.0).abs() < 1e-15);
        assert_eq!(a.scores.row(1), &[0.2, 0.2]);
        assert_eq!(a.scores[(0, 1)], 0.2);

        let g = build_graph(&[obj(50.0, &[1.0, 0.0])], &[obj(150.0, &[0.0, 3.0])], frame, 200.0).unwrap();
        let f = pair_features(&g.node_features, &g, true);
        let a = affinity_scores(&g, &f, &sum_layer(), 0.2).unwrap();
        assert_eq!(a.scores[(0, 0)], 0.0);
    }

    #[test]
    fn gated_cells_carry_the_sentinel() {
        let frame = FrameSize::new(1000.0, 500.0).unwrap();
        let t = [obj(50.0, &[1.0, 0.0]), obj(600.0, &[0.0, 1.0])];
        let d = [obj(60.0, &[1.0, 0.1])];
        let g = build_graph(&t, &d, frame, 200.0).unwrap();
        let f = pair_features(&g.node_features, &g, true);
        let a = affinity_scores(&g, &f, &sum_layer(), 0.2).unwrap();
        assert_eq!(a.scores.shape(), (3, 2));
        assert!(!a.is_gated(0, 0));
        assert!(a.is_gated(1, 0));
        assert_eq!(a.scores[(1, 0)], FORBIDDEN);
    }

    #[test]
    fn random_instance_matches_cellwise_oracle() {
        use crate::rng;
        use rand::Rng as _;
        let mut r = rng::seeded(4);
        let frame = FrameSize::new(640.0, 480.0).unwrap();
        let mk = |r: &mut rng::Rng| ObjectInstance {
            bbox: BoundingBox::new(r.random_range(0.0..300.0), r.random_range(0.0..300.0), r.random_range(20.0..80.0), r.random_range(20.0..80.0))
                .unwrap(),
            embedding: AppearanceEmbedding::new((0..4).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap(),
        };
        let t: Vec<_> = (0..3).map(|_| mk(&mut r)).collect();
        let d: Vec<_> = (0..4).map(|_| mk(&mut r)).collect();
        let g = build_graph(&t, &d, frame, 150.0).unwrap();
        let layer = LinearLayer::new(Matrix::from_rows(&[&[0.7, -1.3]]), vec![0.25], Activation::Identity).unwrap();
        let a = affinity_scores(&g, &pair_features(&g.node_features, &g, true), &layer, 0.2).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                let (ti, dj) = (&t[i], &d[j]);
                if crate::geom::center_distance(&ti.bbox, &dj.bbox) > 150.0 {
                    assert_eq!(a.scores[(i, j)], FORBIDDEN);
                    continue;
                }
                let (x, y) = (ti.embedding.as_slice(), dj.embedding.as_slice());
                let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
                let nx: f64 = x.iter().map(|p| p * p).sum::<f64>().sqrt();
                let ny: f64 = y.iter().map(|p| p * p).sum::<f64>().sqrt();
                let (ax1, ay1, ax2, ay2) = ti.bbox.to_corners();
                let (bx1, by1, bx2, by2) = dj.bbox.to_corners();
                let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
                let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
                let inter = iw * ih;
                let union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
                let expected = 0.7 * dot / (nx * ny) - 1.3 * (inter / union) + 0.25;
                assert!((a.scores[(i, j)] - expected).abs() < 1e-12);
            }
        }
    }
}
