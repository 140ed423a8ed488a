//! Reverse pass over a recorded forward trace, written at matrix level:
//! loss -> Sinkhorn passes -> kernel -> affinity learner -> cosine -> GCN
//! layers and edge updates -> edge learner.

use alloc::vec;
use alloc::vec::Vec;

use super::loss::{wbce_loss_grad, GroundTruth, LossConfig};
use super::TrainError;
use crate::assoc::{col_targets, row_targets, Axis, SinkhornTrace};
use crate::gcnn::{edge_update_input, propagate, EdgeMode};
use crate::linalg::{dot, norm, Matrix};
use crate::params::Parameters;
use crate::pipeline::ForwardTrace;

/// Loss of one forward trace and its gradient for every parameter.
pub fn loss_and_grad(
    trace: &ForwardTrace,
    gt: &GroundTruth,
    loss: &LossConfig,
    params: &Parameters,
) -> Result<(f64, Parameters), TrainError> {
    let (l, d_star) = wbce_loss_grad(&trace.assignment.s_star, gt, loss)?;
    Ok((l, backward(trace, &d_star, params)))
}

/// Gradients of a scalar objective given its gradient `d_star` with respect
/// to the normalized assignment (slack cells included).
pub fn backward(trace: &ForwardTrace, d_star: &Matrix, params: &Parameters) -> Parameters {
    let mut grads = params.zeros_like();
    let graph = &trace.graph;
    let (m, n) = (graph.m(), graph.n());
    let d_scores = sinkhorn_backward(&trace.sinkhorn, m, n, d_star);
    if graph.edges.is_empty() {
        return grads;
    }

    // Affinity learner: s = a0 * cos + a1 * iou + b.
    let a = &params.f_affinity.weights;
    let mut d_cos = vec![0.0; graph.edges.len()];
    for (e, (&(i, j), f)) in graph.edges.iter().zip(&trace.pair_features).enumerate() {
        let g = d_scores[(i, j)];
        grads.f_affinity.weights[(0, 0)] += g * f.cosine;
        grads.f_affinity.weights[(0, 1)] += g * f.iou;
        grads.f_affinity.bias[0] += g;
        d_cos[e] = g * a[(0, 0)];
    }

    let h_inter = trace.gcn.h_inter();
    let mut d_h = Matrix::zeros(h_inter.rows(), h_inter.cols());
    for (e, &g) in d_cos.iter().enumerate() {
        let (u, v) = graph.edge_nodes(e);
        cosine_backward(h_inter, u, v, g, &mut d_h);
    }

    let mut d_z = vec![0.0; graph.edges.len()];
    for k in (0..trace.gcn.layers()).rev() {
        let (d_h_prev, d_z_prev) = layer_backward(trace, k, params, &mut grads, d_h, &d_z);
        d_h = d_h_prev;
        d_z = d_z_prev;
    }

    if trace.edge_mode == EdgeMode::Propagate {
        for (e, &g) in d_z.iter().enumerate() {
            if graph.edge_preact[e] > 0.0 && g != 0.0 {
                for (w, x) in grads.f_edge.weights.row_mut(0).iter_mut().zip(graph.edge_input(e)) {
                    *w += g * x;
                }
                grads.f_edge.bias[0] += g;
            }
        }
    }
    grads
}

/// Gradient with respect to the score matrix. Slack scores are constants and
/// gated cells have a zero kernel, so only edge cells receive a value.
fn sinkhorn_backward(trace: &SinkhornTrace, m: usize, n: usize, d_star: &Matrix) -> Matrix {
    let rt = row_targets(m, n);
    let ct = col_targets(m, n);
    let mut g = d_star.clone();
    for pass in trace.passes.iter().rev() {
        let y = &pass.output;
        match pass.axis {
            // y_ij = t_i x_ij / r_i  =>  dx_ij = (t_i g_ij - sum_k g_ik y_ik) / r_i
            Axis::Row => {
                for (i, (&r, &t)) in pass.sums.iter().zip(&rt).enumerate() {
                    let c = dot(g.row(i), y.row(i));
                    for v in g.row_mut(i) {
                        *v = if r > 0.0 { (t * *v - c) / r } else { 0.0 };
                    }
                }
            }
            Axis::Column => {
                let cols = y.cols();
                let c: Vec<f64> = (0..cols).map(|j| (0..y.rows()).map(|i| g[(i, j)] * y[(i, j)]).sum()).collect();
                for i in 0..y.rows() {
                    for (j, v) in g.row_mut(i).iter_mut().enumerate() {
                        let r = pass.sums[j];
                        *v = if r > 0.0 { (ct[j] * *v - c[j]) / r } else { 0.0 };
                    }
                }
            }
        }
    }
    // kernel = exp(l s)
    let mut d_s = Matrix::zeros(m + 1, n + 1);
    for i in 0..m {
        for j in 0..n {
            d_s[(i, j)] = g[(i, j)] * trace.entropy * trace.kernel[(i, j)];
        }
    }
    d_s
}

/// Adds `g * d cos(h_u, h_v)` to rows `u` and `v` of `d_h`. The cosine is a
/// constant 0 when either row is zero.
fn cosine_backward(h: &Matrix, u: usize, v: usize, g: f64, d_h: &mut Matrix) {
    let (a, b) = (h.row(u), h.row(v));
    let (na, nb) = (norm(a), norm(b));
    if g == 0.0 || na == 0.0 || nb == 0.0 {
        return;
    }
    let cos = dot(a, b) / (na * nb);
    let inv = 1.0 / (na * nb);
    for c in 0..h.cols() {
        let da = b[c] * inv - cos * a[c] / (na * na);
        let db = a[c] * inv - cos * b[c] / (nb * nb);
        d_h[(u, c)] += g * da;
        d_h[(v, c)] += g * db;
    }
}

/// Reverse of layer `k` (inputs `h[k]`, `z[k]`; outputs `h[k+1]`, `z[k+1]`).
/// Takes the gradients of the outputs, returns those of the inputs.
fn layer_backward(
    trace: &ForwardTrace,
    k: usize,
    params: &Parameters,
    grads: &mut Parameters,
    mut d_h: Matrix,
    d_z_next: &[f64],
) -> (Matrix, Vec<f64>) {
    let graph = &trace.graph;
    let gcn = &trace.gcn;
    let h_in = &gcn.h[k];
    let h_out = &gcn.h[k + 1];
    let z = &gcn.z[k];
    let deg = &gcn.degrees[k];
    let d = h_out.cols();
    let mut d_z = vec![0.0; z.len()];

    // Edge update: z_next = relu(phi(z, h_out[u], h_out[v])).
    let phi_w = params.phi.weights.row(0);
    for (e, &g) in d_z_next.iter().enumerate() {
        if !(gcn.z_pre[k][e] > 0.0) || g == 0.0 {
            continue;
        }
        let (u, v) = graph.edge_nodes(e);
        let x = edge_update_input(z[e], h_out.row(u), h_out.row(v));
        for (w, xi) in grads.phi.weights.row_mut(0).iter_mut().zip(&x) {
            *w += g * xi;
        }
        grads.phi.bias[0] += g;
        d_z[e] += g * phi_w[0];
        for c in 0..d {
            d_h[(u, c)] += g * phi_w[1 + c];
            d_h[(v, c)] += g * phi_w[1 + d + c];
        }
    }

    // Activation (ReLU on hidden layers, identity on the last).
    let last = k + 1 == gcn.layers();
    let mut d_pre = d_h;
    if !last {
        for (g, &p) in d_pre.as_mut_slice().iter_mut().zip(gcn.pre[k].as_slice()) {
            if !(p > 0.0) {
                *g = 0.0;
            }
        }
    }

    // pre = P W with P = Â h_in.
    let w = &params.gcn[k];
    let p = propagate(graph, z, deg, h_in);
    let dw = p.t_matmul(&d_pre);
    for (acc, v) in grads.gcn[k].as_mut_slice().iter_mut().zip(dw.as_slice()) {
        *acc += v;
    }
    let d_p = d_pre.matmul_t(w);
    let d_h_in = propagate(graph, z, deg, &d_p);

    if trace.edge_mode == EdgeMode::Propagate {
        // Â_vv = 1 / d_v, Â_uv = z_e / sqrt(d_u d_v), d_v = 1 + sum of incident z.
        let mut d_deg: Vec<f64> = (0..graph.num_nodes())
            .map(|v| -dot(d_p.row(v), h_in.row(v)) / (deg[v] * deg[v]))
            .collect();
        for (e, &ze) in z.iter().enumerate() {
            let (u, v) = graph.edge_nodes(e);
            let s = dot(d_p.row(u), h_in.row(v)) + dot(d_p.row(v), h_in.row(u));
            let root = libm::sqrt(deg[u] * deg[v]);
            d_z[e] += s / root;
            let a_uv = ze / root;
            d_deg[u] -= 0.5 * s * a_uv / deg[u];
            d_deg[v] -= 0.5 * s * a_uv / deg[v];
        }
        for (e, dz) in d_z.iter_mut().enumerate() {
            let (u, v) = graph.edge_nodes(e);
            *dz += d_deg[u] + d_deg[v];
        }
    }
    (d_h_in, d_z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assoc::{sinkhorn_traced, AffinityMatrix};
    use crate::rng;
    use rand::Rng as _;

    /// Scalar objective sum(G ⊙ S*) differentiated through Sinkhorn alone.
    #[test]
    fn sinkhorn_reverse_matches_difference_quotient() {
        let mut r = rng::seeded(8);
        for _ in 0..10 {
            let (m, n) = (r.random_range(1..4), r.random_range(1..4));
            let inner = Matrix::from_vec(m, n, (0..m * n).map(|_| r.random_range(-1.0..1.0)).collect());
            let weights = Matrix::from_vec(m + 1, n + 1, (0..(m + 1) * (n + 1)).map(|_| r.random_range(-1.0..1.0)).collect());
            let f = |inner: &Matrix| {
                let s = AffinityMatrix::with_slack(inner, 0.2);
                let (a, t) = sinkhorn_traced(&s, 5.0, 8).unwrap();
                (dot(a.s_star.as_slice(), weights.as_slice()), t)
            };
            let (_, trace) = f(&inner);
            let d = sinkhorn_backward(&trace, m, n, &weights);
            for i in 0..m {
                for j in 0..n {
                    let h = 1e-6;
                    let mut p = inner.clone();
                    p[(i, j)] += h;
                    let mut q = inner.clone();
                    q[(i, j)] -= h;
                    let fd = (f(&p).0 - f(&q).0) / (2.0 * h);
                    assert!((fd - d[(i, j)]).abs() < 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", d[(i, j)]);
                }
            }
        }
    }
}
