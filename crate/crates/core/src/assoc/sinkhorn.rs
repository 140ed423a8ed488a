use alloc::vec;
use alloc::vec::Vec;

use super::{AffinityMatrix, AssocError};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    /// Score of every slack cell.
    pub s_slack: f64,
    /// Entropic parameter `l` of the kernel `exp(l * s)`.
    pub entropy: f64,
    /// Number of (row pass, column pass) rounds.
    pub iters: usize,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self { s_slack: 0.2, entropy: 5.0, iters: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Row,
    Column,
}

/// Row targets: 1 for every tracklet, `n` for the slack row.
pub fn row_targets(m: usize, n: usize) -> Vec<f64> {
    let mut t = vec![1.0; m];
    t.push(n as f64);
    t
}

/// Column targets: 1 for every detection, `m` for the slack column.
pub fn col_targets(m: usize, n: usize) -> Vec<f64> {
    let mut t = vec![1.0; n];
    t.push(m as f64);
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAssignment {
    m: usize,
    n: usize,
    /// Full `(m+1) x (n+1)` matrix including slack row and column.
    pub s_star: Matrix,
    pub row_marginals: Vec<f64>,
    pub col_marginals: Vec<f64>,
}

impl NormalizedAssignment {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Tracklet x detection block with the slack row and column dropped.
    pub fn inner(&self) -> Matrix {
        let mut out = Matrix::zeros(self.m, self.n);
        for i in 0..self.m {
            out.row_mut(i).copy_from_slice(&self.s_star.row(i)[..self.n]);
        }
        out
    }

    /// Largest deviation of the achieved row / column sums from the targets.
    pub fn marginal_errors(&self) -> (f64, f64) {
        let err = |got: &[f64], want: Vec<f64>| got.iter().zip(want).fold(0.0f64, |a, (g, w)| a.max((g - w).abs()));
        (
            err(&self.row_marginals, row_targets(self.m, self.n)),
            err(&self.col_marginals, col_targets(self.m, self.n)),
        )
    }
}

/// One proportional scaling step: `sums` are the pre-scaling sums along
/// `axis`, `output` the matrix after scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingPass {
    pub axis: Axis,
    pub sums: Vec<f64>,
    pub output: Matrix,
}

/// Everything the reverse pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornTrace {
    pub entropy: f64,
    pub kernel: Matrix,
    pub passes: Vec<ScalingPass>,
}

pub fn sinkhorn(s: &AffinityMatrix, entropy: f64, iters: usize) -> Result<NormalizedAssignment, AssocError> {
    run(s, entropy, iters, false).map(|(a, _)| a)
}

pub fn sinkhorn_traced(
    s: &AffinityMatrix,
    entropy: f64,
    iters: usize,
) -> Result<(NormalizedAssignment, SinkhornTrace), AssocError> {
    run(s, entropy, iters, true).map(|(a, t)| (a, t.expect("trace requested")))
}

// The kernel exp(l * s) is formed once; each round then rescales rows to
// their targets and columns to theirs. Gated cells stay exactly 0.
fn run(
    s: &AffinityMatrix,
    entropy: f64,
    iters: usize,
    keep_trace: bool,
) -> Result<(NormalizedAssignment, Option<SinkhornTrace>), AssocError> {
    if iters == 0 {
        return Err(AssocError::InvalidArgument("iteration count must be at least 1"));
    }
    if !(entropy > 0.0 && entropy.is_finite()) {
        return Err(AssocError::InvalidArgument("entropic parameter must be positive"));
    }
    let (m, n) = (s.m(), s.n());
    let (rows, cols) = s.scores.shape();
    if rows != m + 1 || cols != n + 1 {
        return Err(AssocError::Shape { m, n, rows, cols });
    }
    let rt = row_targets(m, n);
    let ct = col_targets(m, n);
    debug_assert_eq!(rt.iter().sum::<f64>(), ct.iter().sum::<f64>());

    let mut x = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            if !s.is_gated(i, j) {
                x[(i, j)] = libm::exp(entropy * s.scores[(i, j)]);
            }
        }
    }
    if !x.is_finite() {
        return Err(AssocError::KernelOverflow);
    }
    let mut trace = keep_trace.then(|| SinkhornTrace { entropy, kernel: x.clone(), passes: Vec::with_capacity(2 * iters) });

    for _ in 0..iters {
        let sums = x.row_sums();
        for (i, (&sum, &target)) in sums.iter().zip(&rt).enumerate() {
            let k = scale_factor(sum, target, Axis::Row, i)?;
            for v in x.row_mut(i) {
                *v *= k;
            }
        }
        if let Some(t) = trace.as_mut() {
            t.passes.push(ScalingPass { axis: Axis::Row, sums, output: x.clone() });
        }

        let sums = x.col_sums();
        let factors = sums
            .iter()
            .zip(&ct)
            .enumerate()
            .map(|(j, (&sum, &target))| scale_factor(sum, target, Axis::Column, j))
            .collect::<Result<Vec<_>, _>>()?;
        for i in 0..rows {
            for (v, k) in x.row_mut(i).iter_mut().zip(&factors) {
                *v *= k;
            }
        }
        if let Some(t) = trace.as_mut() {
            t.passes.push(ScalingPass { axis: Axis::Column, sums, output: x.clone() });
        }
    }

    let assignment = NormalizedAssignment { m, n, row_marginals: x.row_sums(), col_marginals: x.col_sums(), s_star: x };
    Ok((assignment, trace))
}

#[inline]
fn scale_factor(sum: f64, target: f64, axis: Axis, index: usize) -> Result<f64, AssocError> {
    if sum > 0.0 {
        Ok(target / sum)
    } else if target == 0.0 {
        Ok(0.0)
    } else {
        Err(AssocError::ZeroMarginal { axis, index })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assoc::FORBIDDEN;
    use crate::rng;
    use rand::Rng as _;

    fn random_scores(r: &mut rng::Rng, m: usize, n: usize) -> AffinityMatrix {
        let inner = Matrix::from_vec(m, n, (0..m * n).map(|_| r.random_range(-1.0..1.0)).collect());
        AffinityMatrix::with_slack(&inner, 0.2)
    }

    /// Independent oracle: diagonal scaling vectors `u`, `v` updated as
    /// `u = a / (K v)`, `v = b / (K^T u)`; the plan is `diag(u) K diag(v)`.
    fn ipf_oracle(s: &AffinityMatrix, l: f64, iters: usize) -> Matrix {
        let (rows, cols) = s.scores.shape();
        let k = Matrix::from_vec(
            rows,
            cols,
            s.scores.as_slice().iter().map(|&x| if x == FORBIDDEN { 0.0 } else { (l * x).exp() }).collect(),
        );
        let a = row_targets(s.m(), s.n());
        let b = col_targets(s.m(), s.n());
        let mut u = vec![1.0; rows];
        let mut v = vec![1.0; cols];
        for _ in 0..iters {
            for i in 0..rows {
                let kv: f64 = (0..cols).map(|j| k[(i, j)] * v[j]).sum();
                u[i] = a[i] / kv;
            }
            for j in 0..cols {
                let ku: f64 = (0..rows).map(|i| k[(i, j)] * u[i]).sum();
                v[j] = b[j] / ku;
            }
        }
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|c| u[c / cols] * k[(c / cols, c % cols)] * v[c % cols]).collect())
    }

    #[test]
    fn symmetric_two_by_two_is_all_half() {
        let s = AffinityMatrix::from_augmented(Matrix::filled(2, 2, 0.7)).unwrap();
        let out = sinkhorn(&s, 5.0, 8).unwrap();
        assert!(out.s_star.as_slice().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn last_pass_axis_is_exact() {
        let mut r = rng::seeded(1);
        for _ in 0..20 {
            let s = random_scores(&mut r, 3, 4);
            let out = sinkhorn(&s, 5.0, 1).unwrap();
            let (_, col_err) = out.marginal_errors();
            assert!(col_err < 1e-12);
        }
    }

    #[test]
    fn matches_ipf_oracle() {
        let mut r = rng::seeded(2);
        for _ in 0..50 {
            let s = random_scores(&mut r, 2, 2);
            let out = sinkhorn(&s, 5.0, 8).unwrap();
            assert!(out.s_star.max_abs_diff(&ipf_oracle(&s, 5.0, 8)) < 1e-10);
        }
    }

    #[test]
    fn converges_to_marginals() {
        let mut r = rng::seeded(3);
        for _ in 0..20 {
            let s = random_scores(&mut r, 5, 5);
            // Eight rounds leave the column pass exact; rows are only close.
            let (row8, col8) = sinkhorn(&s, 5.0, 8).unwrap().marginal_errors();
            assert!(row8 < 0.1 && col8 < 1e-12, "{row8} {col8}");
            let (row, col) = sinkhorn(&s, 5.0, 200).unwrap().marginal_errors();
            assert!(row < 1e-8 && col < 1e-8);
        }
    }

    #[test]
    fn gated_cells_stay_zero_and_others_positive() {
        let inner = Matrix::from_rows(&[&[0.5, FORBIDDEN], &[FORBIDDEN, -0.3]]);
        let s = AffinityMatrix::with_slack(&inner, 0.2);
        let out = sinkhorn(&s, 5.0, 8).unwrap();
        assert_eq!(out.s_star[(0, 1)], 0.0);
        assert_eq!(out.s_star[(1, 0)], 0.0);
        for (c, &v) in out.s_star.as_slice().iter().enumerate() {
            if c != 1 && c != 3 {
                assert!(v > 0.0);
            }
        }
    }

    #[test]
    fn degenerate_sizes_are_handled() {
        // No tracklets: every detection is a birth.
        let s = AffinityMatrix::with_slack(&Matrix::zeros(0, 3), 0.2);
        let out = sinkhorn(&s, 5.0, 8).unwrap();
        assert_eq!(out.s_star.row(0), &[1.0, 1.0, 1.0, 0.0]);
        // No detections: every tracklet dies.
        let s = AffinityMatrix::with_slack(&Matrix::zeros(2, 0), 0.2);
        let out = sinkhorn(&s, 5.0, 8).unwrap();
        assert_eq!(out.s_star.as_slice(), &[1.0, 1.0, 0.0]);
        let s = AffinityMatrix::with_slack(&Matrix::zeros(0, 0), 0.2);
        assert_eq!(sinkhorn(&s, 5.0, 8).unwrap().s_star.as_slice(), &[0.0]);
    }

    #[test]
    fn invalid_arguments_rejected() {
        let s = AffinityMatrix::with_slack(&Matrix::zeros(1, 1), 0.2);
        assert!(matches!(sinkhorn(&s, 5.0, 0), Err(AssocError::InvalidArgument(_))));
        assert!(matches!(sinkhorn(&s, 0.0, 8), Err(AssocError::InvalidArgument(_))));
        let huge = AffinityMatrix::with_slack(&Matrix::filled(1, 1, 500.0), 0.2);
        assert_eq!(sinkhorn(&huge, 5.0, 8), Err(AssocError::KernelOverflow));
    }

    #[test]
    fn permuting_detections_permutes_columns() {
        let mut r = rng::seeded(5);
        let inner = Matrix::from_vec(3, 3, (0..9).map(|_| r.random_range(-1.0..1.0)).collect());
        let perm = [2usize, 0, 1];
        let permuted = Matrix::from_vec(3, 3, (0..9).map(|c| inner[(c / 3, perm[c % 3])]).collect());
        let a = sinkhorn(&AffinityMatrix::with_slack(&inner, 0.2), 5.0, 8).unwrap();
        let b = sinkhorn(&AffinityMatrix::with_slack(&permuted, 0.2), 5.0, 8).unwrap();
        for i in 0..4 {
            for (j, &pj) in perm.iter().enumerate() {
                assert!((b.s_star[(i, j)] - a.s_star[(i, pj)]).abs() < 1e-14);
            }
            assert!((b.s_star[(i, 3)] - a.s_star[(i, 3)]).abs() < 1e-14);
        }
    }
}
