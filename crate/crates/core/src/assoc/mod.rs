//! Affinity scoring, slack-augmented Sinkhorn normalization and Hungarian
//! binarization.

mod affinity;
pub mod hungarian;
mod sinkhorn;

use thiserror::Error;

pub use affinity::{affinity_scores, pair_features, AffinityMatrix, PairFeatures, FORBIDDEN};
pub use hungarian::{binarize_and_assign, max_weight_assignment, MatchResult};
pub use sinkhorn::{
    col_targets, row_targets, sinkhorn, sinkhorn_traced, Axis, NormalizedAssignment, ScalingPass, SinkhornConfig,
    SinkhornTrace,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssocError {
    #[error("invalid Sinkhorn argument: {0}")]
    InvalidArgument(&'static str),
    #[error("score matrix must be (m+1)x(n+1) with m={m}, n={n}, got {rows}x{cols}")]
    Shape { m: usize, n: usize, rows: usize, cols: usize },
    #[error("kernel exp(l*s) overflowed; scores or entropic parameter out of range")]
    KernelOverflow,
    #[error("internal invariant violated: {axis:?} {index} has zero mass but positive target")]
    ZeroMarginal { axis: Axis, index: usize },
}

impl AssocError {
    /// True for failures that indicate a defect rather than bad input.
    pub fn is_invariant_violation(&self) -> bool {
        matches!(self, AssocError::ZeroMarginal { .. } | AssocError::KernelOverflow)
    }
}
