//! Maximum-weight bipartite assignment (Kuhn-Munkres with potentials).

use alloc::vec;
use alloc::vec::Vec;

use super::NormalizedAssignment;
use crate::linalg::Matrix;

/// Hard association of one frame.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchResult {
    /// `(tracklet index, detection index)`, sorted by tracklet.
    pub matches: Vec<(usize, usize)>,
    /// Unmatched detections.
    pub births: Vec<usize>,
    /// Unmatched tracklets.
    pub deaths: Vec<usize>,
}

impl MatchResult {
    pub fn from_row_assignment(assignment: &[Option<usize>], n: usize) -> Self {
        let mut matched_cols = vec![false; n];
        let mut matches = Vec::new();
        let mut deaths = Vec::new();
        for (i, a) in assignment.iter().enumerate() {
            match *a {
                Some(j) => {
                    matched_cols[j] = true;
                    matches.push((i, j));
                }
                None => deaths.push(i),
            }
        }
        let births = (0..n).filter(|&j| !matched_cols[j]).collect();
        Self { matches, births, deaths }
    }
}

/// Maximizes the total weight of a partial one-to-one assignment of rows to
/// columns, using only cells where `allowed(i, j)` holds and the weight is
/// positive. Returns the assigned column per row.
pub fn max_weight_assignment(weights: &Matrix, allowed: impl Fn(usize, usize) -> bool) -> Vec<Option<usize>> {
    let (r, c) = weights.shape();
    let k = r.max(c);
    if r == 0 || c == 0 {
        return vec![None; r];
    }
    let usable = |i: usize, j: usize| i < r && j < c && weights[(i, j)] > 0.0 && allowed(i, j);
    // Square min-cost problem: usable cells cost -w, everything else 0
    // (an unassigned pair in the original problem).
    let cost = |i: usize, j: usize| if usable(i, j) { -weights[(i, j)] } else { 0.0 };

    // 1-based arrays; p[j] = row matched to column j, 0 = none.
    let mut u = vec![0.0f64; k + 1];
    let mut v = vec![0.0f64; k + 1];
    let mut p = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    for i in 1..=k {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=k {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=k {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut out = vec![None; r];
    for j in 1..=k {
        let i = p[j];
        if i >= 1 && usable(i - 1, j - 1) {
            out[i - 1] = Some(j - 1);
        }
    }
    out
}

/// Drops the slack row and column, forbids cells below `s_thres`, and solves
/// the maximum-weight assignment over what remains.
pub fn binarize_and_assign(assignment: &NormalizedAssignment, s_thres: f64) -> MatchResult {
    let inner = assignment.inner();
    let rows = max_weight_assignment(&inner, |i, j| inner[(i, j)] >= s_thres);
    MatchResult::from_row_assignment(&rows, assignment.n())
}
