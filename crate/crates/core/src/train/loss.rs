use alloc::vec;

use super::TrainError;
use crate::linalg::Matrix;

/// Probabilities are clamped to `[CLAMP_EPS, 1 - CLAMP_EPS]` before the log.
pub const CLAMP_EPS: f64 = 1e-7;

/// Binary association labels over the augmented `(m+1) x (n+1)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    m: usize,
    n: usize,
    o: Matrix,
}

impl GroundTruth {
    /// Labels from matched `(tracklet, detection)` pairs. Unmatched tracklets
    /// are labelled in the slack column, unmatched detections in the slack row.
    pub fn from_matches(m: usize, n: usize, matches: &[(usize, usize)]) -> Result<Self, TrainError> {
        let mut o = Matrix::zeros(m + 1, n + 1);
        let mut row_used = vec![false; m];
        let mut col_used = vec![false; n];
        for &(i, j) in matches {
            if i >= m || j >= n {
                return Err(TrainError::InvalidGroundTruth("match index out of range"));
            }
            if row_used[i] || col_used[j] {
                return Err(TrainError::InvalidGroundTruth("object matched twice"));
            }
            row_used[i] = true;
            col_used[j] = true;
            o[(i, j)] = 1.0;
        }
        for (i, used) in row_used.iter().enumerate() {
            if !used {
                o[(i, n)] = 1.0;
            }
        }
        for (j, used) in col_used.iter().enumerate() {
            if !used {
                o[(m, j)] = 1.0;
            }
        }
        Ok(Self { m, n, o })
    }

    /// Labels from identity ids: a tracklet and a detection match when they
    /// carry the same id.
    pub fn from_ids(prev: &[u64], cur: &[u64]) -> Result<Self, TrainError> {
        for ids in [prev, cur] {
            for (k, id) in ids.iter().enumerate() {
                if ids[..k].contains(id) {
                    return Err(TrainError::DuplicateId { id: *id });
                }
            }
        }
        let matches: alloc::vec::Vec<_> = prev
            .iter()
            .enumerate()
            .filter_map(|(i, id)| cur.iter().position(|c| c == id).map(|j| (i, j)))
            .collect();
        Self::from_matches(prev.len(), cur.len(), &matches)
    }

    /// Validates a full label matrix.
    pub fn from_matrix(o: Matrix) -> Result<Self, TrainError> {
        let (r, c) = o.shape();
        if r == 0 || c == 0 {
            return Err(TrainError::InvalidGroundTruth("empty label matrix"));
        }
        let (m, n) = (r - 1, c - 1);
        if o.as_slice().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(TrainError::InvalidGroundTruth("labels must be 0 or 1"));
        }
        if o[(m, n)] != 0.0 {
            return Err(TrainError::InvalidGroundTruth("corner label must be 0"));
        }
        let mut matches = vec![];
        for i in 0..m {
            for j in 0..n {
                if o[(i, j)] == 1.0 {
                    matches.push((i, j));
                }
            }
        }
        let gt = Self::from_matches(m, n, &matches)?;
        if gt.o != o {
            return Err(TrainError::InvalidGroundTruth("slack labels disagree with the inner block"));
        }
        Ok(gt)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn labels(&self) -> &Matrix {
        &self.o
    }
}

/// Which cells enter the loss and what the sum is divided by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossNormalization {
    /// Every augmented cell but the corner, averaged over their count.
    #[default]
    IncludedCells,
    /// Inner `m x n` block only, divided by `m * n`.
    StrictMn,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Weight of the positive-label term.
    pub w: f64,
    pub normalization: LossNormalization,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { w: 10.0, normalization: LossNormalization::IncludedCells }
    }
}

/// Unnormalized contribution of one cell: `-(w o log s + (1 - o) log(1 - s))`.
pub fn cell_loss(s: f64, o: f64, w: f64) -> f64 {
    let s = s.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS);
    -(w * o * libm::log(s) + (1.0 - o) * libm::log(1.0 - s))
}

fn cell_grad(s: f64, o: f64, w: f64) -> f64 {
    if s <= CLAMP_EPS || s >= 1.0 - CLAMP_EPS {
        return 0.0;
    }
    -(w * o / s - (1.0 - o) / (1.0 - s))
}

fn included(gt: &GroundTruth, norm: LossNormalization, i: usize, j: usize) -> bool {
    match norm {
        LossNormalization::IncludedCells => !(i == gt.m && j == gt.n),
        LossNormalization::StrictMn => i < gt.m && j < gt.n,
    }
}

fn cell_count(gt: &GroundTruth, norm: LossNormalization) -> usize {
    match norm {
        LossNormalization::IncludedCells => (gt.m + 1) * (gt.n + 1) - 1,
        LossNormalization::StrictMn => gt.m * gt.n,
    }
}

fn check_shape(s_star: &Matrix, gt: &GroundTruth) -> Result<(), TrainError> {
    let expected = (gt.m + 1, gt.n + 1);
    if s_star.shape() != expected {
        return Err(TrainError::Shape { expected, found: s_star.shape() });
    }
    Ok(())
}

pub fn wbce_loss(s_star: &Matrix, gt: &GroundTruth, cfg: &LossConfig) -> Result<f64, TrainError> {
    wbce_loss_grad(s_star, gt, cfg).map(|(l, _)| l)
}

/// Loss and its gradient with respect to every entry of `s_star`. With no
/// included cells the loss is 0.
pub fn wbce_loss_grad(s_star: &Matrix, gt: &GroundTruth, cfg: &LossConfig) -> Result<(f64, Matrix), TrainError> {
    check_shape(s_star, gt)?;
    let mut grad = Matrix::zeros(gt.m + 1, gt.n + 1);
    let count = cell_count(gt, cfg.normalization);
    if count == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / count as f64;
    let mut total = 0.0;
    for i in 0..=gt.m {
        for j in 0..=gt.n {
            if !included(gt, cfg.normalization, i, j) {
                continue;
            }
            let (s, o) = (s_star[(i, j)], gt.o[(i, j)]);
            total += cell_loss(s, o, cfg.w);
            grad[(i, j)] = scale * cell_grad(s, o, cfg.w);
        }
    }
    Ok((total * scale, grad))
}
