//! CLEAR-MOT evaluation: MOTA, false positives and negatives, identity
//! switches, mostly tracked / mostly lost.
//!
//! Per frame, ground-truth objects first keep the hypothesis they were
//! paired with in the previous frame if the IoU still clears the threshold.
//! The rest are matched by an assignment that maximizes the number of
//! pairs, then their total IoU.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use thiserror::Error;

use crate::assoc::max_weight_assignment;
use crate::geom::{iou, BoundingBox};
use crate::linalg::Matrix;
use crate::tracker::TrackRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Table {
    GroundTruth,
    Hypothesis,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("{table:?} table: frame numbers start at 1")]
    InvalidFrame { table: Table },
    #[error("{table:?} table: id {id} appears twice in frame {frame}")]
    DuplicateId { table: Table, frame: u32, id: u64 },
    #[error("hypothesis runs to frame {hyp_frames} but ground truth ends at frame {gt_frames}")]
    LengthMismatch { gt_frames: u32, hyp_frames: u32 },
    #[error("IoU threshold must lie in (0, 1]")]
    InvalidThreshold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mota: f64,
    pub fp: usize,
    pub fn_: usize,
    pub idsw: usize,
    pub mt: usize,
    pub pt: usize,
    pub ml: usize,
    pub mt_ml_ratio: f64,
    /// Ground-truth boxes over all frames.
    pub gt_total: usize,
    /// Distinct ground-truth trajectories.
    pub gt_tracks: usize,
    pub matches: usize,
}

impl EvalReport {
    fn from_counts(fp: usize, fn_: usize, idsw: usize, mt: usize, pt: usize, ml: usize, gt_total: usize, matches: usize) -> Self {
        let errors = fp + fn_ + idsw;
        let mota = if gt_total > 0 {
            1.0 - errors as f64 / gt_total as f64
        } else if errors == 0 {
            1.0
        } else {
            f64::NEG_INFINITY
        };
        let mt_ml_ratio = match (mt, ml) {
            (0, _) => 0.0,
            (_, 0) => f64::INFINITY,
            _ => mt as f64 / ml as f64,
        };
        Self { mota, fp, fn_, idsw, mt, pt, ml, mt_ml_ratio, gt_total, gt_tracks: mt + pt + ml, matches }
    }

    /// Sums the counts of several sequences and recomputes the ratios.
    pub fn combine(reports: &[EvalReport]) -> Self {
        let sum = |f: fn(&EvalReport) -> usize| reports.iter().map(f).sum::<usize>();
        Self::from_counts(
            sum(|r| r.fp),
            sum(|r| r.fn_),
            sum(|r| r.idsw),
            sum(|r| r.mt),
            sum(|r| r.pt),
            sum(|r| r.ml),
            sum(|r| r.gt_total),
            sum(|r| r.matches),
        )
    }
}

type FrameTable<'a> = BTreeMap<u32, Vec<(u64, &'a BoundingBox)>>;

fn by_frame(records: &[TrackRecord], table: Table) -> Result<FrameTable<'_>, EvalError> {
    let mut out: FrameTable<'_> = BTreeMap::new();
    for r in records {
        if r.frame == 0 {
            return Err(EvalError::InvalidFrame { table });
        }
        let objs = out.entry(r.frame).or_default();
        if objs.iter().any(|(id, _)| *id == r.id) {
            return Err(EvalError::DuplicateId { table, frame: r.frame, id: r.id });
        }
        objs.push((r.id, &r.bbox));
    }
    Ok(out)
}

pub fn evaluate(gt: &[TrackRecord], hyp: &[TrackRecord], iou_threshold: f64) -> Result<EvalReport, EvalError> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(EvalError::InvalidThreshold);
    }
    let gt_frames = by_frame(gt, Table::GroundTruth)?;
    let hyp_frames = by_frame(hyp, Table::Hypothesis)?;
    let gt_end = gt_frames.keys().next_back().copied().unwrap_or(0);
    let hyp_end = hyp_frames.keys().next_back().copied().unwrap_or(0);
    if hyp_end > gt_end {
        return Err(EvalError::LengthMismatch { gt_frames: gt_end, hyp_frames: hyp_end });
    }

    let frames: BTreeSet<u32> = gt_frames.keys().chain(hyp_frames.keys()).copied().collect();
    let empty = Vec::new();
    let (mut fp, mut fn_, mut idsw, mut matches) = (0, 0, 0, 0);
    // gt id -> hypothesis id of the previous frame's pairing.
    let mut prev_pairs: BTreeMap<u64, u64> = BTreeMap::new();
    // gt id -> hypothesis id of its most recent match, any frame.
    let mut last_match: BTreeMap<u64, u64> = BTreeMap::new();
    // gt id -> (frames present, frames matched).
    let mut coverage: BTreeMap<u64, (usize, usize)> = BTreeMap::new();

    for f in frames {
        let g = gt_frames.get(&f).unwrap_or(&empty);
        let h = hyp_frames.get(&f).unwrap_or(&empty);
        let mut g_match: Vec<Option<usize>> = alloc::vec![None; g.len()];
        let mut h_used = alloc::vec![false; h.len()];

        for (gi, (gid, gb)) in g.iter().enumerate() {
            let Some(&hid) = prev_pairs.get(gid) else { continue };
            if let Some(hj) = h.iter().position(|(id, _)| *id == hid) {
                if !h_used[hj] && iou(gb, h[hj].1) >= iou_threshold {
                    g_match[gi] = Some(hj);
                    h_used[hj] = true;
                }
            }
        }

        let free_g: Vec<usize> = (0..g.len()).filter(|&i| g_match[i].is_none()).collect();
        let free_h: Vec<usize> = (0..h.len()).filter(|&j| !h_used[j]).collect();
        if !free_g.is_empty() && !free_h.is_empty() {
            // A bonus above any achievable IoU total makes larger matchings win.
            let bonus = (free_g.len().min(free_h.len()) + 1) as f64;
            let mut w = Matrix::zeros(free_g.len(), free_h.len());
            for (a, &gi) in free_g.iter().enumerate() {
                for (b, &hj) in free_h.iter().enumerate() {
                    let o = iou(g[gi].1, h[hj].1);
                    if o >= iou_threshold {
                        w[(a, b)] = bonus + o;
                    }
                }
            }
            let assignment = max_weight_assignment(&w, |_, _| true);
            for (a, col) in assignment.into_iter().enumerate() {
                if let Some(b) = col {
                    let (gi, hj) = (free_g[a], free_h[b]);
                    g_match[gi] = Some(hj);
                    h_used[hj] = true;
                    if let Some(&prev) = last_match.get(&g[gi].0) {
                        if prev != h[hj].0 {
                            idsw += 1;
                        }
                    }
                }
            }
        }

        prev_pairs.clear();
        for (gi, m) in g_match.iter().enumerate() {
            let gid = g[gi].0;
            let cov = coverage.entry(gid).or_insert((0, 0));
            cov.0 += 1;
            match m {
                Some(hj) => {
                    cov.1 += 1;
                    matches += 1;
                    prev_pairs.insert(gid, h[*hj].0);
                    last_match.insert(gid, h[*hj].0);
                }
                None => fn_ += 1,
            }
        }
        fp += h_used.iter().filter(|u| !**u).count();
    }

    let (mut mt, mut pt, mut ml) = (0, 0, 0);
    for &(present, matched) in coverage.values() {
        let ratio = matched as f64 / present as f64;
        if ratio >= 0.8 {
            mt += 1;
        } else if ratio <= 0.2 {
            ml += 1;
        } else {
            pt += 1;
        }
    }
    Ok(EvalReport::from_counts(fp, fn_, idsw, mt, pt, ml, gt.len(), matches))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn rec(frame: u32, id: u64, x: f64) -> TrackRecord {
        TrackRecord { frame, id, bbox: BoundingBox::from_ltwh(x, 0.0, 10.0, 20.0).unwrap() }
    }

    fn two_tracks(frames: u32) -> Vec<TrackRecord> {
        (1..=frames).flat_map(|f| [rec(f, 1, 0.0), rec(f, 2, 100.0)]).collect()
    }

    #[test]
    fn perfect_tracker() {
        let gt = two_tracks(5);
        let r = evaluate(&gt, &gt, 0.5).unwrap();
        assert_eq!((r.mota, r.fp, r.fn_, r.idsw, r.mt, r.ml), (1.0, 0, 0, 0, 2, 0));
        assert_eq!(r.mt_ml_ratio, f64::INFINITY);
    }

    #[test]
    fn empty_hypothesis() {
        let gt = two_tracks(3);
        let r = evaluate(&gt, &[], 0.5).unwrap();
        assert_eq!((r.mota, r.fn_, r.ml, r.mt), (0.0, 6, 2, 0));
        assert_eq!(r.mt_ml_ratio, 0.0);
    }

    #[test]
    fn swap_at_frame_three() {
        let gt = two_tracks(4);
        let hyp: Vec<_> = gt
            .iter()
            .map(|r| TrackRecord { id: if r.frame >= 3 { 3 - r.id } else { r.id }, ..*r })
            .collect();
        let r = evaluate(&gt, &hyp, 0.5).unwrap();
        assert_eq!((r.idsw, r.fp, r.fn_), (2, 0, 0));
        assert_eq!(r.mota, 0.75);
    }

    #[test]
    fn carry_over_beats_a_better_iou() {
        // Hypothesis 7 follows gt 1; in frame 2 hypothesis 8 overlaps gt 1
        // slightly better, but the existing pairing is kept.
        let gt = vec![rec(1, 1, 0.0), rec(2, 1, 0.0)];
        let hyp = vec![rec(1, 7, 0.0), rec(2, 7, 2.0), rec(2, 8, 1.0)];
        let r = evaluate(&gt, &hyp, 0.5).unwrap();
        assert_eq!((r.idsw, r.fp, r.fn_), (0, 1, 0));
    }

    #[test]
    fn below_threshold_is_a_miss_and_false_positive() {
        let gt = vec![rec(1, 1, 0.0)];
        let hyp = vec![rec(1, 1, 8.0)];
        let r = evaluate(&gt, &hyp, 0.5).unwrap();
        assert_eq!((r.fp, r.fn_, r.matches), (1, 1, 0));
        assert_eq!(r.mota, -1.0);
    }

    #[test]
    fn weaker_overlap_used_to_match_both() {
        // gt 1 overlaps hyp 10 strongly and hyp 11 weakly; gt 2 overlaps only hyp 10.
        let gt = vec![rec(1, 1, 0.0), rec(1, 2, 3.0)];
        let hyp = vec![rec(1, 10, 1.0), rec(1, 11, -3.0)];
        let r = evaluate(&gt, &hyp, 0.5).unwrap();
        assert_eq!(r.matches, 2);
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(evaluate(&[rec(0, 1, 0.0)], &[], 0.5), Err(EvalError::InvalidFrame { .. })));
        let dup = vec![rec(1, 1, 0.0), rec(1, 1, 50.0)];
        assert!(matches!(evaluate(&dup, &[], 0.5), Err(EvalError::DuplicateId { table: Table::GroundTruth, .. })));
        assert!(matches!(
            evaluate(&two_tracks(2), &two_tracks(3), 0.5),
            Err(EvalError::LengthMismatch { gt_frames: 2, hyp_frames: 3 })
        ));
        assert_eq!(evaluate(&[], &[], 0.0), Err(EvalError::InvalidThreshold));
        let r = evaluate(&[], &[], 0.5).unwrap();
        assert_eq!((r.mota, r.gt_total), (1.0, 0));
    }

    #[test]
    fn combine_sums_counts() {
        let gt = two_tracks(4);
        let a = evaluate(&gt, &gt, 0.5).unwrap();
        let b = evaluate(&gt, &[], 0.5).unwrap();
        let c = EvalReport::combine(&[a, b]);
        assert_eq!((c.gt_total, c.fn_, c.mt, c.ml), (16, 8, 2, 2));
        assert_eq!(c.mota, 0.5);
        assert_eq!(c.mt_ml_ratio, 1.0);
    }
}
