//! MOTChallenge text formats: detections, ground truth, tracker results.
//!
//! All three are comma-separated, one box per line, with the box given as
//! `bb_left,bb_top,bb_width,bb_height` in pixels and frames numbered from 1.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sinkmot_core::geom::{BoundingBox, FrameSize};
use sinkmot_core::tracker::{Detection, Sequence, SequenceFrame, TrackRecord};
use sinkmot_core::train::GroundTruth;

use crate::error::{read_text, write_text, DataError, ParseError};

/// One row of a detection file. World coordinates are not kept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRecord {
    pub frame: u32,
    pub id: i64,
    pub bbox: BoundingBox,
    pub confidence: f64,
}

/// Detections of one frame, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetections {
    pub frame: u32,
    pub detections: Vec<DetectionRecord>,
}

struct Row<'a> {
    line: usize,
    fields: Vec<&'a str>,
}

fn rows(text: &str) -> impl Iterator<Item = Row<'_>> {
    text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(i, l)| Row {
        line: i + 1,
        fields: l.split(',').map(str::trim).collect(),
    })
}

impl Row<'_> {
    fn expect_len(&self, allowed: &[usize]) -> Result<(), ParseError> {
        if allowed.contains(&self.fields.len()) {
            return Ok(());
        }
        let want: Vec<String> = allowed.iter().map(|n| n.to_string()).collect();
        Err(ParseError::new(self.line, format!("expected {} fields, found {}", want.join(" or "), self.fields.len())))
    }

    fn float(&self, k: usize, name: &str) -> Result<f64, ParseError> {
        let v: f64 = self.fields[k]
            .parse()
            .map_err(|_| ParseError::new(self.line, format!("{name}: not a number: {:?}", self.fields[k])))?;
        if !v.is_finite() {
            return Err(ParseError::new(self.line, format!("{name}: not finite")));
        }
        Ok(v)
    }

    fn int(&self, k: usize, name: &str) -> Result<i64, ParseError> {
        let s = self.fields[k];
        if let Ok(v) = s.parse::<i64>() {
            return Ok(v);
        }
        // Some writers emit integral columns as "3.0".
        match s.parse::<f64>() {
            Ok(v) if v.fract() == 0.0 && v.abs() < 9.0e15 => Ok(v as i64),
            _ => Err(ParseError::new(self.line, format!("{name}: not an integer: {s:?}"))),
        }
    }

    fn frame(&self) -> Result<u32, ParseError> {
        let f = self.int(0, "frame")?;
        u32::try_from(f)
            .ok()
            .filter(|&f| f >= 1)
            .ok_or_else(|| ParseError::new(self.line, format!("frame must be at least 1, found {f}")))
    }

    fn bbox(&self) -> Result<BoundingBox, ParseError> {
        let (l, t) = (self.float(2, "bb_left")?, self.float(3, "bb_top")?);
        let (w, h) = (self.float(4, "bb_width")?, self.float(5, "bb_height")?);
        BoundingBox::from_ltwh(l, t, w, h).map_err(|e| ParseError::new(self.line, e))
    }
}

/// `frame,id,bb_left,bb_top,bb_width,bb_height,conf,x,y,z`, grouped by
/// frame in ascending order.
pub fn parse_detections_str(text: &str) -> Result<Vec<FrameDetections>, ParseError> {
    let mut frames: BTreeMap<u32, Vec<DetectionRecord>> = BTreeMap::new();
    for row in rows(text) {
        row.expect_len(&[10])?;
        let rec = DetectionRecord {
            frame: row.frame()?,
            id: row.int(1, "id")?,
            bbox: row.bbox()?,
            confidence: row.float(6, "conf")?,
        };
        frames.entry(rec.frame).or_default().push(rec);
    }
    Ok(frames.into_iter().map(|(frame, detections)| FrameDetections { frame, detections }).collect())
}

pub fn parse_detections(path: &Path) -> Result<Vec<FrameDetections>, DataError> {
    parse_detections_str(&read_text(path)?).map_err(|e| DataError::parse(path, e))
}

/// Ground-truth rows `frame,id,bb_left,bb_top,bb_width,bb_height,flag,...`
/// with 9 or 10 fields. Ids must be positive. Rows whose seventh field (the
/// "consider" flag) is 0 are dropped; file order is kept otherwise.
pub fn parse_ground_truth_str(text: &str) -> Result<Vec<TrackRecord>, ParseError> {
    let mut out = Vec::new();
    for row in rows(text) {
        row.expect_len(&[9, 10])?;
        let frame = row.frame()?;
        let id = row.int(1, "id")?;
        if id < 1 {
            return Err(ParseError::new(row.line, format!("ground-truth id must be at least 1, found {id}")));
        }
        let bbox = row.bbox()?;
        if row.float(6, "flag")? == 0.0 {
            continue;
        }
        out.push(TrackRecord { frame, id: id as u64, bbox });
    }
    Ok(out)
}

pub fn parse_ground_truth(path: &Path) -> Result<Vec<TrackRecord>, DataError> {
    parse_ground_truth_str(&read_text(path)?).map_err(|e| DataError::parse(path, e))
}

/// Tracker output `frame,id,bb_left,bb_top,bb_width,bb_height,conf,x,y,z`.
/// The last four fields are not interpreted.
pub fn parse_results_str(text: &str) -> Result<Vec<TrackRecord>, ParseError> {
    let mut out = Vec::new();
    for row in rows(text) {
        row.expect_len(&[10])?;
        let frame = row.frame()?;
        let id = row.int(1, "id")?;
        if id < 0 {
            return Err(ParseError::new(row.line, format!("track id must be non-negative, found {id}")));
        }
        out.push(TrackRecord { frame, id: id as u64, bbox: row.bbox()? });
    }
    Ok(out)
}

pub fn parse_results(path: &Path) -> Result<Vec<TrackRecord>, DataError> {
    parse_results_str(&read_text(path)?).map_err(|e| DataError::parse(path, e))
}

/// Rounds to a micro-pixel grid so that values converted from the center
/// representation print as the decimal they were read from.
fn snap(v: f64) -> f64 {
    let s = (v * 1e6).round() / 1e6;
    if s == 0.0 {
        0.0
    } else {
        s
    }
}

/// Result lines sorted by `(frame, id)`, world coordinates written as -1.
pub fn format_results(table: &[TrackRecord]) -> String {
    let mut sorted = table.to_vec();
    sorted.sort_by_key(|r| (r.frame, r.id));
    let mut out = String::new();
    for r in &sorted {
        let (l, t, w, h) = r.bbox.to_ltwh();
        writeln!(out, "{},{},{},{},{},{},-1,-1,-1,-1", r.frame, r.id, snap(l), snap(t), snap(w), snap(h)).expect("writing to a String");
    }
    out
}

/// Detection lines in frame order, file order within a frame.
pub fn format_detections(frames: &[FrameDetections]) -> String {
    let mut out = String::new();
    for f in frames {
        for d in &f.detections {
            let (l, t, w, h) = d.bbox.to_ltwh();
            writeln!(out, "{},{},{},{},{},{},{},-1,-1,-1", d.frame, d.id, snap(l), snap(t), snap(w), snap(h), d.confidence)
                .expect("writing to a String");
        }
    }
    out
}

/// Ground-truth lines in table order with consider flag, class and
/// visibility all 1.
pub fn format_ground_truth(table: &[TrackRecord]) -> String {
    let mut out = String::new();
    for r in table {
        let (l, t, w, h) = r.bbox.to_ltwh();
        writeln!(out, "{},{},{},{},{},{},1,1,1", r.frame, r.id, snap(l), snap(t), snap(w), snap(h)).expect("writing to a String");
    }
    out
}

pub fn write_results(table: &[TrackRecord], path: &Path) -> Result<(), DataError> {
    write_text(path, &format_results(table))
}

/// Builds a tracker input covering frames `1..=last_frame`; frames without
/// detections are present and empty.
pub fn detection_sequence(name: &str, frame_size: FrameSize, frames: &[FrameDetections], last_frame: u32) -> Sequence {
    let end = frames.last().map_or(0, |f| f.frame).max(last_frame);
    let by_frame: BTreeMap<u32, &FrameDetections> = frames.iter().map(|f| (f.frame, f)).collect();
    let frames = (1..=end)
        .map(|index| SequenceFrame {
            index,
            detections: by_frame.get(&index).map_or_else(Vec::new, |f| {
                f.detections.iter().map(|d| Detection { bbox: d.bbox, confidence: d.confidence }).collect()
            }),
        })
        .collect();
    Sequence { name: name.to_string(), frame_size, frames }
}

/// Ground-truth records grouped by frame, file order kept within a frame.
pub fn gt_by_frame(gt: &[TrackRecord]) -> BTreeMap<u32, Vec<TrackRecord>> {
    let mut out: BTreeMap<u32, Vec<TrackRecord>> = BTreeMap::new();
    for r in gt {
        out.entry(r.frame).or_default().push(*r);
    }
    out
}

/// Association labels between two annotated frames: objects sharing an id
/// are matched.
pub fn derive_gt_matrix(gt: &[TrackRecord], prev_frame: u32, cur_frame: u32) -> Result<GroundTruth, sinkmot_core::train::TrainError> {
    let ids = |f: u32| gt.iter().filter(|r| r.frame == f).map(|r| r.id).collect::<Vec<_>>();
    GroundTruth::from_ids(&ids(prev_frame), &ids(cur_frame))
}

/// Frame size from `WxH`, `W,H`, or the text of a two-line sidecar file
/// (width on the first line, height on the second).
pub fn parse_frame_size(text: &str) -> Result<FrameSize, ParseError> {
    let parts: Vec<&str> = text.split(|c: char| c == 'x' || c == ',' || c == '\n').map(str::trim).filter(|s| !s.is_empty()).collect();
    if parts.len() != 2 {
        return Err(ParseError::new(1, "expected frame width and height"));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| ParseError::new(1, format!("not a number: {s:?}")));
    FrameSize::new(num(parts[0])?, num(parts[1])?).map_err(|e| ParseError::new(1, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detection_line_converts_to_center() {
        let f = parse_detections_str("1,-1,10,20,30,40,0.9,-1,-1,-1\n").unwrap();
        assert_eq!(f.len(), 1);
        let d = f[0].detections[0];
        assert_eq!((d.frame, d.confidence), (1, 0.9));
        assert_eq!((d.bbox.cx(), d.bbox.cy(), d.bbox.width(), d.bbox.height()), (25.0, 40.0, 30.0, 40.0));
    }

    #[test]
    fn detections_grouped_in_file_order() {
        let text = "2,-1,0,0,5,5,0.1,-1,-1,-1\n1,-1,0,0,6,6,0.2,-1,-1,-1\n\n2,-1,0,0,7,7,0.3,-1,-1,-1\n";
        let f = parse_detections_str(text).unwrap();
        assert_eq!(f.iter().map(|g| g.frame).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(f[1].detections.iter().map(|d| d.confidence).collect::<Vec<_>>(), vec![0.1, 0.3]);
        assert!(parse_detections_str("").unwrap().is_empty());
    }

    #[test]
    fn malformed_rows_name_their_line() {
        let nine = "1,-1,10,20,30,40,0.9,-1,-1,-1\n1,-1,10,20,30,40,0.9,-1,-1\n";
        assert_eq!(parse_detections_str(nine).unwrap_err().line, 2);
        for bad in ["0,-1,1,1,1,1,1,-1,-1,-1", "1,-1,1,1,0,1,1,-1,-1,-1", "1,-1,a,1,1,1,1,-1,-1,-1", "1,-1,1,1,1,nan,1,-1,-1,-1"] {
            assert_eq!(parse_detections_str(bad).unwrap_err().line, 1, "{bad}");
        }
    }

    #[test]
    fn ground_truth_rules() {
        let gt = parse_ground_truth_str("1,7,0,0,10,10,1,-1,-1,-1\n1,8,0,0,10,10,0,1,1\n2,7,1,0,10,10,1,1,0.5\n").unwrap();
        assert_eq!(gt.iter().map(|r| (r.frame, r.id)).collect::<Vec<_>>(), vec![(1, 7), (2, 7)]);
        assert_eq!(parse_ground_truth_str("1,-1,0,0,10,10,1,-1,-1,-1\n").unwrap_err().line, 1);
        assert!(parse_ground_truth_str("1,3,0,0,10,10,1,-1\n").is_err());
        let o = derive_gt_matrix(&gt, 1, 2).unwrap();
        assert_eq!(o.labels()[(0, 0)], 1.0);
    }

    #[test]
    fn results_line_format() {
        let rec = TrackRecord { frame: 3, id: 2, bbox: BoundingBox::new(25.0, 40.0, 30.0, 40.0).unwrap() };
        assert_eq!(format_results(&[rec]), "3,2,10,20,30,40,-1,-1,-1,-1\n");
        assert_eq!(format_results(&[]), "");
        assert_eq!(parse_results_str(&format_results(&[rec])).unwrap(), vec![rec]);
    }

    #[test]
    fn frame_size_forms() {
        for s in ["1920x1080", "1920,1080", "1920\n1080\n"] {
            let f = parse_frame_size(s).unwrap();
            assert_eq!((f.width(), f.height()), (1920.0, 1080.0));
        }
        assert!(parse_frame_size("1920").is_err());
        assert!(parse_frame_size("0x10").is_err());
    }

    #[test]
    fn sequence_fills_empty_frames() {
        let f = parse_detections_str("2,-1,0,0,5,5,0.9,-1,-1,-1\n").unwrap();
        let s = detection_sequence("s", FrameSize::new(10.0, 10.0).unwrap(), &f, 4);
        assert_eq!(s.frames.iter().map(|f| (f.index, f.detections.len())).collect::<Vec<_>>(), vec![(1, 0), (2, 1), (3, 0), (4, 0)]);
    }
}
