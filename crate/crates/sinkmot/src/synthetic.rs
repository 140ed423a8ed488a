//! Seeded synthetic scenes for toy training, fixtures and end-to-end checks.

use rand::seq::SliceRandom;
use rand::Rng as _;
use sinkmot_core::embeddings::{synthetic_identity_embedding, EmbeddingSource, EmbeddingTable};
use sinkmot_core::geom::{BoundingBox, FrameSize};
use sinkmot_core::rng;
use sinkmot_core::tracker::{Detection, Sequence, SequenceFrame, TrackRecord};
use sinkmot_core::train::{LabeledObject, TrainingSequence};

use crate::formats::{DetectionRecord, FrameDetections};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneObject {
    pub id: u64,
    pub bbox: BoundingBox,
}

/// Annotated frames; `frames[0]` is frame 1. Object order within a frame is
/// the detection order and keys the embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub name: String,
    pub frame_size: FrameSize,
    pub frames: Vec<Vec<SceneObject>>,
}

fn quarter(v: f64) -> f64 {
    (v * 4.0).round() / 4.0
}

fn object(id: u64, cx: f64, cy: f64, w: f64, h: f64) -> SceneObject {
    SceneObject { id, bbox: BoundingBox::new(quarter(cx), quarter(cy), w, h).expect("positive box size") }
}

impl Scene {
    /// `identities` pedestrians spread across a 640x480 frame, each drifting
    /// by at most 1.5 px per frame, so nobody ever comes close to anybody
    /// else. Ids start at 1; within-frame order is shuffled.
    pub fn separable(name: &str, identities: usize, frames: usize, seed: u64) -> Scene {
        let (width, height) = (640.0, 480.0);
        let mut r = rng::seeded(rng::mix(seed, rng::hash_str(name)));
        let tracks: Vec<(f64, f64, f64, f64, f64, f64)> = (0..identities)
            .map(|k| {
                let x = width * (k as f64 + 1.0) / (identities as f64 + 1.0);
                let y = height / 2.0 + r.random_range(-20.0..20.0);
                let vx = r.random_range(-1.5..1.5);
                let vy = r.random_range(-1.5..1.5);
                let w = 40.0 + r.random_range(-5.0f64..5.0).round();
                let h = 90.0 + r.random_range(-5.0f64..5.0).round();
                (x, y, vx, vy, w, h)
            })
            .collect();
        let frames = (0..frames)
            .map(|t| {
                let mut objs: Vec<SceneObject> = tracks
                    .iter()
                    .enumerate()
                    .map(|(k, &(x, y, vx, vy, w, h))| object(k as u64 + 1, x + vx * t as f64, y + vy * t as f64, w, h))
                    .collect();
                objs.shuffle(&mut r);
                objs
            })
            .collect();
        Scene { name: name.to_string(), frame_size: FrameSize::new(width, height).expect("valid size"), frames }
    }

    /// Two pedestrians walking towards each other along nearly the same
    /// line. Identity 2 walks behind identity 1 and is not detected while
    /// their centers are within `occlusion_px`. Positions jitter by up to
    /// 2 px per frame.
    pub fn crossing(name: &str, frames: usize, occlusion_px: f64, seed: u64) -> Scene {
        let (width, height) = (640.0, 480.0);
        let mut r = rng::seeded(rng::mix(seed, rng::hash_str(name)));
        let span = (frames.max(2) - 1) as f64;
        let frames = (0..frames)
            .map(|t| {
                let s = t as f64 / span;
                let mut j = || r.random_range(-2.0..2.0);
                let a = object(1, 160.0 + 320.0 * s + j(), 240.0 + j(), 40.0, 90.0);
                let b = object(2, 480.0 - 320.0 * s + j(), 250.0 + j(), 40.0, 90.0);
                let mut objs = vec![a];
                if (a.bbox.cx() - b.bbox.cx()).abs() >= occlusion_px {
                    objs.push(b);
                }
                objs.shuffle(&mut r);
                objs
            })
            .collect();
        Scene { name: name.to_string(), frame_size: FrameSize::new(width, height).expect("valid size"), frames }
    }

    /// Identity embeddings for every object with per-key noise.
    pub fn embeddings(&self, dim: usize, noise: f64, seed: u64) -> EmbeddingTable {
        let mut table = EmbeddingTable::new(dim);
        let base = rng::mix(seed, rng::hash_str(&self.name));
        for (t, objs) in self.frames.iter().enumerate() {
            let frame = t as u32 + 1;
            for (idx, o) in objs.iter().enumerate() {
                let key_seed = rng::mix(rng::mix(base, frame as u64), idx as u64);
                table
                    .insert(&self.name, frame, idx, synthetic_identity_embedding(o.id, dim, noise, key_seed))
                    .expect("fresh key of the table dimension");
            }
        }
        table
    }

    pub fn training_sequence(&self, source: &dyn EmbeddingSource) -> TrainingSequence {
        let frames = self
            .frames
            .iter()
            .enumerate()
            .map(|(t, objs)| {
                objs.iter()
                    .enumerate()
                    .map(|(idx, o)| LabeledObject {
                        id: o.id,
                        bbox: o.bbox,
                        embedding: source.embedding(&self.name, t as u32 + 1, idx).expect("embedding for every object"),
                    })
                    .collect()
            })
            .collect();
        TrainingSequence { name: self.name.clone(), frame_size: self.frame_size, frames }
    }

    /// Tracker input with every object detected at confidence 1.
    pub fn sequence(&self) -> Sequence {
        let frames = self
            .frames
            .iter()
            .enumerate()
            .map(|(t, objs)| SequenceFrame {
                index: t as u32 + 1,
                detections: objs.iter().map(|o| Detection { bbox: o.bbox, confidence: 1.0 }).collect(),
            })
            .collect();
        Sequence { name: self.name.clone(), frame_size: self.frame_size, frames }
    }

    pub fn ground_truth(&self) -> Vec<TrackRecord> {
        self.frames
            .iter()
            .enumerate()
            .flat_map(|(t, objs)| objs.iter().map(move |o| TrackRecord { frame: t as u32 + 1, id: o.id, bbox: o.bbox }))
            .collect()
    }

    /// Detection file rows (id -1, confidence 1) for every non-empty frame.
    pub fn detections(&self) -> Vec<FrameDetections> {
        self.frames
            .iter()
            .enumerate()
            .filter(|(_, objs)| !objs.is_empty())
            .map(|(t, objs)| {
                let frame = t as u32 + 1;
                FrameDetections {
                    frame,
                    detections: objs.iter().map(|o| DetectionRecord { frame, id: -1, bbox: o.bbox, confidence: 1.0 }).collect(),
                }
            })
            .collect()
    }
}
