//! Online tracking: one association step per frame over the live tracklets.

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::assoc::{binarize_and_assign, SinkhornConfig};
use crate::embeddings::{get_embedding, AppearanceEmbedding, EmbeddingError, EmbeddingSource};
use crate::geom::{BoundingBox, FrameSize};
use crate::graph::ObjectInstance;
use crate::params::Parameters;
use crate::pipeline::{forward, Ablation, PipelineConfig, PipelineError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackerError {
    #[error("invalid tracker configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl TrackerError {
    pub fn is_invariant_violation(&self) -> bool {
        matches!(self, TrackerError::Pipeline(e) if e.is_invariant_violation())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    /// Maximum center distance, in pixels, between a tracklet and a detection.
    pub gate_px: f64,
    /// Normalized assignments below this value are never matched.
    pub s_thres: f64,
    /// Frames a lost tracklet stays matchable before it is dropped.
    pub max_lost_age: u32,
    /// Detections with a lower confidence are ignored.
    pub min_confidence: f64,
    pub sinkhorn: SinkhornConfig,
    pub ablation: Ablation,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            gate_px: 200.0,
            s_thres: 0.2,
            max_lost_age: 45,
            min_confidence: 0.5,
            sinkhorn: SinkhornConfig::default(),
            ablation: Ablation::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.gate_px) || !positive(self.s_thres) || !positive(self.min_confidence) {
            return Err(TrackerError::InvalidConfig("gate, threshold and confidence must be positive"));
        }
        if self.max_lost_age == 0 {
            return Err(TrackerError::InvalidConfig("max_lost_age must be positive"));
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig { gate_px: self.gate_px, sinkhorn: self.sinkhorn, ablation: self.ablation }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub confidence: f64,
}

/// One output row: identity `id` observed at `bbox` in `frame`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackRecord {
    pub frame: u32,
    pub id: u64,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackState {
    Active,
    Lost,
}

/// A tracked identity, represented by its last observed instance only.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub id: u64,
    pub last_box: BoundingBox,
    pub last_embedding: AppearanceEmbedding,
    pub last_seen: u32,
    pub state: TrackState,
    /// Frames since the last match; 0 while active.
    pub age_lost: u32,
}

/// Detections of one frame, in file order (the order keys the embeddings).
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceFrame {
    pub index: u32,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub frame_size: FrameSize,
    pub frames: Vec<SequenceFrame>,
}

/// Tracker state for one sequence. Dead tracklets are dropped; ids are
/// never reused.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracker {
    config: TrackerConfig,
    tracklets: Vec<Tracklet>,
    next_id: u64,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Self, TrackerError> {
        config.validate()?;
        Ok(Self { config, tracklets: Vec::new(), next_id: 1 })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// Active and lost tracklets, in creation order.
    pub fn tracklets(&self) -> &[Tracklet] {
        &self.tracklets
    }

    /// Processes one frame and returns the records of tracklets matched or
    /// born in it, sorted by id. On error the tracker state is unchanged.
    pub fn step(
        &mut self,
        sequence: &str,
        frame_size: FrameSize,
        frame: &SequenceFrame,
        source: &dyn EmbeddingSource,
        params: &Parameters,
    ) -> Result<Vec<TrackRecord>, TrackerError> {
        let d_app = params.config().d_app;
        let mut kept = Vec::new();
        for (k, det) in frame.detections.iter().enumerate() {
            if det.confidence >= self.config.min_confidence {
                let embedding = get_embedding(source, sequence, frame.index, k, d_app)?;
                kept.push(ObjectInstance { bbox: det.bbox, embedding });
            }
        }
        let tracks: Vec<ObjectInstance> = self
            .tracklets
            .iter()
            .map(|t| ObjectInstance { bbox: t.last_box, embedding: t.last_embedding.clone() })
            .collect();
        let trace = forward(&tracks, &kept, frame_size, params, &self.config.pipeline())?;
        let result = binarize_and_assign(&trace.assignment, self.config.s_thres);

        let mut out = Vec::with_capacity(kept.len());
        let mut matched = alloc::vec![false; self.tracklets.len()];
        for &(i, j) in &result.matches {
            let t = &mut self.tracklets[i];
            t.last_box = kept[j].bbox;
            t.last_embedding = kept[j].embedding.clone();
            t.last_seen = frame.index;
            t.state = TrackState::Active;
            t.age_lost = 0;
            matched[i] = true;
            out.push(TrackRecord { frame: frame.index, id: t.id, bbox: t.last_box });
        }
        let max_age = self.config.max_lost_age;
        for (t, _) in self.tracklets.iter_mut().zip(&matched).filter(|(_, m)| !**m) {
            t.state = TrackState::Lost;
            t.age_lost += 1;
        }
        self.tracklets.retain(|t| t.age_lost <= max_age);
        for j in result.births {
            let id = self.next_id;
            self.next_id += 1;
            let obj = &kept[j];
            self.tracklets.push(Tracklet {
                id,
                last_box: obj.bbox,
                last_embedding: obj.embedding.clone(),
                last_seen: frame.index,
                state: TrackState::Active,
                age_lost: 0,
            });
            out.push(TrackRecord { frame: frame.index, id, bbox: obj.bbox });
        }
        out.sort_by_key(|r| r.id);
        Ok(out)
    }
}

/// Runs a fresh tracker over every frame; records are ordered by frame,
/// then id.
pub fn run_sequence(
    sequence: &Sequence,
    config: &TrackerConfig,
    params: &Parameters,
    source: &dyn EmbeddingSource,
) -> Result<Vec<TrackRecord>, TrackerError> {
    let mut tracker = Tracker::new(*config)?;
    let mut out = Vec::new();
    for frame in &sequence.frames {
        out.extend(tracker.step(&sequence.name, sequence.frame_size, frame, source, params)?);
    }
    Ok(out)
}
