//! Run configuration: flat `key = value` lines, `#` starts a comment.
//!
//! Every key is optional; missing keys keep their defaults. Unknown keys and
//! values of the wrong type are errors.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sinkmot_core::assoc::SinkhornConfig;
use sinkmot_core::geom::FrameSize;
use sinkmot_core::params::ModelConfig;
use sinkmot_core::pipeline::{Ablation, PipelineConfig};
use sinkmot_core::train::{GradcheckConfig, LossNormalization, TrainConfig};
use sinkmot_core::tracker::TrackerConfig;

use crate::error::{read_text, DataError, ParseError};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub gate_px: f64,
    pub s_thres: f64,
    pub max_lost_age: u32,
    pub min_confidence: f64,
    pub s_slack: f64,
    pub l: f64,
    pub iters: usize,
    pub w: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub lookback: usize,
    pub epochs: usize,
    pub seed: u64,
    pub layers: usize,
    pub d_app: usize,
    pub d_inter: usize,
    pub appearance_only: bool,
    pub feed_forward: bool,
    pub strict_mn: bool,
    pub iou_threshold: f64,
    pub frame_width: Option<f64>,
    pub frame_height: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let tracker = TrackerConfig::default();
        let train = TrainConfig::default();
        let model = ModelConfig::default();
        Self {
            gate_px: tracker.gate_px,
            s_thres: tracker.s_thres,
            max_lost_age: tracker.max_lost_age,
            min_confidence: tracker.min_confidence,
            s_slack: tracker.sinkhorn.s_slack,
            l: tracker.sinkhorn.entropy,
            iters: tracker.sinkhorn.iters,
            w: train.w,
            lr: train.lr,
            weight_decay: train.weight_decay,
            batch_size: train.batch_size,
            lookback: train.lookback,
            epochs: train.epochs,
            seed: train.seed,
            layers: model.layers,
            d_app: model.d_app,
            d_inter: model.d_inter,
            appearance_only: false,
            feed_forward: false,
            strict_mn: false,
            iou_threshold: 0.5,
            frame_width: None,
            frame_height: None,
        }
    }
}

fn value<T: FromStr>(line: usize, key: &str, raw: &str, kind: &str) -> Result<T, ParseError> {
    raw.parse::<T>().map_err(|_| ParseError::new(line, format!("{key}: expected {kind}, found {raw:?}")))
}

fn real(line: usize, key: &str, raw: &str) -> Result<f64, ParseError> {
    let v: f64 = value(line, key, raw, "a number")?;
    if !v.is_finite() {
        return Err(ParseError::new(line, format!("{key}: value must be finite")));
    }
    Ok(v)
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, raw: &str, line: usize) -> Result<(), ParseError> {
        let int = "a non-negative integer";
        let boolean = "true or false";
        match key {
            "gate_px" => self.gate_px = real(line, key, raw)?,
            "s_thres" => self.s_thres = real(line, key, raw)?,
            "max_lost_age" => self.max_lost_age = value(line, key, raw, int)?,
            "min_confidence" => self.min_confidence = real(line, key, raw)?,
            "s_slack" => self.s_slack = real(line, key, raw)?,
            "l" => self.l = real(line, key, raw)?,
            "iters" => self.iters = value(line, key, raw, int)?,
            "w" => self.w = real(line, key, raw)?,
            "lr" => self.lr = real(line, key, raw)?,
            "weight_decay" => self.weight_decay = real(line, key, raw)?,
            "batch_size" => self.batch_size = value(line, key, raw, int)?,
            "lookback" => self.lookback = value(line, key, raw, int)?,
            "epochs" => self.epochs = value(line, key, raw, int)?,
            "seed" => self.seed = value(line, key, raw, int)?,
            "layers" => self.layers = value(line, key, raw, int)?,
            "d_app" => self.d_app = value(line, key, raw, int)?,
            "d_inter" => self.d_inter = value(line, key, raw, int)?,
            "appearance_only" => self.appearance_only = value(line, key, raw, boolean)?,
            "feed_forward" => self.feed_forward = value(line, key, raw, boolean)?,
            "strict_mn" => self.strict_mn = value(line, key, raw, boolean)?,
            "iou_threshold" => self.iou_threshold = real(line, key, raw)?,
            "frame_width" => self.frame_width = Some(real(line, key, raw)?),
            "frame_height" => self.frame_height = Some(real(line, key, raw)?),
            _ => return Err(ParseError::new(line, format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies the lines of a config file on top of `self`.
    pub fn apply_str(&mut self, text: &str) -> Result<(), ParseError> {
        for (i, raw_line) in text.lines().enumerate() {
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, raw)) = line.split_once('=') else {
                return Err(ParseError::new(i + 1, "expected `key = value`"));
            };
            self.set(key.trim(), raw.trim(), i + 1)?;
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self, ParseError> {
        let mut cfg = Self::default();
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = read_text(path)?;
        Self::parse_str(&text).map_err(|e| DataError::parse(path, e))
    }

    /// All keys with their current values, one per line.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("write to string");
        kv("gate_px", self.gate_px.to_string());
        kv("s_thres", self.s_thres.to_string());
        kv("max_lost_age", self.max_lost_age.to_string());
        kv("min_confidence", self.min_confidence.to_string());
        kv("s_slack", self.s_slack.to_string());
        kv("l", self.l.to_string());
        kv("iters", self.iters.to_string());
        kv("w", self.w.to_string());
        kv("lr", self.lr.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("lookback", self.lookback.to_string());
        kv("epochs", self.epochs.to_string());
        kv("seed", self.seed.to_string());
        kv("layers", self.layers.to_string());
        kv("d_app", self.d_app.to_string());
        kv("d_inter", self.d_inter.to_string());
        kv("appearance_only", self.appearance_only.to_string());
        kv("feed_forward", self.feed_forward.to_string());
        kv("strict_mn", self.strict_mn.to_string());
        kv("iou_threshold", self.iou_threshold.to_string());
        if let Some(v) = self.frame_width {
            kv("frame_width", v.to_string());
        }
        if let Some(v) = self.frame_height {
            kv("frame_height", v.to_string());
        }
        s
    }

    pub fn sinkhorn(&self) -> SinkhornConfig {
        SinkhornConfig { s_slack: self.s_slack, entropy: self.l, iters: self.iters }
    }

    pub fn ablation(&self) -> Ablation {
        Ablation { appearance_only: self.appearance_only, feed_forward: self.feed_forward }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig { gate_px: self.gate_px, sinkhorn: self.sinkhorn(), ablation: self.ablation() }
    }

    pub fn tracker(&self) -> TrackerConfig {
        TrackerConfig {
            gate_px: self.gate_px,
            s_thres: self.s_thres,
            max_lost_age: self.max_lost_age,
            min_confidence: self.min_confidence,
            sinkhorn: self.sinkhorn(),
            ablation: self.ablation(),
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig { d_app: self.d_app, d_inter: self.d_inter, layers: self.layers }
    }

    pub fn normalization(&self) -> LossNormalization {
        if self.strict_mn {
            LossNormalization::StrictMn
        } else {
            LossNormalization::IncludedCells
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            w: self.w,
            lookback: self.lookback,
            epochs: self.epochs,
            seed: self.seed,
            normalization: self.normalization(),
            pipeline: self.pipeline(),
        }
    }

    /// Gradient-check settings. The model stays at the small check size;
    /// only the layer count, loss and association settings come from here.
    pub fn gradcheck(&self, m: usize, n: usize) -> GradcheckConfig {
        let base = GradcheckConfig::default();
        GradcheckConfig {
            seed: self.seed,
            m,
            n,
            model: ModelConfig { layers: self.layers, ..base.model },
            loss: self.train().loss(),
            pipeline: self.pipeline(),
            ..base
        }
    }

    /// Frame size from the config, if both dimensions are present.
    pub fn frame_size(&self) -> Option<Result<FrameSize, sinkmot_core::geom::GeomError>> {
        match (self.frame_width, self.frame_height) {
            (Some(w), Some(h)) => Some(FrameSize::new(w, h)),
            _ => None,
        }
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, DataError> {
    RunConfig::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_component_defaults() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.tracker(), TrackerConfig::default());
        assert_eq!(cfg.train(), TrainConfig::default());
        assert_eq!(cfg.model(), ModelConfig::default());
        assert_eq!((cfg.l, cfg.iters, cfg.s_slack), (5.0, 8, 0.2));
        assert_eq!((cfg.lr, cfg.weight_decay, cfg.w, cfg.lookback), (2e-3, 1e-3, 10.0, 45));
    }

    #[test]
    fn parses_comments_and_values() {
        let text = "# tuned\nl = 20  # sharper\n\niters=200\nappearance_only = true\nseed = 7\n";
        let cfg = RunConfig::parse_str(text).unwrap();
        assert_eq!(cfg.l, 20.0);
        assert_eq!(cfg.iters, 200);
        assert!(cfg.appearance_only);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.gate_px, 200.0);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_types() {
        let e = RunConfig::parse_str("l = 5\nentropy = 3\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(e.message.contains("entropy"));
        let e = RunConfig::parse_str("iters = 8.5").unwrap_err();
        assert!(e.message.contains("iters"));
        assert!(RunConfig::parse_str("iters = -1").is_err());
        assert!(RunConfig::parse_str("feed_forward = yes").is_err());
        assert!(RunConfig::parse_str("lr = nan").is_err());
        assert!(RunConfig::parse_str("just words").is_err());
    }

    #[test]
    fn render_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.apply_str("lr = 0.05\nstrict_mn = true\nframe_width = 1920\nframe_height = 1080").unwrap();
        assert_eq!(RunConfig::parse_str(&cfg.render()).unwrap(), cfg);
        assert_eq!(cfg.train().normalization, LossNormalization::StrictMn);
        assert_eq!(cfg.frame_size().unwrap().unwrap().width(), 1920.0);
    }
}
