//! Analytic gradients against central finite differences.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;

use super::backward::loss_and_grad;
use super::loss::{wbce_loss, GroundTruth, LossConfig};
use super::TrainError;
use crate::embeddings::AppearanceEmbedding;
use crate::geom::{BoundingBox, FrameSize};
use crate::graph::ObjectInstance;
use crate::params::{ModelConfig, Parameters};
use crate::pipeline::{forward, PipelineConfig};
use crate::rng;

/// Below this magnitude gradients are compared in absolute terms. Central
/// differences at step 1e-5 carry roundoff noise near 1e-9 on an O(1) loss,
/// so a smaller floor would report noise on vanishing gradients as error.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub m: usize,
    pub n: usize,
    pub model: ModelConfig,
    /// Independent random instances to check.
    pub instances: usize,
    /// Finite-difference step.
    pub step: f64,
    pub tolerance: f64,
    pub loss: LossConfig,
    pub pipeline: PipelineConfig,
    /// Perturbs one analytic gradient entry before comparing; the check must
    /// then fail.
    pub corrupt_gradient: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            m: 2,
            n: 2,
            model: ModelConfig { d_app: 8, d_inter: 4, layers: 2 },
            instances: 3,
            step: 1e-5,
            tolerance: 1e-4,
            loss: LossConfig::default(),
            pipeline: PipelineConfig::default(),
            corrupt_gradient: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    /// Number of scalar parameters compared.
    pub checked: usize,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// A labelled tracklet/detection pair of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyInstance {
    pub tracklets: Vec<ObjectInstance>,
    pub detections: Vec<ObjectInstance>,
    pub frame: FrameSize,
    pub gt: GroundTruth,
}

/// Boxes clustered within the default gate, uniform embeddings in
/// `[-1, 1]^d`, and a random partial matching.
pub fn random_instance(r: &mut rng::Rng, m: usize, n: usize, d_app: usize) -> ToyInstance {
    let object = |r: &mut rng::Rng| ObjectInstance {
        bbox: BoundingBox::new(
            r.random_range(150.0..250.0),
            r.random_range(150.0..250.0),
            r.random_range(30.0..80.0),
            r.random_range(60.0..120.0),
        )
        .expect("positive extent"),
        embedding: AppearanceEmbedding::new((0..d_app).map(|_| r.random_range(-1.0..1.0)).collect()).expect("finite"),
    };
    let tracklets: Vec<_> = (0..m).map(|_| object(r)).collect();
    let detections: Vec<_> = (0..n).map(|_| object(r)).collect();
    let mut matches = Vec::new();
    let mut free: Vec<usize> = (0..m).collect();
    for j in 0..n {
        if !free.is_empty() && r.random_bool(0.7) {
            let i = free.swap_remove(r.random_range(0..free.len()));
            matches.push((i, j));
        }
    }
    let gt = GroundTruth::from_matches(m, n, &matches).expect("valid partial matching");
    ToyInstance { tracklets, detections, frame: FrameSize::new(640.0, 480.0).expect("valid frame"), gt }
}

/// Random weights with positive edge biases so most edges stay active.
fn check_params(model: &ModelConfig, seed: u64) -> Result<Parameters, TrainError> {
    let mut p = Parameters::init(model, seed).map_err(|e| TrainError::Pipeline(e.into()))?;
    p.f_edge.bias[0] = 0.5;
    p.phi.bias[0] = 0.5;
    p.f_affinity.bias[0] = 0.1;
    Ok(p)
}

pub fn instance_loss(inst: &ToyInstance, params: &Parameters, loss: &LossConfig, pipeline: &PipelineConfig) -> Result<f64, TrainError> {
    let trace = forward(&inst.tracklets, &inst.detections, inst.frame, params, pipeline)?;
    wbce_loss(&trace.assignment.s_star, &inst.gt, loss)
}

/// Compares every parameter of `params` on one instance.
pub fn check_instance(inst: &ToyInstance, params: &Parameters, cfg: &GradcheckConfig) -> Result<GradcheckReport, TrainError> {
    let trace = forward(&inst.tracklets, &inst.detections, inst.frame, params, &cfg.pipeline)?;
    let (_, mut analytic) = loss_and_grad(&trace, &inst.gt, &cfg.loss, params)?;
    if cfg.corrupt_gradient {
        let g = &mut analytic.f_affinity.bias[0];
        *g += 1e-3 + 0.01 * g.abs();
    }
    let names = params.tensor_names();
    let mut report =
        GradcheckReport { max_rel_error: 0.0, worst_tensor: String::new(), worst_index: 0, checked: 0, tolerance: cfg.tolerance };
    let mut probe = params.clone();
    for (t, grad) in analytic.tensors().iter().enumerate() {
        for k in 0..grad.len() {
            let orig = probe.tensors()[t][k];
            probe.tensors_mut()[t][k] = orig + cfg.step;
            let up = instance_loss(inst, &probe, &cfg.loss, &cfg.pipeline)?;
            probe.tensors_mut()[t][k] = orig - cfg.step;
            let down = instance_loss(inst, &probe, &cfg.loss, &cfg.pipeline)?;
            probe.tensors_mut()[t][k] = orig;
            let numeric = (up - down) / (2.0 * cfg.step);
            let err = relative_error(grad[k], numeric);
            report.checked += 1;
            if err > report.max_rel_error || (err.is_nan() && !report.max_rel_error.is_nan()) {
                report.max_rel_error = err;
                report.worst_tensor = names[t].clone();
                report.worst_index = k;
            }
        }
    }
    Ok(report)
}

/// Runs the check on `cfg.instances` random instances and returns the worst
/// result.
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport, TrainError> {
    cfg.model.validate().map_err(|e| TrainError::Pipeline(e.into()))?;
    let mut worst: Option<GradcheckReport> = None;
    let mut checked = 0;
    for k in 0..cfg.instances.max(1) {
        let seed = rng::mix(cfg.seed, k as u64);
        let mut r = rng::seeded(seed);
        let inst = random_instance(&mut r, cfg.m, cfg.n, cfg.model.d_app);
        let params = check_params(&cfg.model, seed)?;
        let rep = check_instance(&inst, &params, cfg)?;
        checked += rep.checked;
        if worst.as_ref().is_none_or(|w| !(rep.max_rel_error <= w.max_rel_error)) {
            worst = Some(rep);
        }
    }
    let mut out = worst.expect("at least one instance");
    out.checked = checked;
    Ok(out)
}
