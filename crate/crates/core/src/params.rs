//! Learnable parameters: the edge, edge-update and affinity metric learners
//! (single affine maps) and the GCN weight matrices, plus gradient slots of
//! identical shape.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng as _;
use thiserror::Error;

use crate::linalg::Matrix;
use crate::rng;

/// Number of geometric features per node.
pub const GEOM_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParamsError {
    #[error("input dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("bias length {bias} does not match layer output dimension {out}")]
    BiasMismatch { bias: usize, out: usize },
    #[error("parameter shapes do not match the model configuration")]
    ConfigMismatch,
    #[error("invalid model configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }
}

/// `activation(W x + b)` with `W` stored as `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl LinearLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self, ParamsError> {
        if bias.len() != weights.rows() {
            return Err(ParamsError::BiasMismatch { bias: bias.len(), out: weights.rows() });
        }
        Ok(Self { weights, bias, activation })
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self { weights: Matrix::zeros(out_dim, in_dim), bias: vec![0.0; out_dim], activation }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    /// `W x + b`, before the activation.
    pub fn pre_activation(&self, x: &[f64]) -> Result<Vec<f64>, ParamsError> {
        if x.len() != self.in_dim() {
            return Err(ParamsError::DimensionMismatch { expected: self.in_dim(), found: x.len() });
        }
        Ok((0..self.out_dim())
            .map(|o| crate::linalg::dot(self.weights.row(o), x) + self.bias[o])
            .collect())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, ParamsError> {
        let mut y = self.pre_activation(x)?;
        for v in &mut y {
            *v = self.activation.apply(*v);
        }
        Ok(y)
    }

    /// Scalar-output convenience used by all three metric learners.
    pub(crate) fn scalar_pre(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(self.out_dim(), 1);
        debug_assert_eq!(x.len(), self.in_dim());
        crate::linalg::dot(self.weights.row(0), x) + self.bias[0]
    }
}

/// Dimensions of the learnable part of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Appearance embedding length.
    pub d_app: usize,
    /// Interaction feature length (output of every GCN layer).
    pub d_inter: usize,
    /// Number of GCN layers.
    pub layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { d_app: 1024, d_inter: 128, layers: 2 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ParamsError> {
        if self.d_app == 0 || self.d_inter == 0 {
            return Err(ParamsError::InvalidConfig("feature dimensions must be positive"));
        }
        if self.layers == 0 {
            return Err(ParamsError::InvalidConfig("at least one GCN layer is required"));
        }
        Ok(())
    }

    pub fn edge_input_dim(&self) -> usize {
        2 * self.d_app + 2 * GEOM_DIM
    }

    pub fn phi_input_dim(&self) -> usize {
        1 + 2 * self.d_inter
    }

    /// `(in, out)` of GCN layer `k` (0-based). The first layer maps the
    /// appearance space to the interaction space, later ones stay there.
    pub fn gcn_dims(&self, k: usize) -> (usize, usize) {
        if k == 0 {
            (self.d_app, self.d_inter)
        } else {
            (self.d_inter, self.d_inter)
        }
    }

    /// Shapes of all tensors in canonical order.
    pub fn tensor_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = vec![(1, self.edge_input_dim()), (1, 1)];
        shapes.extend((0..self.layers).map(|k| self.gcn_dims(k)));
        shapes.extend([(1, self.phi_input_dim()), (1, 1), (1, 2), (1, 1)]);
        shapes
    }
}

/// All learnable weights.
///
/// `gcn[k]` is stored `in x out` so that a layer computes `Â H W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub f_edge: LinearLayer,
    pub gcn: Vec<Matrix>,
    pub phi: LinearLayer,
    pub f_affinity: LinearLayer,
}

impl Parameters {
    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            f_edge: LinearLayer::zeros(config.edge_input_dim(), 1, Activation::Relu),
            gcn: (0..config.layers)
                .map(|k| {
                    let (i, o) = config.gcn_dims(k);
                    Matrix::zeros(i, o)
                })
                .collect(),
            phi: LinearLayer::zeros(config.phi_input_dim(), 1, Activation::Relu),
            f_affinity: LinearLayer::zeros(2, 1, Activation::Identity),
        }
    }

    /// Glorot-uniform weights, `U[-a, a]` with `a = sqrt(6 / (in + out))`,
    /// and zero biases. Deterministic in `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ParamsError> {
        config.validate()?;
        let mut p = Self::zeros(config);
        let mut rng = rng::seeded(seed);
        let mut glorot = |m: &mut Matrix, fan_in: usize, fan_out: usize| {
            let a = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            for v in m.as_mut_slice() {
                *v = rng.random_range(-a..=a);
            }
        };
        let e = config.edge_input_dim();
        glorot(&mut p.f_edge.weights, e, 1);
        for (k, w) in p.gcn.iter_mut().enumerate() {
            let (i, o) = config.gcn_dims(k);
            glorot(w, i, o);
        }
        glorot(&mut p.phi.weights, config.phi_input_dim(), 1);
        glorot(&mut p.f_affinity.weights, 2, 1);
        Ok(p)
    }

    /// Hand-set weights that need no training: no edge messages, GCN weights
    /// copying the leading `min(d_app, d_inter)` components, and affinity
    /// `2 cos + 2 IoU - 1`. Same-identity pairs then score well above the
    /// slack, unrelated pairs below it.
    pub fn passthrough(config: &ModelConfig) -> Result<Self, ParamsError> {
        config.validate()?;
        let mut p = Self::zeros(config);
        for w in &mut p.gcn {
            for i in 0..w.rows().min(w.cols()) {
                w[(i, i)] = 1.0;
            }
        }
        p.f_affinity.weights[(0, 0)] = 2.0;
        p.f_affinity.weights[(0, 1)] = 2.0;
        p.f_affinity.bias[0] = -1.0;
        Ok(p)
    }

    /// Same shapes, all zeros; used for gradient buffers.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Model dimensions implied by the tensor shapes.
    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            d_app: self.gcn.first().map_or(0, |w| w.rows()),
            d_inter: self.gcn.last().map_or(0, |w| w.cols()),
            layers: self.gcn.len(),
        }
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        let mut s = vec![self.f_edge.weights.shape(), (1, self.f_edge.bias.len())];
        s.extend(self.gcn.iter().map(|w| w.shape()));
        s.extend([
            self.phi.weights.shape(),
            (1, self.phi.bias.len()),
            self.f_affinity.weights.shape(),
            (1, self.f_affinity.bias.len()),
        ]);
        s
    }

    /// Checks every tensor against the shapes implied by `config`.
    pub fn check_config(&self, config: &ModelConfig) -> Result<(), ParamsError> {
        config.validate()?;
        if self.shapes() == config.tensor_shapes() {
            Ok(())
        } else {
            Err(ParamsError::ConfigMismatch)
        }
    }

    /// Flat views of every tensor in canonical order (f_edge W, b, GCN W_1..W_K,
    /// phi W, b, f_affinity W, b).
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut t: Vec<&[f64]> = vec![self.f_edge.weights.as_slice(), &self.f_edge.bias];
        t.extend(self.gcn.iter().map(|w| w.as_slice()));
        t.extend([
            self.phi.weights.as_slice(),
            &self.phi.bias[..],
            self.f_affinity.weights.as_slice(),
            &self.f_affinity.bias[..],
        ]);
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t: Vec<&mut [f64]> = vec![self.f_edge.weights.as_mut_slice(), &mut self.f_edge.bias];
        t.extend(self.gcn.iter_mut().map(|w| w.as_mut_slice()));
        t.extend([
            self.phi.weights.as_mut_slice(),
            &mut self.phi.bias[..],
            self.f_affinity.weights.as_mut_slice(),
            &mut self.f_affinity.bias[..],
        ]);
        t
    }

    /// Human-readable tensor names, parallel to [`Parameters::tensors`].
    pub fn tensor_names(&self) -> Vec<alloc::string::String> {
        use alloc::format;
        use alloc::string::ToString;
        let mut n = vec!["f_edge.weight".to_string(), "f_edge.bias".to_string()];
        n.extend((0..self.gcn.len()).map(|k| format!("gcn.w{}", k + 1)));
        n.extend(["phi.weight", "phi.bias", "f_affinity.weight", "f_affinity.bias"].map(|s| s.to_string()));
        n
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += scale * other`, element-wise. Shapes must match.
    pub fn add_scaled(&mut self, other: &Parameters, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            assert_eq!(dst.len(), src.len(), "parameter shape mismatch");
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Parameters with their gradient slots.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    pub values: Parameters,
    pub grads: Parameters,
}

impl ParameterStore {
    pub fn new(values: Parameters) -> Self {
        let grads = values.zeros_like();
        Self { values, grads }
    }

    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ParamsError> {
        Ok(Self::new(Parameters::init(config, seed)?))
    }

    pub fn zero_grads(&mut self) {
        for t in self.grads.tensors_mut() {
            t.fill(0.0);
        }
    }

    pub fn accumulate(&mut self, grads: &Parameters, scale: f64) {
        self.grads.add_scaled(grads, scale);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_forward_examples() {
        let id = LinearLayer::new(Matrix::identity(2), vec![0.0, 0.0], Activation::Identity).unwrap();
        assert_eq!(id.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
        let relu = LinearLayer { activation: Activation::Relu, ..id.clone() };
        assert_eq!(relu.forward(&[-1.0, 2.0]).unwrap(), vec![0.0, 2.0]);
        let sum = LinearLayer::new(Matrix::from_rows(&[&[1.0, 1.0]]), vec![0.5], Activation::Identity).unwrap();
        assert_eq!(sum.forward(&[0.25, 0.25]).unwrap(), vec![1.0]);
    }

    #[test]
    fn linear_forward_rejects_wrong_length() {
        let l = LinearLayer::zeros(3, 1, Activation::Relu);
        assert_eq!(l.forward(&[1.0]), Err(ParamsError::DimensionMismatch { expected: 3, found: 1 }));
        assert!(LinearLayer::new(Matrix::zeros(2, 2), vec![0.0], Activation::Relu).is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let cfg = ModelConfig { d_app: 8, d_inter: 6, layers: 2 };
        let a = Parameters::init(&cfg, 7).unwrap();
        let b = Parameters::init(&cfg, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.f_edge.bias.iter().chain(&a.phi.bias).chain(&a.f_affinity.bias).all(|&v| v == 0.0));
        let c = Parameters::init(&cfg, 8).unwrap();
        let differs = a.tensors().iter().zip(c.tensors()).any(|(x, y)| x.iter().zip(y).any(|(p, q)| p != q));
        assert!(differs);
    }

    #[test]
    fn init_respects_glorot_bounds_and_shapes() {
        let cfg = ModelConfig { d_app: 16, d_inter: 4, layers: 3 };
        let p = Parameters::init(&cfg, 1).unwrap();
        assert_eq!(p.shapes(), cfg.tensor_shapes());
        assert_eq!(p.config(), cfg);
        let a = libm::sqrt(6.0 / 20.0);
        assert!(p.gcn[0].as_slice().iter().all(|v| v.abs() <= a));
        assert!(p.check_config(&cfg).is_ok());
        assert_eq!(p.check_config(&ModelConfig { layers: 2, ..cfg }), Err(ParamsError::ConfigMismatch));
    }

    #[test]
    fn gradient_slots_match_parameter_shapes() {
        let store = ParameterStore::init(&ModelConfig { d_app: 5, d_inter: 3, layers: 2 }, 3).unwrap();
        assert_eq!(store.values.shapes(), store.grads.shapes());
        assert!(store.grads.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(Parameters::init(&ModelConfig { d_app: 4, d_inter: 4, layers: 0 }, 0).is_err());
    }
}
