use crate::params::Parameters;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    /// Decoupled decay: every step also subtracts `lr * weight_decay * theta`.
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-3, weight_decay: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moments for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: Parameters,
    v: Parameters,
    t: i32,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &Parameters) -> Self {
        Self { config, m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut Parameters, grads: &Parameters) {
        let c = self.config;
        self.t += 1;
        let bc1 = 1.0 - libm::pow(c.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, self.t as f64);
        let tensors = params.tensors_mut().into_iter().zip(grads.tensors()).zip(self.m.tensors_mut()).zip(self.v.tensors_mut());
        for (((theta, g), m), v) in tensors {
            assert_eq!(theta.len(), g.len(), "gradient shape mismatch");
            for k in 0..theta.len() {
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                let decay = c.lr * c.weight_decay * theta[k];
                theta[k] -= c.lr * m_hat / (libm::sqrt(v_hat) + c.eps) + decay;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ModelConfig;

    fn small() -> Parameters {
        Parameters::init(&ModelConfig { d_app: 3, d_inter: 2, layers: 2 }, 5).unwrap()
    }

    #[test]
    fn zero_gradient_without_decay_is_a_fixed_point() {
        let mut p = small();
        let before = p.clone();
        let mut opt = Adam::new(AdamConfig { weight_decay: 0.0, ..Default::default() }, &p);
        let g = p.zeros_like();
        for _ in 0..5 {
            opt.step(&mut p, &g);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn constant_gradient_matches_recurrences() {
        let cfg = AdamConfig { lr: 0.1, weight_decay: 0.01, ..Default::default() };
        let mut p = small();
        p.f_affinity.bias[0] = 0.5;
        let mut g = p.zeros_like();
        g.f_affinity.bias[0] = 2.0;
        let mut opt = Adam::new(cfg, &p);
        opt.step(&mut p, &g);
        // Step 1: m_hat = g, v_hat = g^2.
        let first = 0.5 - 0.1 * 2.0 / (2.0 + 1e-8) - 0.1 * 0.01 * 0.5;
        assert!((p.f_affinity.bias[0] - first).abs() < 1e-15);
        opt.step(&mut p, &g);
        let m: f64 = 0.9 * 0.2 + 0.2;
        let v: f64 = 0.999 * 0.004 + 0.004;
        let m_hat = m / (1.0 - 0.81);
        let v_hat = v / (1.0 - 0.999f64.powi(2));
        let second = first - 0.1 * m_hat / (v_hat.sqrt() + 1e-8) - 0.1 * 0.01 * first;
        assert!((p.f_affinity.bias[0] - second).abs() < 1e-15);
    }
}
