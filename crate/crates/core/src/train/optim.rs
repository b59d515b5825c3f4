use crate::error::{Error, Result};
use crate::network::Param;
use crate::tensor::Tensor;

/// Adam hyperparameters. Weight decay is decoupled from the gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0001,
        }
    }
}

/// Adam moments for a fixed list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl OptimState {
    pub fn new(config: AdamConfig, params: &[Param]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape())).collect::<Vec<_>>();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// Number of steps taken.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    /// One step at the configured learning rate.
    pub fn step(&mut self, params: &mut [Param], grads: &[Tensor]) -> Result<()> {
        self.step_with_lr(params, grads, self.config.lr)
    }

    /// One bias-corrected Adam step at learning rate `lr`:
    /// `θ ← θ - lr·wd·θ`, then `θ ← θ - lr·m̂ / (sqrt(v̂) + ε)`.
    /// Nothing is modified if any gradient is non-finite or mis-shaped.
    pub fn step_with_lr(&mut self, params: &mut [Param], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::InvalidConfig(format!(
                "optimizer tracks {} parameters, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.value.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.value.shape().into(),
                    rhs: g.shape().into(),
                });
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
            weight_decay,
            ..
        } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let theta = p.value.data_mut();
            for (((th, &gi), mi), vi) in theta.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *th -= lr * weight_decay * *th;
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *th -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`OptimState::step`].
pub fn adam_step(state: &mut OptimState, params: &mut [Param], grads: &[Tensor]) -> Result<()> {
    state.step(params, grads)
}
