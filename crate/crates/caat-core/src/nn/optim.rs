//! SGD with classical momentum and decoupled-from-nothing weight decay:
//! decay is folded into the gradient before the momentum buffer, so a
//! zero-gradient parameter still shrinks by `1 - lr * wd` per step when
//! momentum is off.

use crate::error::CoreError;
use crate::nn::tensor::Tensor;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdConfig {
    pub fn plain(lr: f64) -> Self {
        SgdConfig {
            lr,
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(CoreError::invalid(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(CoreError::invalid(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(CoreError::invalid(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Sgd {
    pub cfg: SgdConfig,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(cfg: SgdConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Sgd {
            cfg,
            velocity: Vec::new(),
        })
    }

    /// One update over a flat parameter list. The list order must stay
    /// stable across steps; the momentum buffers are keyed by position.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(CoreError::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(CoreError::Shape(
                "parameter list changed length mid-training".into(),
            ));
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            if !p.same_shape(g) || !p.same_shape(v) {
                return Err(CoreError::Shape("parameter shape changed mid-training".into()));
            }
            for i in 0..p.data.len() {
                let g_eff = g.data[i] + self.cfg.weight_decay * p.data[i];
                v.data[i] = self.cfg.momentum * v.data[i] + g_eff;
                p.data[i] -= self.cfg.lr * v.data[i];
            }
        }
        Ok(())
    }
}
