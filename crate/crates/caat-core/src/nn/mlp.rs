//! Fully-connected network with a configurable head, plus the glue for
//! binding its parameters to a tape either trainable or frozen.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::nn::graph::{Graph, NodeId};
use crate::nn::tensor::Tensor;
use crate::rng::stream;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    /// Raw final-layer outputs.
    Logits,
    /// Row-wise `softmax(logits / tau)`.
    Softmax { tau: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Layer widths, input first. `[4, 16, 2]` is one hidden layer.
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub head: Head,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(CoreError::invalid("need at least input and output widths"));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(CoreError::invalid("layer widths must be positive"));
        }
        if let Head::Softmax { tau } = self.head {
            if !(tau > 0.0) {
                return Err(CoreError::invalid("softmax temperature must be positive"));
            }
        }
        Ok(())
    }

    pub fn in_width(&self) -> usize {
        self.widths[0]
    }

    pub fn out_width(&self) -> usize {
        *self.widths.last().expect("validated widths")
    }
}

/// Network parameters: one `(weight, bias)` pair per layer, weight shaped
/// `in_w x out_w`, bias a `1 x out_w` row.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<(Tensor, Tensor)>,
}

/// Tape handles for one bound copy of the parameters, in layer order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub ids: Vec<(NodeId, NodeId)>,
}

impl Mlp {
    /// Uniform `+-sqrt(6 / (fan_in + fan_out))` weight init, zero biases.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = stream(seed, "mlp-init");
        let mut layers = Vec::new();
        for l in 0..spec.widths.len() - 1 {
            let (fan_in, fan_out) = (spec.widths[l], spec.widths[l + 1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Tensor::from_vec(
                fan_in,
                fan_out,
                (0..fan_in * fan_out).map(|_| rng.gen_range(-a..a)).collect(),
            )?;
            layers.push((w, Tensor::zeros(1, fan_out)));
        }
        Ok(Mlp { spec, layers })
    }

    /// Flat view in `[w0, b0, w1, b1, ..]` order; the optimizer and the
    /// checkpoint format both use it.
    pub fn params_flat(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn params_flat_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn set_from_flat(&mut self, values: &[Tensor]) -> Result<()> {
        if values.len() != self.layers.len() * 2 {
            return Err(CoreError::Shape(format!(
                "{} tensors for {} layer pairs",
                values.len(),
                self.layers.len()
            )));
        }
        for (l, pair) in values.chunks_exact(2).enumerate() {
            if !pair[0].same_shape(&self.layers[l].0) || !pair[1].same_shape(&self.layers[l].1) {
                return Err(CoreError::Shape(format!("layer {l} shape mismatch")));
            }
            self.layers[l].0 = pair[0].clone();
            self.layers[l].1 = pair[1].clone();
        }
        Ok(())
    }

    /// Binds the current parameter values as trainable tape leaves.
    pub fn bind_trainable(&self, g: &mut Graph) -> BoundParams {
        let ids = self
            .layers
            .iter()
            .map(|(w, b)| (g.param(w.clone()), g.param(b.clone())))
            .collect();
        BoundParams { ids }
    }

    /// Binds the current parameter values as constants (attack graphs).
    pub fn bind_frozen(&self, g: &mut Graph) -> BoundParams {
        let ids = self
            .layers
            .iter()
            .map(|(w, b)| (g.constant(w.clone()), g.constant(b.clone())))
            .collect();
        BoundParams { ids }
    }

    /// Binds explicit parameter tensors (virtual parameters) as trainable
    /// leaves, in flat `[w0, b0, ..]` order.
    pub fn bind_values(&self, g: &mut Graph, values: &[Tensor]) -> Result<BoundParams> {
        if values.len() != self.layers.len() * 2 {
            return Err(CoreError::Shape(format!(
                "{} tensors for {} layer pairs",
                values.len(),
                self.layers.len()
            )));
        }
        let ids = values
            .chunks_exact(2)
            .map(|pair| (g.param(pair[0].clone()), g.param(pair[1].clone())))
            .collect();
        Ok(BoundParams { ids })
    }

    /// Forward pass on the tape through bound parameters, head included.
    pub fn forward(&self, g: &mut Graph, bound: &BoundParams, x: NodeId) -> NodeId {
        let mut h = x;
        let last = bound.ids.len() - 1;
        for (l, &(w, b)) in bound.ids.iter().enumerate() {
            h = g.matmul(h, w);
            h = g.add_row(h, b);
            if l < last {
                h = match self.spec.activation {
                    Activation::Tanh => g.tanh(h),
                    Activation::Relu => g.relu(h),
                };
            }
        }
        match self.spec.head {
            Head::Logits => h,
            Head::Softmax { tau } => g.softmax_t(h, tau),
        }
    }

    /// Tape-free forward for evaluation; same arithmetic order as the
    /// tape path.
    pub fn forward_values(&self, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (l, (w, b)) in self.layers.iter().enumerate() {
            h = h.matmul(w);
            for r in 0..h.rows {
                for c in 0..h.cols {
                    let v = h.get(r, c) + b.get(0, c);
                    h.set(r, c, v);
                }
            }
            if l < last {
                for e in &mut h.data {
                    *e = match self.spec.activation {
                        Activation::Tanh => e.tanh(),
                        Activation::Relu => e.max(0.0),
                    };
                }
            }
        }
        match self.spec.head {
            Head::Logits => h,
            Head::Softmax { tau } => {
                let mut out = Tensor::zeros(h.rows, h.cols);
                let mut buf = vec![0.0; h.cols];
                for r in 0..h.rows {
                    super::graph::log_softmax_row(h.row(r), tau, &mut buf);
                    for (c, lp) in buf.iter().enumerate() {
                        out.set(r, c, lp.exp());
                    }
                }
                out
            }
        }
    }

    pub fn predict_rows(&self, x: &Tensor) -> Vec<usize> {
        let out = self.forward_values(x);
        (0..out.rows)
            .map(|r| {
                let row = out.row(r);
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(widths: &[usize]) -> MlpSpec {
        MlpSpec {
            widths: widths.to_vec(),
            activation: Activation::Tanh,
            head: Head::Logits,
        }
    }

    #[test]
    fn init_is_reproducible_and_bounded() {
        let a = Mlp::init(spec(&[3, 8, 2]), 5).unwrap();
        let b = Mlp::init(spec(&[3, 8, 2]), 5).unwrap();
        assert_eq!(a, b);
        let c = Mlp::init(spec(&[3, 8, 2]), 6).unwrap();
        assert_ne!(a, c);
        let bound = (6.0f64 / 11.0).sqrt();
        for v in &a.layers[0].0.data {
            assert!(v.abs() < bound);
        }
        assert!(a.layers[0].1.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tape_forward_matches_tape_free_forward_bitwise() {
        let net = Mlp::init(spec(&[4, 7, 3]), 11).unwrap();
        let x = Tensor::from_vec(2, 4, (0..8).map(|i| i as f64 * 0.13 - 0.4).collect()).unwrap();
        let direct = net.forward_values(&x);

        let mut g = Graph::new();
        let xid = g.constant(x.clone());
        let bound = net.bind_frozen(&mut g);
        let out = net.forward(&mut g, &bound, xid);
        let taped = g.value(out);
        assert_eq!(direct.data, taped.data);
    }

    #[test]
    fn softmax_head_rows_are_distributions() {
        let net = Mlp::init(
            MlpSpec {
                widths: vec![6, 10, 2],
                activation: Activation::Tanh,
                head: Head::Softmax { tau: 0.7 },
            },
            3,
        )
        .unwrap();
        let x = Tensor::from_vec(3, 6, (0..18).map(|i| (i as f64).sin()).collect()).unwrap();
        let out = net.forward_values(&x);
        for r in 0..out.rows {
            let s: f64 = out.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(out.row(r).iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn rejects_degenerate_specs() {
        assert!(Mlp::init(spec(&[4]), 0).is_err());
        assert!(Mlp::init(spec(&[4, 0, 2]), 0).is_err());
    }
}
