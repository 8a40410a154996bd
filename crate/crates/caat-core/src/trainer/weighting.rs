//! Weighting network: maps standardized characteristics to a per-sample
//! adversary weight alpha. The anti-adversary weight is defined as
//! beta = 1 - alpha, so the pair always sits exactly on the simplex.

use crate::error::CoreError;
use crate::nn::{Activation, BoundParams, Graph, Head, Mlp, MlpSpec, NodeId, Tensor};
use crate::trainer::characteristics::{Characteristics, NUM_CHARACTERISTICS};
use crate::Result;

/// Softmax outputs are clamped into `[ALPHA_FLOOR, 1 - ALPHA_FLOOR]` so the
/// weights stay strictly inside (0, 1) even when rounding lands an output on
/// an endpoint. `1 - ALPHA_FLOOR` is the largest f64 below one.
const ALPHA_FLOOR: f64 = f64::EPSILON / 2.0;

#[derive(Debug, Clone)]
pub struct CombinationWeights {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl CombinationWeights {
    /// Builds the pair from raw alphas; beta is the exact complement, so
    /// `alpha[i] + beta[i] == 1.0` bitwise.
    pub fn from_alpha(alpha: Vec<f64>) -> Result<Self> {
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(CoreError::Numerical("non-finite combination weight".into()));
        }
        let alpha: Vec<f64> = alpha
            .into_iter()
            .map(|a| a.clamp(ALPHA_FLOOR, 1.0 - ALPHA_FLOOR))
            .collect();
        let beta = alpha.iter().map(|a| 1.0 - a).collect();
        Ok(CombinationWeights { alpha, beta })
    }

    /// Unit adversary weight on every sample; the settings without a
    /// weighting network use this fixed assignment.
    pub fn all_adversarial(n: usize) -> Self {
        CombinationWeights {
            alpha: vec![1.0; n],
            beta: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// Fraction of samples leaning adversarial (alpha > 1/2).
    pub fn adversary_ratio(&self) -> f64 {
        if self.alpha.is_empty() {
            return 0.0;
        }
        self.alpha.iter().filter(|&&a| a > 0.5).count() as f64 / self.alpha.len() as f64
    }
}

/// One hidden tanh layer onto a two-way tempered softmax. Column 0 is the
/// adversary weight.
#[derive(Debug, Clone)]
pub struct WeightingNet {
    pub net: Mlp,
}

impl WeightingNet {
    pub fn spec(hidden: usize, tau: f64) -> MlpSpec {
        MlpSpec {
            widths: vec![NUM_CHARACTERISTICS, hidden, 2],
            activation: Activation::Tanh,
            head: Head::Softmax { tau },
        }
    }

    pub fn init(hidden: usize, tau: f64, seed: u64) -> Result<Self> {
        Ok(WeightingNet {
            net: Mlp::init(Self::spec(hidden, tau), seed)?,
        })
    }

    /// Tape-free weights for a batch of standardized characteristics.
    pub fn weights(&self, zeta: &Tensor) -> Result<CombinationWeights> {
        let out = self.net.forward_values(zeta);
        CombinationWeights::from_alpha((0..out.rows).map(|i| out.get(i, 0)).collect())
    }

    /// Tape-bound forward for the weighting update. Returns the graph, the
    /// trainable parameter handles, and the softmax output node; the caller
    /// seeds the backward pass with a cotangent on that node.
    pub fn forward_tape(&self, zeta: &Tensor) -> (Graph, BoundParams, NodeId) {
        let mut g = Graph::new();
        let params = self.net.bind_trainable(&mut g);
        let x = g.input(zeta.clone());
        let out = self.net.forward(&mut g, &params, x);
        (g, params, out)
    }
}

pub fn rows_to_tensor(rows: &[Characteristics]) -> Tensor {
    let data: Vec<f64> = rows.iter().flatten().copied().collect();
    Tensor::from_vec(rows.len(), NUM_CHARACTERISTICS, data)
        .expect("row count times width matches data length")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeta(rows: usize, seed: u64) -> Tensor {
        use rand::Rng;
        let mut rng = crate::rng::stream(seed, "test-zeta");
        Tensor::from_vec(
            rows,
            NUM_CHARACTERISTICS,
            (0..rows * NUM_CHARACTERISTICS)
                .map(|_| rng.gen_range(-2.0..2.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn weights_sit_exactly_on_the_simplex() {
        let wnet = WeightingNet::init(100, 1.0, 7).unwrap();
        let w = wnet.weights(&zeta(40, 1)).unwrap();
        for (a, b) in w.alpha.iter().zip(&w.beta) {
            assert_eq!(a + b, 1.0);
            assert!(*a > 0.0 && *a < 1.0);
            assert!(*b > 0.0 && *b < 1.0);
        }
    }

    #[test]
    fn zero_output_layer_weights_both_directions_equally() {
        let mut wnet = WeightingNet::init(100, 1.0, 7).unwrap();
        wnet.net.layers[1].0.fill(0.0);
        wnet.net.layers[1].1.fill(0.0);
        let w = wnet.weights(&zeta(8, 2)).unwrap();
        for a in &w.alpha {
            assert!((a - 0.5).abs() < 1e-12, "alpha = {a}");
        }
    }

    #[test]
    fn low_temperature_saturates_the_weights() {
        let sharp = WeightingNet::init(100, 0.01, 7).unwrap();
        let soft = WeightingNet {
            net: Mlp {
                spec: WeightingNet::spec(100, 10.0),
                layers: sharp.net.layers.clone(),
            },
        };
        let z = zeta(30, 3);
        let ws = sharp.weights(&z).unwrap();
        let wf = soft.weights(&z).unwrap();
        for (a_sharp, a_soft) in ws.alpha.iter().zip(&wf.alpha) {
            assert!((a_sharp - 0.5).abs() >= (a_soft - 0.5).abs());
            assert!((a_soft - 0.5).abs() < 0.1, "soft alpha = {a_soft}");
        }
        // Rows whose logits nearly tie stay near 1/2 at any temperature, but
        // the bulk must hit the corners once tau is small.
        let saturated = ws
            .alpha
            .iter()
            .filter(|&&a| a < 1e-3 || a > 1.0 - 1e-3)
            .count();
        assert!(saturated >= 25, "only {saturated} of 30 saturated");
    }

    #[test]
    fn clamping_keeps_pathological_outputs_inside_the_open_interval() {
        let w = CombinationWeights::from_alpha(vec![0.0, 1.0, 0.3]).unwrap();
        assert!(w.alpha[0] > 0.0);
        assert!(w.alpha[1] < 1.0);
        assert!(w.beta[1] > 0.0);
        assert_eq!(w.alpha[2], 0.3);
        assert!(CombinationWeights::from_alpha(vec![f64::NAN]).is_err());
    }

    #[test]
    fn tape_forward_matches_the_tape_free_path_bitwise() {
        let wnet = WeightingNet::init(64, 0.7, 11).unwrap();
        let z = zeta(12, 4);
        let w = wnet.weights(&z).unwrap();
        let (g, _params, out) = wnet.forward_tape(&z);
        for i in 0..12 {
            assert_eq!(g.value(out).get(i, 0).to_bits(), w.alpha[i].to_bits());
        }
    }

    #[test]
    fn adversary_ratio_counts_the_majority_side() {
        let w = CombinationWeights::from_alpha(vec![0.9, 0.4, 0.51, 0.5]).unwrap();
        assert!((w.adversary_ratio() - 0.5).abs() < 1e-15);
    }
}
