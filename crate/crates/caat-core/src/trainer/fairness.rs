//! Class-fairness multipliers and the error-event primitives they run on.
//!
//! Two nonnegative multipliers per class: phi tracks excess natural error,
//! psi excess boundary error. Both follow projected ascent on how far the
//! class sits above the mean rate plus a slack, and both feed back into the
//! classifier objective as `1 + multiplier` factors, so an all-zero state
//! reproduces the unconstrained objective exactly.

use crate::adversary::{gen_adversary_ce, AttackConfig};
use crate::error::CoreError;
use crate::nn::{Mlp, Tensor};
use crate::rng::Stream;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct FairnessState {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

impl FairnessState {
    pub fn new(num_classes: usize) -> Self {
        FairnessState {
            phi: vec![0.0; num_classes],
            psi: vec![0.0; num_classes],
        }
    }

    /// Multiplier on a class's natural and anti-adversarial loss terms.
    pub fn loss_factor(&self, class: usize) -> f64 {
        1.0 + self.phi[class]
    }

    /// Multiplier on a class's divergence term.
    pub fn divergence_factor(&self, class: usize) -> f64 {
        1.0 + self.psi[class]
    }
}

/// Projected ascent: `phi_c <- max(0, phi_c + step (nat_c - nat_mean - tau1))`
/// and the same for psi with the boundary rates and tau2. Classes absent
/// from the estimate (rate `None`) keep their multiplier.
pub fn fairness_update(
    state: &mut FairnessState,
    nat_rates: &[Option<f64>],
    bdy_rates: &[Option<f64>],
    nat_mean: f64,
    bdy_mean: f64,
    tau1: f64,
    tau2: f64,
    step: f64,
) -> Result<()> {
    if nat_rates.len() != state.phi.len() || bdy_rates.len() != state.psi.len() {
        return Err(CoreError::Shape("rate vectors must cover every class".into()));
    }
    if step < 0.0 || tau1 < 0.0 || tau2 < 0.0 {
        return Err(CoreError::invalid(
            "fairness step and slacks must be nonnegative",
        ));
    }
    for (c, rate) in nat_rates.iter().enumerate() {
        if let Some(r) = rate {
            state.phi[c] = (state.phi[c] + step * (r - nat_mean - tau1)).max(0.0);
        }
    }
    for (c, rate) in bdy_rates.iter().enumerate() {
        if let Some(r) = rate {
            state.psi[c] = (state.psi[c] + step * (r - bdy_mean - tau2)).max(0.0);
        }
    }
    Ok(())
}

/// Per-class error events on one evaluation set.
///
/// Natural: the prediction misses the label. Boundary: a bounded attack on
/// the predicted class flips the prediction. Robust: the sample is a natural
/// error or a bounded attack on the true label produces one, so the robust
/// rate can never fall below the natural rate.
#[derive(Debug, Clone)]
pub struct ClassEventRates {
    pub counts: Vec<usize>,
    pub nat_events: Vec<usize>,
    pub bdy_events: Vec<usize>,
    pub rob_events: Vec<usize>,
}

impl ClassEventRates {
    fn rate(events: &[usize], counts: &[usize], c: usize) -> Option<f64> {
        (counts[c] > 0).then(|| events[c] as f64 / counts[c] as f64)
    }

    pub fn nat_rate(&self, c: usize) -> Option<f64> {
        Self::rate(&self.nat_events, &self.counts, c)
    }

    pub fn bdy_rate(&self, c: usize) -> Option<f64> {
        Self::rate(&self.bdy_events, &self.counts, c)
    }

    pub fn rob_rate(&self, c: usize) -> Option<f64> {
        Self::rate(&self.rob_events, &self.counts, c)
    }

    fn overall(events: &[usize], counts: &[usize]) -> f64 {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return 0.0;
        }
        events.iter().sum::<usize>() as f64 / total as f64
    }

    pub fn overall_nat(&self) -> f64 {
        Self::overall(&self.nat_events, &self.counts)
    }

    pub fn overall_bdy(&self) -> f64 {
        Self::overall(&self.bdy_events, &self.counts)
    }

    pub fn overall_rob(&self) -> f64 {
        Self::overall(&self.rob_events, &self.counts)
    }

    pub fn nat_rates(&self) -> Vec<Option<f64>> {
        (0..self.counts.len()).map(|c| self.nat_rate(c)).collect()
    }

    pub fn bdy_rates(&self) -> Vec<Option<f64>> {
        (0..self.counts.len()).map(|c| self.bdy_rate(c)).collect()
    }
}

/// Counts natural, boundary, and robust error events per class. Both attacks
/// maximize cross-entropy: the boundary attack targets the predicted class,
/// the robust attack the observed label.
pub fn class_event_rates(
    net: &Mlp,
    x: &Tensor,
    labels: &[usize],
    num_classes: usize,
    cfg: &AttackConfig,
    rng: &mut Stream,
) -> Result<ClassEventRates> {
    if labels.len() != x.rows {
        return Err(CoreError::Shape("one label per row".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(CoreError::Dataset(format!(
            "label {bad} out of range for {num_classes} classes"
        )));
    }
    let pred = net.predict_rows(x);
    let x_bdy = gen_adversary_ce(net, x, &pred, cfg, rng)?;
    let pred_bdy = net.predict_rows(&x_bdy);
    let x_rob = gen_adversary_ce(net, x, labels, cfg, rng)?;
    let pred_rob = net.predict_rows(&x_rob);

    let mut out = ClassEventRates {
        counts: vec![0; num_classes],
        nat_events: vec![0; num_classes],
        bdy_events: vec![0; num_classes],
        rob_events: vec![0; num_classes],
    };
    for i in 0..x.rows {
        let y = labels[i];
        out.counts[y] += 1;
        let nat = pred[i] != y;
        if nat {
            out.nat_events[y] += 1;
        }
        if pred_bdy[i] != pred[i] {
            out.bdy_events[y] += 1;
        }
        if nat || pred_rob[i] != y {
            out.rob_events[y] += 1;
        }
    }
    Ok(out)
}
