//! Per-sample training characteristics and the running statistics that
//! standardize them before they reach the weighting network.
//!
//! Six descriptors per sample, all computed from the clean input under the
//! current classifier: cross-entropy loss, logit margin to the best other
//! class, L2 distance between the softmax output and the one-hot target,
//! prediction entropy in nats, the sample's class proportion in the training
//! pool, and the running mean loss of its class.

use crate::error::CoreError;
use crate::nn::{Head, Mlp, Tensor};
use crate::Result;

pub const NUM_CHARACTERISTICS: usize = 6;

pub type Characteristics = [f64; NUM_CHARACTERISTICS];

/// Running per-class mean of the cross-entropy loss, fed back as the sixth
/// characteristic. Classes not seen yet report 0.
#[derive(Debug, Clone)]
pub struct ClassLossStats {
    counts: Vec<u64>,
    means: Vec<f64>,
}

impl ClassLossStats {
    pub fn new(num_classes: usize) -> Self {
        ClassLossStats {
            counts: vec![0; num_classes],
            means: vec![0.0; num_classes],
        }
    }

    pub fn update(&mut self, labels: &[usize], losses: &[f64]) {
        debug_assert_eq!(labels.len(), losses.len());
        for (&y, &l) in labels.iter().zip(losses) {
            self.counts[y] += 1;
            self.means[y] += (l - self.means[y]) / self.counts[y] as f64;
        }
    }

    pub fn mean(&self, class: usize) -> f64 {
        self.means[class]
    }
}

/// Welford accumulator per characteristic. Standardization divides by
/// `std + 1e-8`, so a constant feature maps to exactly zero instead of
/// blowing up.
#[derive(Debug, Clone)]
pub struct RunningZScore {
    count: u64,
    mean: [f64; NUM_CHARACTERISTICS],
    m2: [f64; NUM_CHARACTERISTICS],
}

impl RunningZScore {
    pub fn new() -> Self {
        RunningZScore {
            count: 0,
            mean: [0.0; NUM_CHARACTERISTICS],
            m2: [0.0; NUM_CHARACTERISTICS],
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn update(&mut self, rows: &[Characteristics]) {
        for row in rows {
            self.count += 1;
            for j in 0..NUM_CHARACTERISTICS {
                let delta = row[j] - self.mean[j];
                self.mean[j] += delta / self.count as f64;
                self.m2[j] += delta * (row[j] - self.mean[j]);
            }
        }
    }

    fn std(&self, j: usize) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        (self.m2[j] / self.count as f64).sqrt()
    }

    pub fn standardize(&self, row: &Characteristics) -> Characteristics {
        let mut out = [0.0; NUM_CHARACTERISTICS];
        for j in 0..NUM_CHARACTERISTICS {
            out[j] = (row[j] - self.mean[j]) / (self.std(j) + 1e-8);
        }
        out
    }
}

impl Default for RunningZScore {
    fn default() -> Self {
        Self::new()
    }
}

/// Extracts the raw characteristics of one batch under `net`. The class loss
/// stats are updated with this batch before the sixth characteristic is read
/// off, so the running means always include the samples they describe.
pub fn extract_characteristics(
    net: &Mlp,
    x: &Tensor,
    labels: &[usize],
    class_proportion: &[f64],
    class_loss: &mut ClassLossStats,
) -> Result<Vec<Characteristics>> {
    if net.spec.head != Head::Logits {
        return Err(CoreError::invalid(
            "characteristics need a logits-head classifier",
        ));
    }
    let classes = net.spec.out_width();
    if class_proportion.len() != classes {
        return Err(CoreError::Shape(format!(
            "{} class proportions for {classes} classes",
            class_proportion.len()
        )));
    }
    if labels.iter().any(|&y| y >= classes) {
        return Err(CoreError::Dataset("label out of range".into()));
    }
    let logits = net.forward_values(x);
    let n = x.rows;
    let mut rows = Vec::with_capacity(n);
    let mut losses = Vec::with_capacity(n);
    for i in 0..n {
        let z = logits.row(i);
        let y = labels[i];
        let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = zmax + z.iter().map(|&v| (v - zmax).exp()).sum::<f64>().ln();
        let ce = lse - z[y];
        let margin = z[y]
            - z.iter()
                .enumerate()
                .filter(|&(k, _)| k != y)
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
        let mut err_sq = 0.0;
        let mut entropy = 0.0;
        for (k, &v) in z.iter().enumerate() {
            let lp = v - lse;
            let p = lp.exp();
            let target = if k == y { 1.0 } else { 0.0 };
            err_sq += (p - target) * (p - target);
            // p = 0 contributes nothing; skipping it avoids 0 * -inf.
            if p > 0.0 {
                entropy -= p * lp;
            }
        }
        losses.push(ce);
        rows.push([ce, margin, err_sq.sqrt(), entropy, class_proportion[y], 0.0]);
    }
    class_loss.update(labels, &losses);
    for (row, &y) in rows.iter_mut().zip(labels) {
        row[5] = class_loss.mean(y);
    }
    Ok(rows)
}
