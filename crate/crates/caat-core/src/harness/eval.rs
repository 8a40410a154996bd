//! Model evaluation: per-class natural, boundary, and robust error rates
//! with the aggregation rules every scenario report follows.

use serde::{Deserialize, Serialize};

use crate::adversary::{AttackConfig, BallRadii};
use crate::data::ClassDataset;
use crate::error::CoreError;
use crate::nn::Mlp;
use crate::rng;
use crate::trainer::{class_event_rates, ClassEventRates};
use crate::Result;

/// Classes below this evaluation count are excluded from the worst-class
/// scan (and from the matching averages) so a handful of samples cannot
/// dominate the headline number.
pub const WORST_CLASS_MIN_COUNT: usize = 30;

/// Attack batches are generated this many rows at a time.
const EVAL_BLOCK: usize = 1024;

/// Per-class and aggregate error rates of one model on one dataset.
///
/// `scored_classes` lists the classes behind the `avg_*` and `worst_*`
/// fields: those with at least [`WORST_CLASS_MIN_COUNT`] samples, or every
/// non-empty class when none reaches the cutoff. Computing both aggregates
/// over the same set keeps `worst >= avg` structural. Classes absent from
/// the dataset report `None`, never a NaN.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub counts: Vec<usize>,
    pub nat: Vec<Option<f64>>,
    pub bdy: Vec<Option<f64>>,
    pub rob: Vec<Option<f64>>,
    pub scored_classes: Vec<usize>,
    pub avg_nat: f64,
    pub avg_bdy: f64,
    pub avg_rob: f64,
    pub worst_nat: f64,
    pub worst_bdy: f64,
    pub worst_rob: f64,
}

impl EvalReport {
    fn from_rates(rates: &ClassEventRates) -> Result<EvalReport> {
        let total: usize = rates.counts.iter().sum();
        if total == 0 {
            return Err(CoreError::invalid("evaluation dataset is empty"));
        }
        let mut scored: Vec<usize> = (0..rates.counts.len())
            .filter(|&c| rates.counts[c] >= WORST_CLASS_MIN_COUNT)
            .collect();
        if scored.is_empty() {
            scored = (0..rates.counts.len())
                .filter(|&c| rates.counts[c] > 0)
                .collect();
        }
        let aggregate = |events: &[usize]| -> (f64, f64) {
            let mut ev = 0usize;
            let mut n = 0usize;
            let mut worst = 0.0f64;
            for &c in &scored {
                ev += events[c];
                n += rates.counts[c];
                worst = worst.max(events[c] as f64 / rates.counts[c] as f64);
            }
            (ev as f64 / n as f64, worst)
        };
        let (avg_nat, worst_nat) = aggregate(&rates.nat_events);
        let (avg_bdy, worst_bdy) = aggregate(&rates.bdy_events);
        let (avg_rob, worst_rob) = aggregate(&rates.rob_events);
        let report = EvalReport {
            counts: rates.counts.clone(),
            nat: rates.nat_rates(),
            bdy: rates.bdy_rates(),
            rob: (0..rates.counts.len()).map(|c| rates.rob_rate(c)).collect(),
            scored_classes: scored,
            avg_nat,
            avg_bdy,
            avg_rob,
            worst_nat,
            worst_bdy,
            worst_rob,
        };
        report.validate()?;
        Ok(report)
    }

    /// Structural invariants every report must satisfy.
    pub fn validate(&self) -> Result<()> {
        let k = self.counts.len();
        if self.nat.len() != k || self.bdy.len() != k || self.rob.len() != k {
            return Err(CoreError::Shape("one rate slot per class".into()));
        }
        if self.scored_classes.is_empty() {
            return Err(CoreError::invalid("no class was scored"));
        }
        for c in 0..k {
            let absent = self.counts[c] == 0;
            for rates in [&self.nat, &self.bdy, &self.rob] {
                match rates[c] {
                    None if absent => {}
                    Some(r) if !absent && (0.0..=1.0).contains(&r) => {}
                    _ => {
                        return Err(CoreError::invalid(format!(
                            "class {c} rate inconsistent with its count"
                        )))
                    }
                }
            }
            if let (Some(nat), Some(rob)) = (self.nat[c], self.rob[c]) {
                if rob < nat {
                    return Err(CoreError::invalid(format!(
                        "class {c} robust rate {rob} below natural rate {nat}"
                    )));
                }
            }
        }
        for (worst, avg, what) in [
            (self.worst_nat, self.avg_nat, "natural"),
            (self.worst_bdy, self.avg_bdy, "boundary"),
            (self.worst_rob, self.avg_rob, "robust"),
        ] {
            if worst + 1e-12 < avg {
                return Err(CoreError::invalid(format!(
                    "worst-class {what} rate {worst} below average {avg}"
                )));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let fmt = |r: Option<f64>| r.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from("# eval-report v1\nclass,count,err_nat,err_bdy,err_rob\n");
        for c in 0..self.counts.len() {
            out.push_str(&format!(
                "{c},{},{},{},{}\n",
                self.counts[c],
                fmt(self.nat[c]),
                fmt(self.bdy[c]),
                fmt(self.rob[c]),
            ));
        }
        let scored_total: usize = self.scored_classes.iter().map(|&c| self.counts[c]).sum();
        out.push_str(&format!(
            "avg,{scored_total},{},{},{}\n",
            self.avg_nat, self.avg_bdy, self.avg_rob
        ));
        out.push_str(&format!(
            "worst,{scored_total},{},{},{}\n",
            self.worst_nat, self.worst_bdy, self.worst_rob
        ));
        out
    }
}

/// Evaluates a classifier on a dataset under the given attack.
///
/// Natural errors count misclassified rows; boundary errors count rows
/// whose prediction an attack against the predicted label can change;
/// robust errors count rows that are misclassified or flipped by an attack
/// against the observed label. Attacks run in fixed-size blocks so the
/// result does not depend on available memory, and all randomness comes
/// from `seed`.
pub fn evaluate_model(
    net: &Mlp,
    data: &ClassDataset,
    attack: &AttackConfig,
    seed: u64,
) -> Result<EvalReport> {
    data.validate()?;
    if data.d != net.spec.in_width() {
        return Err(CoreError::Shape(format!(
            "dataset dimension {} does not match model input {}",
            data.d,
            net.spec.in_width()
        )));
    }
    if data.num_classes != net.spec.out_width() {
        return Err(CoreError::Shape(format!(
            "dataset has {} classes but the model scores {}",
            data.num_classes,
            net.spec.out_width()
        )));
    }
    if let BallRadii::PerSample(radii) = &attack.ball {
        if radii.len() != data.n() {
            return Err(CoreError::Shape(format!(
                "{} per-sample radii for {} rows",
                radii.len(),
                data.n()
            )));
        }
    }
    let mut rng = rng::stream(seed, "eval-attacks");
    let mut total = ClassEventRates {
        counts: vec![0; data.num_classes],
        nat_events: vec![0; data.num_classes],
        bdy_events: vec![0; data.num_classes],
        rob_events: vec![0; data.num_classes],
    };
    let mut start = 0;
    while start < data.n() {
        let end = (start + EVAL_BLOCK).min(data.n());
        let idx: Vec<usize> = (start..end).collect();
        let (x, labels, _) = data.gather(&idx)?;
        let block_attack = match &attack.ball {
            BallRadii::Uniform(_) => attack.clone(),
            BallRadii::PerSample(radii) => AttackConfig {
                ball: BallRadii::PerSample(radii[start..end].to_vec()),
                ..attack.clone()
            },
        };
        let block = class_event_rates(net, &x, &labels, data.num_classes, &block_attack, &mut rng)?;
        for c in 0..data.num_classes {
            total.counts[c] += block.counts[c];
            total.nat_events[c] += block.nat_events[c];
            total.bdy_events[c] += block.bdy_events[c];
            total.rob_events[c] += block.rob_events[c];
        }
        start = end;
    }
    EvalReport::from_rates(&total)
}
