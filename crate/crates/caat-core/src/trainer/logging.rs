//! Window accumulation and epoch evaluation shared by all training loops.
//! Baselines and ablated settings go through the same code so their logs
//! line up column for column.

use crate::adversary::AttackConfig;
use crate::nn::{Mlp, Tensor};
use crate::rng::Stream;
use crate::trainer::fairness::class_event_rates;
use crate::trainer::{ClassEpoch, EpochRow};
use crate::Result;

/// Running sums since the last epoch flush: combination weights, assigned
/// bounds, and adversary-lean counts split by class and by label provenance.
pub(crate) struct WindowStats {
    alpha_sum: f64,
    eps_sum: f64,
    n: usize,
    adv_by_class: Vec<usize>,
    n_by_class: Vec<usize>,
    adv_clean: usize,
    n_clean: usize,
    adv_noisy: usize,
    n_noisy: usize,
}

impl WindowStats {
    pub fn new(num_classes: usize) -> Self {
        WindowStats {
            alpha_sum: 0.0,
            eps_sum: 0.0,
            n: 0,
            adv_by_class: vec![0; num_classes],
            n_by_class: vec![0; num_classes],
            adv_clean: 0,
            n_clean: 0,
            adv_noisy: 0,
            n_noisy: 0,
        }
    }

    pub fn observe(&mut self, alpha: &[f64], eps: &[f64], labels: &[usize], noisy: &[bool]) {
        debug_assert_eq!(alpha.len(), labels.len());
        for i in 0..alpha.len() {
            self.alpha_sum += alpha[i];
            self.eps_sum += eps[i];
            self.n += 1;
            let adv = alpha[i] > 0.5;
            self.n_by_class[labels[i]] += 1;
            if adv {
                self.adv_by_class[labels[i]] += 1;
            }
            if noisy[i] {
                self.n_noisy += 1;
                if adv {
                    self.adv_noisy += 1;
                }
            } else {
                self.n_clean += 1;
                if adv {
                    self.adv_clean += 1;
                }
            }
        }
    }

    fn ratio(events: usize, total: usize) -> Option<f64> {
        (total > 0).then(|| events as f64 / total as f64)
    }

    /// Summarizes and clears the window.
    pub fn flush(&mut self) -> WindowSummary {
        let out = WindowSummary {
            mean_alpha: if self.n > 0 {
                self.alpha_sum / self.n as f64
            } else {
                f64::NAN
            },
            mean_eps: if self.n > 0 {
                self.eps_sum / self.n as f64
            } else {
                f64::NAN
            },
            adv_by_class: (0..self.adv_by_class.len())
                .map(|c| Self::ratio(self.adv_by_class[c], self.n_by_class[c]))
                .collect(),
            adv_clean: Self::ratio(self.adv_clean, self.n_clean),
            adv_noisy: Self::ratio(self.adv_noisy, self.n_noisy),
        };
        *self = WindowStats::new(self.adv_by_class.len());
        out
    }
}

pub(crate) struct WindowSummary {
    pub mean_alpha: f64,
    pub mean_eps: f64,
    pub adv_by_class: Vec<Option<f64>>,
    pub adv_clean: Option<f64>,
    pub adv_noisy: Option<f64>,
}

/// Evaluates the error rates on the fixed log subset and merges them with
/// the window summary into one log row.
#[allow(clippy::too_many_arguments)]
pub(crate) fn epoch_row(
    net: &Mlp,
    x_eval: &Tensor,
    labels_eval: &[usize],
    num_classes: usize,
    cfg: &AttackConfig,
    rng: &mut Stream,
    iter: usize,
    summary: WindowSummary,
) -> Result<EpochRow> {
    let rates = class_event_rates(net, x_eval, labels_eval, num_classes, cfg, rng)?;
    let per_class = (0..num_classes)
        .map(|c| ClassEpoch {
            class: c,
            err_nat: rates.nat_rate(c),
            err_bdy: rates.bdy_rate(c),
            err_rob: rates.rob_rate(c),
            adv_ratio: summary.adv_by_class[c],
        })
        .collect();
    Ok(EpochRow {
        iter,
        per_class,
        mean_alpha: summary.mean_alpha,
        mean_eps: summary.mean_eps,
        adv_ratio_clean: summary.adv_clean,
        adv_ratio_noisy: summary.adv_noisy,
    })
}
