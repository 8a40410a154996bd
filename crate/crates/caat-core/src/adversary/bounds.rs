//! Perturbation-bound calculators: fixed, gradient-scaled per sample,
//! and class-wise boundary-error rebalancing.

use crate::adversary::{ce_grad_norms, kl_grad_norms};
use crate::error::CoreError;
use crate::nn::{Mlp, Tensor};
use crate::Result;

/// Offset added to the normalized gradient mix; keeps every bound at or
/// above 0.9 of the base one.
pub const GRAD_BOUND_OFFSET: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundMethod {
    Fixed,
    GradBased,
    ReMargin,
}

/// Per-sample perturbation bounds plus the diagnostics that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundAssignment {
    pub eps_i: Vec<f64>,
    pub method: BoundMethod,
    /// Normalized adversarial-gradient magnitudes (grad-based only).
    pub g_adv: Option<Vec<f64>>,
    /// Normalized anti-adversarial-gradient magnitudes (grad-based only).
    pub g_atadv: Option<Vec<f64>>,
}

impl BoundAssignment {
    pub fn fixed(eps: f64, n: usize) -> Self {
        BoundAssignment {
            eps_i: vec![eps; n],
            method: BoundMethod::Fixed,
            g_adv: None,
            g_atadv: None,
        }
    }

    pub fn mean_eps(&self) -> f64 {
        self.eps_i.iter().sum::<f64>() / self.eps_i.len() as f64
    }
}

/// Min-max normalization into [0, 1]. A batch without spread (including
/// a single sample) normalizes to all zeros.
fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spread = hi - lo;
    if !(spread > 0.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / spread).collect()
}

/// Mixes normalized gradient magnitudes into per-sample bounds:
/// `eps_i = (alpha_i * g_adv_i + beta_i * g_atadv_i + varepsilon) * eps`.
///
/// The raw norms are min-max normalized over the batch, so with
/// `alpha + beta = 1` the output lies in `[varepsilon * eps,
/// (1 + varepsilon) * eps]`; a final clamp enforces that range against
/// rounding.
pub fn grad_based_bound(
    alpha: &[f64],
    beta: &[f64],
    grad_norm_adv: &[f64],
    grad_norm_atadv: &[f64],
    eps: f64,
    varepsilon: f64,
) -> Result<BoundAssignment> {
    let n = alpha.len();
    if n == 0 {
        return Err(CoreError::invalid("empty batch"));
    }
    if beta.len() != n || grad_norm_adv.len() != n || grad_norm_atadv.len() != n {
        return Err(CoreError::Shape(format!(
            "length mismatch: alpha {n}, beta {}, adv norms {}, anti norms {}",
            beta.len(),
            grad_norm_adv.len(),
            grad_norm_atadv.len()
        )));
    }
    if !(eps > 0.0) || !(varepsilon >= 0.0) {
        return Err(CoreError::invalid("need eps > 0 and varepsilon >= 0"));
    }
    for i in 0..n {
        if (alpha[i] + beta[i] - 1.0).abs() > 1e-9 {
            return Err(CoreError::invalid(format!(
                "weights must satisfy alpha + beta = 1; sample {i} has {}",
                alpha[i] + beta[i]
            )));
        }
        if !grad_norm_adv[i].is_finite() || !grad_norm_atadv[i].is_finite() {
            return Err(CoreError::numerical("non-finite gradient norm"));
        }
    }

    let g_adv = min_max_normalize(grad_norm_adv);
    let g_atadv = min_max_normalize(grad_norm_atadv);
    let lo = varepsilon * eps;
    let hi = (1.0 + varepsilon) * eps;
    let eps_i: Vec<f64> = (0..n)
        .map(|i| ((alpha[i] * g_adv[i] + beta[i] * g_atadv[i] + varepsilon) * eps).clamp(lo, hi))
        .collect();
    Ok(BoundAssignment {
        eps_i,
        method: BoundMethod::GradBased,
        g_adv: Some(g_adv),
        g_atadv: Some(g_atadv),
    })
}

/// Class-wise bound rebalancing: classes whose boundary error sits above
/// the mean by more than the slack get a larger bound next round.
pub fn remargin_bounds(
    per_class_bdy_err: &[f64],
    mean_bdy_err: f64,
    tau2: f64,
    step: f64,
    current: &[f64],
    cap: f64,
) -> Result<Vec<f64>> {
    if per_class_bdy_err.len() != current.len() {
        return Err(CoreError::Shape(format!(
            "{} errors for {} class bounds",
            per_class_bdy_err.len(),
            current.len()
        )));
    }
    if per_class_bdy_err
        .iter()
        .chain(std::iter::once(&mean_bdy_err))
        .any(|e| !(0.0..=1.0).contains(e))
    {
        return Err(CoreError::invalid("boundary errors must lie in [0, 1]"));
    }
    if !(step > 0.0) || !(cap > 0.0) {
        return Err(CoreError::invalid("need step > 0 and cap > 0"));
    }
    Ok(per_class_bdy_err
        .iter()
        .zip(current)
        .map(|(&err, &eps_c)| (eps_c + step * (err - mean_bdy_err - tau2)).clamp(0.0, cap))
        .collect())
}

/// Inputs a bound strategy may consult when assigning per-sample bounds.
pub struct BoundContext<'a> {
    pub net: &'a Mlp,
    /// Clean batch.
    pub x: &'a Tensor,
    /// Observed labels (class indices).
    pub labels: &'a [usize],
    /// Noised adversarial starts (gradient probes happen here).
    pub adv_start: &'a Tensor,
    /// Noised anti-adversarial starts.
    pub atadv_start: &'a Tensor,
    pub alpha: &'a [f64],
    pub beta: &'a [f64],
    pub base_eps: f64,
    /// Current class-wise bounds (rebalancing state).
    pub per_class_eps: &'a [f64],
}

/// Strategy interface for turning a batch into per-sample bounds.
pub trait BoundStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    fn assign(&self, ctx: &BoundContext<'_>) -> Result<BoundAssignment>;
}

struct FixedBound;

impl BoundStrategy for FixedBound {
    fn name(&self) -> &'static str {
        "fixed"
    }

    fn assign(&self, ctx: &BoundContext<'_>) -> Result<BoundAssignment> {
        Ok(BoundAssignment::fixed(ctx.base_eps, ctx.x.rows))
    }
}

struct GradBasedBound;

impl BoundStrategy for GradBasedBound {
    fn name(&self) -> &'static str {
        "grad-based"
    }

    fn assign(&self, ctx: &BoundContext<'_>) -> Result<BoundAssignment> {
        let adv = kl_grad_norms(ctx.net, ctx.x, ctx.adv_start)?;
        let atadv = ce_grad_norms(ctx.net, ctx.atadv_start, ctx.labels)?;
        grad_based_bound(ctx.alpha, ctx.beta, &adv, &atadv, ctx.base_eps, GRAD_BOUND_OFFSET)
    }
}

struct ReMarginBound;

impl BoundStrategy for ReMarginBound {
    fn name(&self) -> &'static str {
        "remargin"
    }

    fn assign(&self, ctx: &BoundContext<'_>) -> Result<BoundAssignment> {
        let eps_i: Vec<f64> = ctx
            .labels
            .iter()
            .map(|&c| {
                ctx.per_class_eps.get(c).copied().ok_or_else(|| {
                    CoreError::invalid(format!(
                        "label {c} outside the {}-class bound table",
                        ctx.per_class_eps.len()
                    ))
                })
            })
            .collect::<Result<_>>()?;
        Ok(BoundAssignment {
            eps_i,
            method: BoundMethod::ReMargin,
            g_adv: None,
            g_atadv: None,
        })
    }
}

pub const BOUND_STRATEGIES: [&str; 3] = ["fixed", "grad-based", "remargin"];

/// Looks a bound strategy up by name.
pub fn bound_strategy(name: &str) -> Result<Box<dyn BoundStrategy>> {
    match name {
        "fixed" => Ok(Box::new(FixedBound)),
        "grad-based" => Ok(Box::new(GradBasedBound)),
        "remargin" => Ok(Box::new(ReMarginBound)),
        other => Err(CoreError::UnknownStrategy {
            name: other.to_string(),
            known: BOUND_STRATEGIES.join(", "),
        }),
    }
}
