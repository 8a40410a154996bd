//! Closed-form natural and perturbed error evaluation for linear
//! classifiers on the two-Gaussian family.

use crate::error::CoreError;
use crate::task::{ClassLabel, GaussianTaskSpec, LinearClassifier, PerturbPolicy, TheoremTerms};
use crate::theory::phi::normal_cdf;
use crate::Result;

/// Natural and policy-perturbed error probabilities of one class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassErrors {
    pub natural: f64,
    /// Error under the class's signed perturbation: an adversarial sign
    /// moves the class toward the boundary, an anti-adversarial sign away
    /// from it (so `robust < natural` is possible there).
    pub robust: f64,
}

/// Closed-form per-class errors of a linear rule under a perturbation
/// policy.
///
/// The projected score of class c is `N(sign_c * eta * sum(w) + bias_term, sigma_c^2)`;
/// a max-norm perturbation of radius r shifts the score by at most
/// `r * l1-norm(w)`, attained by the sign pattern of `w`.
pub fn class_errors_linear(
    task: &GaussianTaskSpec,
    clf: &LinearClassifier,
    policy: &PerturbPolicy,
    class: ClassLabel,
) -> Result<ClassErrors> {
    task.validate()?;
    clf.validate()?;
    policy.validate_for(task)?;
    if clf.direction.len() != task.d {
        return Err(CoreError::Shape(format!(
            "classifier dimension {} does not match task dimension {}",
            clf.direction.len(),
            task.d
        )));
    }
    let sigma = task.sigma(class);
    if !(sigma > 0.0) {
        return Err(CoreError::invalid("class standard deviation must be > 0"));
    }

    let w_sum: f64 = clf.direction.iter().sum();
    let mean = class.sign() * task.eta * w_sum;
    let t = clf.threshold();
    // Signed worst-case score shift toward this class's error region.
    let shift = policy.signed_bound(class) * clf.dual_norm();

    let (natural, robust) = match class {
        // Class -1 errs when the score crosses above the threshold.
        ClassLabel::Minus => (
            normal_cdf((mean - t) / sigma),
            normal_cdf((mean + shift - t) / sigma),
        ),
        // Class +1 errs when the score falls below the threshold.
        ClassLabel::Plus => (
            normal_cdf((t - mean) / sigma),
            normal_cdf((t - mean + shift) / sigma),
        ),
    };
    Ok(ClassErrors { natural, robust })
}

/// Natural errors of the optimal robust linear classifier when class -1
/// is attacked with bound `eps` and class +1 with bound `rho * eps`, for
/// variance ratio `k > 1` on balanced priors.
pub fn theorem1_natural_errors(
    k: f64,
    eta: f64,
    sigma: f64,
    d: usize,
    eps: f64,
    rho: f64,
) -> Result<(f64, f64)> {
    if k <= 1.0 {
        return Err(CoreError::invalid(format!(
            "closed form requires k > 1 (it divides by k^2 - 1), got {k}"
        )));
    }
    check_bounds(eta, sigma, d, eps, rho)?;
    let terms = TheoremTerms::compute(k, 1.0, d, eta, sigma, eps, rho)?;
    let b = terms.b;
    let root = (b * b + terms.q_k).sqrt();
    let sqrt_d = (d as f64).sqrt();
    let err_minus = normal_cdf(b - k * root - sqrt_d * eps / sigma);
    let err_plus = normal_cdf(-k * b + root - sqrt_d * rho * eps / (k * sigma));
    Ok((err_minus, err_plus))
}

/// Natural errors of the optimal robust linear classifier for equal
/// variances and prior ratio `p(+1) : p(-1) = 1 : v`, `v > 1`, with the
/// same per-class bounds as above.
pub fn theorem2_natural_errors(
    v: f64,
    eta: f64,
    sigma: f64,
    d: usize,
    eps: f64,
    rho: f64,
) -> Result<(f64, f64)> {
    if v <= 1.0 {
        return Err(CoreError::invalid(format!(
            "imbalanced closed form requires v > 1, got {v}"
        )));
    }
    check_bounds(eta, sigma, d, eps, rho)?;
    let terms = TheoremTerms::compute(2.0, v, d, eta, sigma, eps, rho)?;
    let a = terms.a;
    if !(a > 0.0) {
        return Err(CoreError::invalid(format!(
            "margin term must be positive, got {a} (eps * (1 + rho) / 2 >= eta)"
        )));
    }
    let sqrt_d = (d as f64).sqrt();
    let log_term = v.ln() / (2.0 * a);
    let err_minus = normal_cdf(-a - log_term - sqrt_d * eps / sigma);
    let err_plus = normal_cdf(-a + log_term - sqrt_d * rho * eps / sigma);
    Ok((err_minus, err_plus))
}

fn check_bounds(eta: f64, sigma: f64, d: usize, eps: f64, rho: f64) -> Result<()> {
    if d == 0 || !(eta > 0.0) || !(sigma > 0.0) {
        return Err(CoreError::invalid(
            "need d >= 1, eta > 0 and sigma > 0".to_string(),
        ));
    }
    if !(eps >= 0.0) || eps >= eta {
        return Err(CoreError::invalid(format!(
            "need 0 <= eps < eta, got eps = {eps}, eta = {eta}"
        )));
    }
    if !((rho * eps).abs() < eta) {
        return Err(CoreError::invalid(format!(
            "need |rho| * eps < eta, got rho = {rho}, eps = {eps}, eta = {eta}"
        )));
    }
    Ok(())
}

/// True when `factor < exp(d (eta - eps)^2 / (2 sigma^2))` (strictly),
/// the admissibility condition under which the monotone error claims
/// hold for both the variance-ratio and the prior-ratio family.
pub fn corollary_condition(factor: f64, d: usize, eta: f64, eps: f64, sigma: f64) -> Result<bool> {
    if !(factor > 0.0) || d == 0 || !(eta > 0.0) || !(sigma > 0.0) {
        return Err(CoreError::invalid("inputs must be positive".to_string()));
    }
    if !(eps >= 0.0) || eps >= eta {
        return Err(CoreError::invalid(format!(
            "need 0 <= eps < eta, got eps = {eps}, eta = {eta}"
        )));
    }
    let margin = eta - eps;
    let threshold = (d as f64 * margin * margin / (2.0 * sigma * sigma)).exp();
    Ok(factor < threshold)
}
