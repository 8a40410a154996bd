//! Domain types for the two-Gaussian classification family.
//!
//! Samples are drawn as `y` uniform over `{-1, +1}` (or with prior ratio
//! `1 : V` favoring class -1), then `x ~ N(y * theta, sigma_y^2 I)` with
//! `theta = (eta, ..., eta)`. Class -1 has standard deviation `sigma`,
//! class +1 has `K * sigma`. Optional label noise flips a fixed fraction
//! of one class's labels.

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::Result;

/// Binary class label; index 0 is class -1, index 1 is class +1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    Minus,
    Plus,
}

impl ClassLabel {
    pub const BOTH: [ClassLabel; 2] = [ClassLabel::Minus, ClassLabel::Plus];

    pub fn sign(self) -> f64 {
        match self {
            ClassLabel::Minus => -1.0,
            ClassLabel::Plus => 1.0,
        }
    }

    pub fn index(self) -> usize {
        match self {
            ClassLabel::Minus => 0,
            ClassLabel::Plus => 1,
        }
    }

    pub fn from_i8(v: i8) -> Result<Self> {
        match v {
            -1 => Ok(ClassLabel::Minus),
            1 => Ok(ClassLabel::Plus),
            other => Err(CoreError::invalid(format!(
                "class label must be -1 or +1, got {other}"
            ))),
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            ClassLabel::Minus => -1,
            ClassLabel::Plus => 1,
        }
    }

    pub fn other(self) -> ClassLabel {
        match self {
            ClassLabel::Minus => ClassLabel::Plus,
            ClassLabel::Plus => ClassLabel::Minus,
        }
    }
}

/// Label-noise settings: `flip_ratio` of the samples whose clean label is
/// `flipped_class` get the opposite observed label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelNoise {
    pub flip_ratio: f64,
    pub flipped_class: i8,
}

impl LabelNoise {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.flip_ratio) {
            return Err(CoreError::invalid(format!(
                "flip_ratio must lie in [0, 1), got {}",
                self.flip_ratio
            )));
        }
        ClassLabel::from_i8(self.flipped_class)?;
        Ok(())
    }
}

/// Parameters of the two-Gaussian data distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianTaskSpec {
    /// Feature dimension.
    pub d: usize,
    /// Mean magnitude; the class means are `+-(eta, ..., eta)`.
    pub eta: f64,
    /// Standard deviation of class -1.
    pub sigma_minus: f64,
    /// Variance ratio: class +1 has standard deviation `k_factor * sigma_minus`.
    pub k_factor: f64,
    /// Prior ratio: `p(+1) : p(-1) = 1 : v_factor`.
    pub v_factor: f64,
    /// Optional label noise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<LabelNoise>,
}

impl GaussianTaskSpec {
    /// Balanced, equal-variance, noise-free task.
    pub fn symmetric(d: usize, eta: f64, sigma: f64) -> Self {
        GaussianTaskSpec {
            d,
            eta,
            sigma_minus: sigma,
            k_factor: 1.0,
            v_factor: 1.0,
            noise: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(CoreError::invalid("dimension d must be at least 1"));
        }
        if !(self.eta > 0.0) {
            return Err(CoreError::invalid(format!("eta must be > 0, got {}", self.eta)));
        }
        if !(self.sigma_minus > 0.0) {
            return Err(CoreError::invalid(format!(
                "sigma_minus must be > 0, got {}",
                self.sigma_minus
            )));
        }
        if !(self.k_factor >= 1.0) {
            return Err(CoreError::invalid(format!(
                "k_factor must be >= 1, got {}",
                self.k_factor
            )));
        }
        if !(self.v_factor >= 1.0) {
            return Err(CoreError::invalid(format!(
                "v_factor must be >= 1, got {}",
                self.v_factor
            )));
        }
        if let Some(noise) = &self.noise {
            noise.validate()?;
        }
        Ok(())
    }

    pub fn sigma(&self, class: ClassLabel) -> f64 {
        match class {
            ClassLabel::Minus => self.sigma_minus,
            ClassLabel::Plus => self.k_factor * self.sigma_minus,
        }
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_minus.max(self.k_factor * self.sigma_minus)
    }

    /// Prior probability of each class; `p(+1) : p(-1) = 1 : V`.
    pub fn prior(&self, class: ClassLabel) -> f64 {
        let p_plus = 1.0 / (1.0 + self.v_factor);
        match class {
            ClassLabel::Minus => 1.0 - p_plus,
            ClassLabel::Plus => p_plus,
        }
    }

    /// Projection of the class mean onto the normalized all-ones direction.
    pub fn mean_projection(&self, class: ClassLabel) -> f64 {
        class.sign() * (self.d as f64).sqrt() * self.eta
    }
}

/// Perturbation norm convention. Only the max-norm is supported: the
/// closed forms below rely on the worst case shift of a linear score
/// being `radius * l1-norm(weights)`, which is the max-norm dual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    #[default]
    MaxNorm,
}

/// Per-class signed perturbation multipliers over a base bound.
///
/// Class c's perturbation ball has radius `|rho_c| * base_eps`; a positive
/// `rho_c` perturbs adversarially (toward higher loss), a negative one
/// anti-adversarially (toward lower loss).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbPolicy {
    pub base_eps: f64,
    pub rho_minus: f64,
    pub rho_plus: f64,
    #[serde(default)]
    pub norm: NormKind,
}

impl PerturbPolicy {
    pub fn natural() -> Self {
        PerturbPolicy {
            base_eps: 0.0,
            rho_minus: 0.0,
            rho_plus: 0.0,
            norm: NormKind::MaxNorm,
        }
    }

    /// Both classes adversarial with the same bound `eps`.
    pub fn uniform_adversarial(eps: f64) -> Self {
        PerturbPolicy {
            base_eps: eps,
            rho_minus: 1.0,
            rho_plus: 1.0,
            norm: NormKind::MaxNorm,
        }
    }

    pub fn rho(&self, class: ClassLabel) -> f64 {
        match class {
            ClassLabel::Minus => self.rho_minus,
            ClassLabel::Plus => self.rho_plus,
        }
    }

    /// Ball radius for a class (always nonnegative).
    pub fn radius(&self, class: ClassLabel) -> f64 {
        self.rho(class).abs() * self.base_eps
    }

    /// Signed worst-case shift of the class toward the decision boundary,
    /// in units of the base bound: positive means the class is attacked.
    pub fn signed_bound(&self, class: ClassLabel) -> f64 {
        self.rho(class) * self.base_eps
    }

    /// Requires `|rho_c| * eps < eta` for both classes so every perturbation
    /// ball stays strictly inside the class's own half of the mixture.
    pub fn validate_for(&self, task: &GaussianTaskSpec) -> Result<()> {
        if !(self.base_eps >= 0.0) {
            return Err(CoreError::invalid(format!(
                "base_eps must be >= 0, got {}",
                self.base_eps
            )));
        }
        for class in ClassLabel::BOTH {
            let bound = self.rho(class).abs() * self.base_eps;
            if !bound.is_finite() || bound >= task.eta {
                return Err(CoreError::invalid(format!(
                    "|rho| * eps must stay below eta = {}; class {:?} has {}",
                    task.eta, class, bound
                )));
            }
        }
        Ok(())
    }
}

/// Linear decision rule: predict +1 when `direction . x + bias >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    /// Unit-Euclidean-length weight vector.
    pub direction: Vec<f64>,
    pub bias: f64,
}

impl LinearClassifier {
    const UNIT_TOL: f64 = 1e-9;

    pub fn new(direction: Vec<f64>, bias: f64) -> Result<Self> {
        let clf = LinearClassifier { direction, bias };
        clf.validate()?;
        Ok(clf)
    }

    /// The normalized all-ones direction used by the closed-form theory.
    pub fn all_ones(d: usize, bias: f64) -> Self {
        let w = 1.0 / (d as f64).sqrt();
        LinearClassifier {
            direction: vec![w; d],
            bias,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.direction.is_empty() {
            return Err(CoreError::invalid("direction must be nonempty"));
        }
        let norm: f64 = self.direction.iter().map(|w| w * w).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > Self::UNIT_TOL {
            return Err(CoreError::invalid(format!(
                "direction must have unit length, got {norm}"
            )));
        }
        Ok(())
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.direction
            .iter()
            .zip(x)
            .map(|(w, xi)| w * xi)
            .sum::<f64>()
            + self.bias
    }

    pub fn predict(&self, x: &[f64]) -> ClassLabel {
        if self.score(x) >= 0.0 {
            ClassLabel::Plus
        } else {
            ClassLabel::Minus
        }
    }

    /// Decision threshold on the projected score `direction . x`.
    pub fn threshold(&self) -> f64 {
        -self.bias
    }

    /// l1 norm of the weights: the worst-case score shift per unit of
    /// max-norm perturbation radius.
    pub fn dual_norm(&self) -> f64 {
        self.direction.iter().map(|w| w.abs()).sum()
    }
}

/// Scalar terms appearing in the closed-form error expressions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremTerms {
    /// Variance-ratio term; defined for `k > 1`.
    pub b: f64,
    /// `q(K) = 2 ln K / (K^2 - 1)`, positive for `k > 1`.
    pub q_k: f64,
    /// Margin term for the equal-variance imbalanced family.
    pub a: f64,
}

impl TheoremTerms {
    pub fn compute(k: f64, v: f64, d: usize, eta: f64, sigma: f64, eps: f64, rho: f64) -> Result<Self> {
        let _ = v;
        let sqrt_d = (d as f64).sqrt();
        let margin = eta - eps * (1.0 + rho) / 2.0;
        let a = sqrt_d * margin / sigma;
        if k <= 1.0 {
            return Err(CoreError::invalid(format!(
                "variance-ratio terms require k > 1, got {k}"
            )));
        }
        let b = (2.0 / (k * k - 1.0)) * sqrt_d * margin / sigma;
        let q_k = 2.0 * k.ln() / (k * k - 1.0);
        Ok(TheoremTerms { b, q_k, a })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn priors_follow_v_factor() {
        let task = GaussianTaskSpec {
            v_factor: 10.0,
            ..GaussianTaskSpec::symmetric(2, 2.0, 1.0)
        };
        assert!((task.prior(ClassLabel::Plus) - 1.0 / 11.0).abs() < 1e-15);
        assert!((task.prior(ClassLabel::Minus) - 10.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn policy_rejects_bound_reaching_eta() {
        let task = GaussianTaskSpec::symmetric(2, 2.0, 1.0);
        let ok = PerturbPolicy {
            base_eps: 0.2,
            rho_minus: 1.0,
            rho_plus: 9.0,
            norm: NormKind::MaxNorm,
        };
        assert!(ok.validate_for(&task).is_ok());
        let bad = PerturbPolicy {
            base_eps: 0.2,
            rho_minus: 1.0,
            rho_plus: 10.0,
            norm: NormKind::MaxNorm,
        };
        assert!(bad.validate_for(&task).is_err());
        // The sign of rho does not change admissibility.
        let bad_anti = PerturbPolicy {
            base_eps: 0.2,
            rho_minus: -10.0,
            rho_plus: 1.0,
            norm: NormKind::MaxNorm,
        };
        assert!(bad_anti.validate_for(&task).is_err());
    }

    #[test]
    fn all_ones_direction_is_unit_and_dual_norm_is_sqrt_d() {
        for d in [1usize, 2, 7, 64] {
            let clf = LinearClassifier::all_ones(d, 0.3);
            clf.validate().unwrap();
            let dual = clf.dual_norm();
            assert!((dual - (d as f64).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn theorem_terms_match_hand_arithmetic() {
        // k = 2, eta = 2, sigma = 1, d = 2, eps = 0.2, rho = 1.
        let t = TheoremTerms::compute(2.0, 1.0, 2, 2.0, 1.0, 0.2, 1.0).unwrap();
        assert!((t.b - 1.6970562748477140).abs() < 1e-15);
        assert!((t.q_k - 0.46209812037329687).abs() < 1e-15);
        assert!((t.a - 2.5455844122715710).abs() < 1e-15);
        assert!(TheoremTerms::compute(1.0, 1.0, 2, 2.0, 1.0, 0.2, 1.0).is_err());
    }
}
