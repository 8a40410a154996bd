//! Standard normal CDF with tail-accurate evaluation.

/// `Phi(z)`, the standard normal CDF, computed as `erfc(-z / sqrt 2) / 2`
/// so the lower tail keeps full relative accuracy.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}
