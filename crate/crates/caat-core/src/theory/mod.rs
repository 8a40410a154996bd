//! Closed-form error theory for linear rules on the two-Gaussian family,
//! plus the numerical bias-search oracle that replaces the expressions
//! not evaluated in closed form.

pub mod bias_search;
pub mod errors;
pub mod phi;
pub mod sweep;

pub use bias_search::optimal_robust_bias;
pub use errors::{
    class_errors_linear, corollary_condition, theorem1_natural_errors, theorem2_natural_errors,
    ClassErrors,
};
pub use phi::normal_cdf;
pub use sweep::{
    boundary_scope_sweep, linspace, monotonicity_report, CaseKind, MonotonicityReport, ScopeMode,
    ScopeSweep, SweepMode, SweepRow,
};
