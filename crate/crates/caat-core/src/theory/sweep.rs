//! Error curves along a perturbation-multiplier grid and boundary-scope
//! surfaces over per-class multiplier grids.

use crate::error::CoreError;
use crate::task::{ClassLabel, GaussianTaskSpec, LinearClassifier, NormKind, PerturbPolicy};
use crate::theory::bias_search::optimal_robust_bias;
use crate::theory::errors::{class_errors_linear, corollary_condition};
use crate::Result;

/// Which closed-form scenario a sweep instantiates. Label-noise tasks are
/// rejected here: noise mitigation is a property of surrogate-loss
/// training, not of the 0-1-optimal threshold (anti-perturbing flipped
/// samples moves their mass toward the boundary, which pushes the optimal
/// threshold the wrong way), so that scenario is validated by the
/// sampling experiment instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseKind {
    /// Balanced priors, class +1 wider by the variance ratio; the grid
    /// scales class +1's adversarial bound.
    DifficultyRatio,
    /// Equal variances, class -1 the majority; same grid role.
    PriorRatio,
}

/// Direction of class -1's fixed perturbation in difficulty/prior sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    /// Class -1 adversarial with bound `eps`.
    AdversarialOnly,
    /// Class -1 anti-adversarial with bound `eps`.
    Combined,
}

#[derive(Debug, Clone, Copy)]
pub struct SweepRow {
    pub rho: f64,
    pub bias: f64,
    /// Natural error per class, indexed by [`ClassLabel::index`].
    pub err_nat: [f64; 2],
    /// Error under a test-time adversary with the global bound `eps` on
    /// both classes.
    pub err_rob: [f64; 2],
    /// Signed gap `err_plus - err_minus`; positive while the nominally
    /// harder class still has the larger error.
    pub gap_nat: f64,
    pub gap_rob: f64,
}

/// Expected direction of each curve as the grid multiplier increases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    NonDecreasing,
    NonIncreasing,
}

fn holds(direction: Direction, xs: impl Iterator<Item = f64> + Clone) -> bool {
    let pairs = xs.clone().zip(xs.skip(1));
    match direction {
        Direction::NonDecreasing => pairs.clone().all(|(a, b)| b >= a),
        Direction::NonIncreasing => pairs.clone().all(|(a, b)| b <= a),
    }
}

#[derive(Debug, Clone)]
pub struct MonotonicityReport {
    pub case: CaseKind,
    pub rows: Vec<SweepRow>,
    /// Grid points whose bound would reach the mean magnitude, with the
    /// reason; they are surfaced here instead of silently dropped.
    pub inadmissible: Vec<(f64, String)>,
    pub expect_minus: Direction,
    pub expect_plus: Direction,
    pub expect_gap: Direction,
    /// Natural and perturbed class -1 curves follow `expect_minus`.
    pub minus_monotone: bool,
    /// Natural and perturbed class +1 curves follow `expect_plus`.
    pub plus_monotone: bool,
    /// Signed gap curves follow `expect_gap`.
    pub gap_monotone: bool,
}

impl MonotonicityReport {
    /// CSV rendering with a schema-version comment line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# theory-sweep v1\n");
        out.push_str("rho,err_nat_minus,err_nat_plus,err_rob_minus,err_rob_plus,gap_nat,gap_rob,bias\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.rho,
                r.err_nat[0],
                r.err_nat[1],
                r.err_rob[0],
                r.err_rob[1],
                r.gap_nat,
                r.gap_rob,
                r.bias
            ));
        }
        out
    }
}

fn case_for(task: &GaussianTaskSpec) -> Result<CaseKind> {
    let noisy = task.noise.map(|n| n.flip_ratio > 0.0).unwrap_or(false);
    if noisy {
        return Err(CoreError::invalid(
            "label-noise tasks have no closed-form sweep; use the sampling experiment".to_string(),
        ));
    }
    if task.k_factor > 1.0 && task.v_factor == 1.0 {
        return Ok(CaseKind::DifficultyRatio);
    }
    if task.k_factor == 1.0 && task.v_factor > 1.0 {
        return Ok(CaseKind::PriorRatio);
    }
    Err(CoreError::invalid(
        "task matches no sweep scenario (need k > 1 xor v > 1)".to_string(),
    ))
}

fn evaluate_row(
    task: &GaussianTaskSpec,
    clf: &LinearClassifier,
    rho: f64,
    eps: f64,
) -> Result<SweepRow> {
    // Natural and test-time errors are evaluated on the clean distribution.
    let clean_task = GaussianTaskSpec {
        noise: None,
        ..task.clone()
    };
    let test_policy = PerturbPolicy::uniform_adversarial(eps);
    let mut err_nat = [0.0; 2];
    let mut err_rob = [0.0; 2];
    for class in ClassLabel::BOTH {
        let e = class_errors_linear(&clean_task, clf, &test_policy, class)?;
        err_nat[class.index()] = e.natural;
        err_rob[class.index()] = e.robust;
    }
    Ok(SweepRow {
        rho,
        bias: clf.bias,
        err_nat,
        err_rob,
        gap_nat: err_nat[1] - err_nat[0],
        gap_rob: err_rob[1] - err_rob[0],
    })
}

/// Evaluates the per-class error curves along `rho_grid` and checks the
/// expected monotone directions.
///
/// The grid scales class +1's adversarial bound while class -1 keeps
/// bound `eps` in the direction chosen by `mode`; expected directions are
/// class -1 up, class +1 down, gap down.
///
/// Perturbed errors are reported under a test-time adversary with the
/// global bound `eps` on both classes, so the curves describe one fixed
/// evaluation while the training policy varies along the grid.
pub fn monotonicity_report(
    task: &GaussianTaskSpec,
    eps: f64,
    mode: SweepMode,
    rho_grid: &[f64],
) -> Result<MonotonicityReport> {
    task.validate()?;
    let case = case_for(task)?;
    if rho_grid.is_empty() {
        return Err(CoreError::invalid("rho grid must be nonempty"));
    }
    if !rho_grid.windows(2).all(|w| w[1] > w[0]) {
        return Err(CoreError::invalid("rho grid must be strictly increasing"));
    }

    let ratio = match case {
        CaseKind::DifficultyRatio => task.k_factor,
        CaseKind::PriorRatio => task.v_factor,
    };
    if !corollary_condition(ratio, task.d, task.eta, eps, task.sigma_minus)? {
        return Err(CoreError::invalid(
            "class ratio exceeds the admissibility threshold".to_string(),
        ));
    }

    let rho_minus = match mode {
        SweepMode::AdversarialOnly => 1.0,
        SweepMode::Combined => -1.0,
    };

    let mut rows = Vec::with_capacity(rho_grid.len());
    let mut inadmissible = Vec::new();
    for &rho in rho_grid {
        let admissible = (rho * eps).abs() < task.eta && eps < task.eta;
        if !admissible {
            inadmissible.push((
                rho,
                format!(
                    "|rho| * eps = {} reaches eta = {}",
                    (rho * eps).abs(),
                    task.eta
                ),
            ));
            continue;
        }
        let policy = PerturbPolicy {
            base_eps: eps,
            rho_minus,
            rho_plus: rho,
            norm: NormKind::MaxNorm,
        };
        let clf = optimal_robust_bias(task, &policy)?;
        rows.push(evaluate_row(task, &clf, rho, eps)?);
    }

    let (expect_minus, expect_plus, expect_gap) = (
        Direction::NonDecreasing,
        Direction::NonIncreasing,
        Direction::NonIncreasing,
    );

    let minus_monotone = holds(expect_minus, rows.iter().map(|r| r.err_nat[0]))
        && holds(expect_minus, rows.iter().map(|r| r.err_rob[0]));
    let plus_monotone = holds(expect_plus, rows.iter().map(|r| r.err_nat[1]))
        && holds(expect_plus, rows.iter().map(|r| r.err_rob[1]));
    let gap_monotone = holds(expect_gap, rows.iter().map(|r| r.gap_nat))
        && holds(expect_gap, rows.iter().map(|r| r.gap_rob));

    Ok(MonotonicityReport {
        case,
        rows,
        inadmissible,
        expect_minus,
        expect_plus,
        expect_gap,
        minus_monotone,
        plus_monotone,
        gap_monotone,
    })
}

/// Bias surface over an explicit per-class multiplier grid.
#[derive(Debug, Clone)]
pub struct ScopeSweep {
    pub rho_minus: Vec<f64>,
    pub rho_plus: Vec<f64>,
    /// Row-major: `bias[i * rho_plus.len() + j]` for `rho_minus[i]`,
    /// `rho_plus[j]`.
    pub bias: Vec<f64>,
    /// `[min, max]` of the surface.
    pub scope: (f64, f64),
}

impl ScopeSweep {
    pub fn bias_at(&self, i_minus: usize, j_plus: usize) -> f64 {
        self.bias[i_minus * self.rho_plus.len() + j_plus]
    }
}

/// Scope restriction for [`boundary_scope_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScopeMode {
    /// Both multipliers must be nonnegative.
    AdversarialOnly,
    /// Multipliers may take either sign.
    Combined,
}

/// Sweeps the optimal bias over a `(rho_minus, rho_plus)` grid and
/// reports the reachable `[min, max]` interval.
pub fn boundary_scope_sweep(
    task: &GaussianTaskSpec,
    eps: f64,
    rho_minus_grid: &[f64],
    rho_plus_grid: &[f64],
    mode: ScopeMode,
) -> Result<ScopeSweep> {
    task.validate()?;
    if rho_minus_grid.is_empty() || rho_plus_grid.is_empty() {
        return Err(CoreError::invalid("multiplier grids must be nonempty"));
    }
    for &r in rho_minus_grid.iter().chain(rho_plus_grid) {
        if mode == ScopeMode::AdversarialOnly && r < 0.0 {
            return Err(CoreError::invalid(format!(
                "adversarial-only scope requires nonnegative multipliers, got {r}"
            )));
        }
        if !((r * eps).abs() < task.eta) {
            return Err(CoreError::invalid(format!(
                "multiplier {r} puts the bound at or beyond eta = {}",
                task.eta
            )));
        }
    }

    let mut bias = Vec::with_capacity(rho_minus_grid.len() * rho_plus_grid.len());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &rm in rho_minus_grid {
        for &rp in rho_plus_grid {
            let policy = PerturbPolicy {
                base_eps: eps,
                rho_minus: rm,
                rho_plus: rp,
                norm: NormKind::MaxNorm,
            };
            let b = optimal_robust_bias(task, &policy)?.bias;
            lo = lo.min(b);
            hi = hi.max(b);
            bias.push(b);
        }
    }
    Ok(ScopeSweep {
        rho_minus: rho_minus_grid.to_vec(),
        rho_plus: rho_plus_grid.to_vec(),
        bias,
        scope: (lo, hi),
    })
}

/// Evenly spaced grid with `n` points over `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2, "grid needs at least two points");
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::LabelNoise;

    fn fig_task() -> GaussianTaskSpec {
        GaussianTaskSpec {
            k_factor: 2.0,
            ..GaussianTaskSpec::symmetric(2, 2.0, 1.0)
        }
    }

    #[test]
    fn single_point_grid_is_vacuously_monotone() {
        let report = monotonicity_report(&fig_task(), 0.2, SweepMode::AdversarialOnly, &[1.0]).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert!(report.minus_monotone && report.plus_monotone && report.gap_monotone);
    }

    #[test]
    fn difficulty_sweep_is_monotone_in_both_modes() {
        let grid = linspace(0.0, 9.5, 20);
        for mode in [SweepMode::AdversarialOnly, SweepMode::Combined] {
            let report = monotonicity_report(&fig_task(), 0.2, mode, &grid).unwrap();
            assert_eq!(report.rows.len(), 20);
            assert!(report.inadmissible.is_empty());
            assert!(report.minus_monotone, "{mode:?} minus");
            assert!(report.plus_monotone, "{mode:?} plus");
            assert!(report.gap_monotone, "{mode:?} gap");
        }
    }

    #[test]
    fn out_of_range_grid_points_are_reported_not_dropped_silently() {
        let grid = [1.0, 5.0, 10.0, 11.0];
        let report =
            monotonicity_report(&fig_task(), 0.2, SweepMode::AdversarialOnly, &grid).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.inadmissible.len(), 2);
        assert_eq!(report.inadmissible[0].0, 10.0);
    }

    #[test]
    fn noisy_tasks_are_routed_to_the_sampling_experiment() {
        let task = GaussianTaskSpec {
            noise: Some(LabelNoise {
                flip_ratio: 0.2,
                flipped_class: -1,
            }),
            ..GaussianTaskSpec::symmetric(2, 2.0, 1.0)
        };
        let grid = linspace(0.0, 4.0, 9);
        let msg = match monotonicity_report(&task, 0.2, SweepMode::Combined, &grid) {
            Ok(_) => panic!("noisy task must not get a closed-form sweep"),
            Err(e) => e.to_string(),
        };
        assert!(msg.contains("sampling experiment"), "{msg}");
    }

    #[test]
    fn zero_policy_anchor_matches_natural_bias() {
        let sweep = boundary_scope_sweep(&fig_task(), 0.2, &[0.0], &[0.0], ScopeMode::AdversarialOnly)
            .unwrap();
        let natural = optimal_robust_bias(&fig_task(), &PerturbPolicy::natural())
            .unwrap()
            .bias;
        assert!((sweep.bias[0] - natural).abs() < 1e-8);
    }

    #[test]
    fn combined_scope_strictly_contains_adversarial_scope() {
        let task = fig_task();
        let adv = boundary_scope_sweep(
            &task,
            0.2,
            &linspace(0.0, 4.0, 9),
            &linspace(0.0, 4.0, 9),
            ScopeMode::AdversarialOnly,
        )
        .unwrap();
        let comb = boundary_scope_sweep(
            &task,
            0.2,
            &linspace(-4.0, 4.0, 17),
            &linspace(-4.0, 4.0, 17),
            ScopeMode::Combined,
        )
        .unwrap();
        assert!(comb.scope.0 < adv.scope.0);
        assert!(comb.scope.1 > adv.scope.1);
    }

    #[test]
    fn adversarial_only_mode_rejects_negative_multipliers() {
        let err = boundary_scope_sweep(
            &fig_task(),
            0.2,
            &[-1.0, 0.0],
            &[0.0, 1.0],
            ScopeMode::AdversarialOnly,
        );
        assert!(err.is_err());
    }
}
