//! Network training: the combined adversary/anti-adversary trainer, its
//! ablation settings, and the plain baselines it is measured against.
//!
//! Every algorithm hides behind [`TrainerAlgo`] and is looked up by name,
//! mirroring the bound-strategy registry. All loops share one rng
//! discipline: each consumer draws from its own purpose-labeled stream,
//! chunked by iteration, so adding or removing a component never shifts the
//! draws of another.

pub mod baselines;
pub mod characteristics;
pub mod fairness;
mod logging;
mod meta_trainer;
pub mod steps;
pub mod weighting;

use serde::{Deserialize, Serialize};

use crate::adversary::{AttackConfig, BallRadii, StepSize};
use crate::data::ClassDataset;
use crate::error::CoreError;
use crate::nn::{Activation, Head, Mlp, MlpSpec, SgdConfig};
use crate::Result;

pub use characteristics::{
    extract_characteristics, Characteristics, ClassLossStats, RunningZScore, NUM_CHARACTERISTICS,
};
pub use fairness::{
    class_event_rates, fairness_update, ClassEventRates, FairnessState,
};
pub use weighting::{CombinationWeights, WeightingNet};

/// Default sweep values for the divergence weight.
pub const LAMBDA_GRID: [f64; 4] = [2.0 / 3.0, 1.0, 1.5, 6.0];

/// How perturbation directions are assigned per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionMode {
    /// Every sample gets the adversarial direction at full weight.
    AllAdversarial,
    /// The weighting network splits each sample between the adversarial and
    /// anti-adversarial directions.
    Learned,
}

/// Shape of the per-sample objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveForm {
    /// Clean cross-entropy plus a scaled clean-to-perturbed divergence;
    /// adversaries maximize the divergence.
    Split,
    /// Cross-entropy straight on the perturbed input; adversaries maximize
    /// that cross-entropy.
    Direct,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch: usize,
    pub meta_batch: usize,
    /// Classifier step size.
    pub eta1: f64,
    /// Weighting-network step size.
    pub eta2: f64,
    /// Weight of the divergence term in the split objective.
    pub lambda: f64,
    /// Softmax temperature of the weighting head.
    pub tau: f64,
    /// Slack on excess natural error before a class draws a multiplier.
    pub tau1: f64,
    /// Slack on excess boundary error; also used by bound rebalancing.
    pub tau2: f64,
    pub fairness_step: f64,
    /// Iterations between fairness and bound-rebalancing updates.
    pub fairness_every: usize,
    pub log_every: usize,
    pub base_eps: f64,
    pub attack_steps: usize,
    pub init_noise_scale: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Hidden widths of the classifier.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Hidden width of the weighting network.
    pub weighting_hidden: usize,
    /// Held-out samples per class when the meta set is auto-compiled.
    pub meta_per_class: usize,
    /// Natural-training iterations before the meta split is chosen.
    pub warmup_iterations: usize,
    /// Overrides the trainer's default bound strategy when set.
    pub bound_method: Option<String>,
    /// Bound rebalancing may grow a class bound up to this multiple of
    /// `base_eps`.
    pub remargin_cap_factor: f64,
    /// Row cap for the fixed evaluation subset used in log rows.
    pub eval_subset: usize,
    pub objective: ObjectiveForm,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 600,
            batch: 64,
            meta_batch: 32,
            eta1: 0.1,
            eta2: 0.05,
            lambda: 1.0,
            tau: 1.0,
            tau1: 0.02,
            tau2: 0.02,
            fairness_step: 0.5,
            fairness_every: 50,
            log_every: 50,
            base_eps: 0.2,
            attack_steps: 10,
            init_noise_scale: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            hidden: vec![16],
            activation: Activation::Tanh,
            weighting_hidden: 100,
            meta_per_class: 60,
            warmup_iterations: 50,
            bound_method: None,
            remargin_cap_factor: 1.9,
            eval_subset: 512,
            objective: ObjectiveForm::Split,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("iterations", self.iterations),
            ("batch", self.batch),
            ("meta_batch", self.meta_batch),
            ("fairness_every", self.fairness_every),
            ("log_every", self.log_every),
            ("attack_steps", self.attack_steps),
            ("weighting_hidden", self.weighting_hidden),
            ("meta_per_class", self.meta_per_class),
            ("eval_subset", self.eval_subset),
        ] {
            if v == 0 {
                return Err(CoreError::invalid(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("eta1", self.eta1),
            ("eta2", self.eta2),
            ("lambda", self.lambda),
            ("tau", self.tau),
            ("base_eps", self.base_eps),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CoreError::invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [
            ("tau1", self.tau1),
            ("tau2", self.tau2),
            ("fairness_step", self.fairness_step),
            ("init_noise_scale", self.init_noise_scale),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(CoreError::invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(CoreError::invalid(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(CoreError::invalid("hidden widths must be positive"));
        }
        if !(self.remargin_cap_factor >= 1.0) {
            return Err(CoreError::invalid(format!(
                "remargin_cap_factor must be >= 1, got {}",
                self.remargin_cap_factor
            )));
        }
        Ok(())
    }

    pub fn classifier_spec(&self, d: usize, classes: usize) -> MlpSpec {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(d);
        widths.extend_from_slice(&self.hidden);
        widths.push(classes);
        MlpSpec {
            widths,
            activation: self.activation,
            head: Head::Logits,
        }
    }

    pub fn classifier_sgd(&self) -> SgdConfig {
        SgdConfig {
            lr: self.eta1,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    /// Training attacks: configured step count on the given radii.
    pub fn attack_config(&self, ball: BallRadii, domain_clip: Option<(f64, f64)>) -> AttackConfig {
        AttackConfig {
            steps: self.attack_steps,
            step_size: StepSize::Auto,
            init_noise_scale: self.init_noise_scale,
            ball,
            domain_clip,
        }
    }

    /// Evaluation attacks at the base bound.
    pub fn eval_attack(&self, domain_clip: Option<(f64, f64)>) -> AttackConfig {
        AttackConfig {
            domain_clip,
            ..AttackConfig::eval_default(self.base_eps)
        }
    }
}

/// Per-class slice of one log row. Rates are `None` when the window or the
/// evaluation subset held no sample of the class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassEpoch {
    pub class: usize,
    pub err_nat: Option<f64>,
    pub err_bdy: Option<f64>,
    pub err_rob: Option<f64>,
    /// Fraction of this class's batch samples that leaned adversarial
    /// (alpha above 1/2) since the previous log row.
    pub adv_ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRow {
    /// 1-based iteration count at the end of the window.
    pub iter: usize,
    pub per_class: Vec<ClassEpoch>,
    pub mean_alpha: f64,
    pub mean_eps: f64,
    pub adv_ratio_clean: Option<f64>,
    pub adv_ratio_noisy: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<EpochRow>,
}

impl TrainLog {
    pub fn last(&self) -> Option<&EpochRow> {
        self.rows.last()
    }
}

/// Everything a finished run hands back: the trained classifier, the
/// weighting network when one was learned, the final fairness and bound
/// state, the held-out meta rows when they were carved from the training
/// data, and the windowed log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: Mlp,
    pub weighting: Option<Mlp>,
    pub fairness: FairnessState,
    pub per_class_eps: Vec<f64>,
    pub meta_indices: Option<Vec<usize>>,
    pub log: TrainLog,
}

pub trait TrainerAlgo: Send + Sync {
    fn name(&self) -> &'static str;

    /// Runs the full loop on `data`. `meta` supplies held-out data for the
    /// weighting update; trainers that need one and get `None` carve it out
    /// of `data` themselves, and trainers without a weighting network ignore
    /// it. All randomness derives from `seed`.
    fn train(
        &self,
        data: &ClassDataset,
        meta: Option<&ClassDataset>,
        cfg: &TrainConfig,
        seed: u64,
    ) -> Result<TrainOutcome>;
}

pub const TRAINER_NAMES: [&str; 7] = [
    "caat",
    "setting-i",
    "setting-ii",
    "setting-iii",
    "setting-iv",
    "trades",
    "pgd-at",
];

/// Looks up a trainer by name. `caat` is the full method; `setting-i`
/// through `setting-iv` are its ablation grid over direction assignment
/// (all-adversarial vs learned) and bound strategy (fixed vs gradient
/// based), with `setting-iv` equal to `caat` under a different name.
pub fn trainer(name: &str) -> Result<Box<dyn TrainerAlgo>> {
    use meta_trainer::CaatVariant;
    match name {
        "caat" => Ok(Box::new(CaatVariant {
            name: "caat",
            direction: DirectionMode::Learned,
            default_bound: "grad-based",
        })),
        "setting-i" => Ok(Box::new(CaatVariant {
            name: "setting-i",
            direction: DirectionMode::AllAdversarial,
            default_bound: "fixed",
        })),
        "setting-ii" => Ok(Box::new(CaatVariant {
            name: "setting-ii",
            direction: DirectionMode::AllAdversarial,
            default_bound: "grad-based",
        })),
        "setting-iii" => Ok(Box::new(CaatVariant {
            name: "setting-iii",
            direction: DirectionMode::Learned,
            default_bound: "fixed",
        })),
        "setting-iv" => Ok(Box::new(CaatVariant {
            name: "setting-iv",
            direction: DirectionMode::Learned,
            default_bound: "grad-based",
        })),
        "trades" => Ok(Box::new(baselines::TradesBaseline)),
        "pgd-at" => Ok(Box::new(baselines::PgdAtBaseline)),
        _ => Err(CoreError::UnknownStrategy {
            name: name.into(),
            known: TRAINER_NAMES.join(", "),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand_distr::{Distribution, StandardNormal};

    /// Two Gaussian blobs at +-(sep, sep, ..), optionally with a fraction of
    /// class-0 labels flipped to 1.
    fn blobs(n_per: usize, d: usize, sep: f64, flip_frac: f64, seed: u64) -> ClassDataset {
        let mut rng = stream(seed, "test-blobs");
        let n = 2 * n_per;
        let mut features = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        let mut noisy = vec![false; n];
        for i in 0..n {
            let class = i % 2;
            let center = if class == 0 { -sep } else { sep };
            for _ in 0..d {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push(center + z);
            }
            labels.push(class);
        }
        let flips = (n_per as f64 * flip_frac).round() as usize;
        let mut flipped = 0;
        for i in 0..n {
            if labels[i] == 0 && flipped < flips {
                labels[i] = 1;
                noisy[i] = true;
                flipped += 1;
            }
        }
        ClassDataset {
            features,
            d,
            labels,
            num_classes: 2,
            noisy,
            domain_clip: None,
        }
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            iterations: 24,
            batch: 8,
            meta_batch: 4,
            attack_steps: 3,
            fairness_every: 6,
            log_every: 8,
            meta_per_class: 6,
            warmup_iterations: 8,
            weighting_hidden: 12,
            hidden: vec![6],
            eval_subset: 24,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn the_registry_resolves_every_name_and_rejects_others() {
        for name in TRAINER_NAMES {
            assert_eq!(trainer(name).unwrap().name(), name);
        }
        let err = match trainer("sgd") {
            Err(e) => e.to_string(),
            Ok(_) => panic!("unknown name must not resolve"),
        };
        assert!(err.contains("caat") && err.contains("pgd-at"), "{err}");
    }

    #[test]
    fn config_validation_catches_bad_fields() {
        let ok = TrainConfig::default();
        ok.validate().unwrap();
        for bad in [
            TrainConfig {
                eta1: 0.0,
                ..ok.clone()
            },
            TrainConfig {
                tau: -1.0,
                ..ok.clone()
            },
            TrainConfig {
                batch: 0,
                ..ok.clone()
            },
            TrainConfig {
                momentum: 1.0,
                ..ok.clone()
            },
            TrainConfig {
                tau1: -0.1,
                ..ok.clone()
            },
            TrainConfig {
                remargin_cap_factor: 0.5,
                ..ok.clone()
            },
            TrainConfig {
                hidden: vec![16, 0],
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn lambda_grid_matches_the_documented_sweep() {
        assert_eq!(LAMBDA_GRID.len(), 4);
        assert!((LAMBDA_GRID[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(LAMBDA_GRID[1], 1.0);
        assert_eq!(LAMBDA_GRID[2], 1.5);
        assert_eq!(LAMBDA_GRID[3], 6.0);
    }

    fn assert_params_bitwise_equal(a: &Mlp, b: &Mlp) {
        for (pa, pb) in a.params_flat().iter().zip(b.params_flat()) {
            assert_eq!(pa.rows, pb.rows);
            for (va, vb) in pa.data.iter().zip(&pb.data) {
                assert_eq!(va.to_bits(), vb.to_bits(), "{va} vs {vb}");
            }
        }
    }

    #[test]
    fn the_all_adversarial_fixed_setting_reproduces_trades_bitwise() {
        let data = blobs(20, 2, 1.5, 0.0, 51);
        let cfg = tiny_cfg();
        let a = trainer("setting-i")
            .unwrap()
            .train(&data, None, &cfg, 9001)
            .unwrap();
        let b = trainer("trades")
            .unwrap()
            .train(&data, None, &cfg, 9001)
            .unwrap();
        assert_params_bitwise_equal(&a.net, &b.net);
        assert_eq!(a.log.rows.len(), b.log.rows.len());
        for (ra, rb) in a.log.rows.iter().zip(&b.log.rows) {
            for (ca, cb) in ra.per_class.iter().zip(&rb.per_class) {
                assert_eq!(ca.err_rob, cb.err_rob);
                assert_eq!(ca.err_nat, cb.err_nat);
            }
        }
        // A different seed must change the run; equality above is not
        // an artifact of the task being degenerate.
        let c = trainer("trades")
            .unwrap()
            .train(&data, None, &cfg, 9002)
            .unwrap();
        let same = a
            .net
            .params_flat()
            .iter()
            .zip(c.net.params_flat())
            .all(|(p, q)| p.data == q.data);
        assert!(!same);
    }

    #[test]
    fn the_direct_objective_reduces_to_pgd_at_bitwise() {
        let data = blobs(20, 2, 1.5, 0.0, 52);
        let cfg = TrainConfig {
            objective: ObjectiveForm::Direct,
            ..tiny_cfg()
        };
        let a = trainer("setting-i")
            .unwrap()
            .train(&data, None, &cfg, 77)
            .unwrap();
        let b = trainer("pgd-at")
            .unwrap()
            .train(&data, None, &cfg, 77)
            .unwrap();
        assert_params_bitwise_equal(&a.net, &b.net);
    }

    #[test]
    fn the_full_trainer_runs_and_keeps_its_invariants() {
        let data = blobs(30, 2, 1.2, 0.2, 53);
        let cfg = tiny_cfg();
        let out = trainer("caat").unwrap().train(&data, None, &cfg, 4242).unwrap();

        let meta_idx = out.meta_indices.as_ref().expect("auto-compiled meta");
        assert_eq!(meta_idx.len(), 2 * cfg.meta_per_class);
        let mut sorted = meta_idx.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), meta_idx.len(), "meta rows must be distinct");
        for c in 0..2 {
            let count = meta_idx.iter().filter(|&&i| data.labels[i] == c).count();
            assert_eq!(count, cfg.meta_per_class);
        }

        assert!(out.weighting.is_some());
        assert!(out.fairness.phi.iter().all(|&v| v >= 0.0));
        assert!(out.fairness.psi.iter().all(|&v| v >= 0.0));
        assert_eq!(out.per_class_eps, vec![cfg.base_eps; 2]);

        assert_eq!(out.log.rows.len(), 3);
        for row in &out.log.rows {
            assert!(row.mean_alpha > 0.0 && row.mean_alpha < 1.0);
            assert!(row.mean_eps > 0.0);
            for ce in &row.per_class {
                for r in [ce.err_nat, ce.err_bdy, ce.err_rob, ce.adv_ratio] {
                    if let Some(v) = r {
                        assert!((0.0..=1.0).contains(&v));
                    }
                }
                if let (Some(nat), Some(rob)) = (ce.err_nat, ce.err_rob) {
                    assert!(rob >= nat);
                }
            }
            // The clean/noisy split must recombine into the overall lean.
            if let (Some(c), Some(nz)) = (row.adv_ratio_clean, row.adv_ratio_noisy) {
                let lo = c.min(nz) - 1e-12;
                let hi = c.max(nz) + 1e-12;
                let per_class_all: Vec<f64> =
                    row.per_class.iter().filter_map(|p| p.adv_ratio).collect();
                let overall = per_class_all.iter().sum::<f64>() / per_class_all.len() as f64;
                // Not exact (class sizes differ) but the overall lean cannot
                // escape the group envelope by much.
                assert!(overall >= lo - 0.5 && overall <= hi + 0.5);
            }
        }
    }

    #[test]
    fn an_explicit_meta_set_is_used_as_given() {
        let data = blobs(16, 2, 1.5, 0.0, 54);
        let meta = blobs(8, 2, 1.5, 0.0, 55);
        let cfg = tiny_cfg();
        let out = trainer("setting-iii")
            .unwrap()
            .train(&data, Some(&meta), &cfg, 7)
            .unwrap();
        assert!(out.meta_indices.is_none());
        assert!(out.weighting.is_some());

        let mismatched = ClassDataset {
            d: 3,
            features: vec![0.0; 3 * 4],
            labels: vec![0, 1, 0, 1],
            num_classes: 2,
            noisy: vec![false; 4],
            domain_clip: None,
        };
        assert!(trainer("setting-iii")
            .unwrap()
            .train(&data, Some(&mismatched), &cfg, 7)
            .is_err());
    }

    #[test]
    fn the_rebalancing_bound_override_keeps_bounds_in_range() {
        let data = blobs(24, 2, 0.8, 0.0, 56);
        let cfg = TrainConfig {
            bound_method: Some("remargin".into()),
            ..tiny_cfg()
        };
        let out = trainer("setting-ii")
            .unwrap()
            .train(&data, None, &cfg, 11)
            .unwrap();
        let cap = cfg.remargin_cap_factor * cfg.base_eps;
        assert_eq!(out.per_class_eps.len(), 2);
        for &e in &out.per_class_eps {
            assert!((0.0..=cap).contains(&e), "eps {e} outside [0, {cap}]");
        }
    }

    #[test]
    fn a_too_small_class_cannot_fund_the_meta_split() {
        let data = blobs(5, 2, 1.5, 0.0, 57);
        let cfg = tiny_cfg(); // meta_per_class 6 > 5 samples per class
        let err = trainer("caat")
            .unwrap()
            .train(&data, None, &cfg, 1)
            .unwrap_err()
            .to_string();
        assert!(err.contains("meta"), "{err}");
    }
}
