//! Label-noise training experiment: anti-adversarial perturbations on
//! the flipped samples versus adversarial training on everything.

use crate::error::CoreError;
use crate::montecarlo::logistic::{train_logistic_with_bounds, LogisticOpt};
use crate::montecarlo::sample_dataset;
use crate::task::{ClassLabel, GaussianTaskSpec, LabelNoise, PerturbPolicy};
use crate::theory::class_errors_linear;
use crate::Result;

/// Configuration for [`case3_experiment`].
#[derive(Debug, Clone)]
pub struct Case3Config {
    /// Noise-free base task; the experiment adds the flip noise itself.
    pub task: GaussianTaskSpec,
    pub flip_ratio: f64,
    /// Class whose true labels get flipped.
    pub flipped_class: i8,
    /// Adversarial budget for clean samples and for evaluation.
    pub eps: f64,
    /// Anti-adversarial strengths applied to the flipped samples.
    pub rho_grid: Vec<f64>,
    /// Samples per training set.
    pub n: usize,
    pub seeds: Vec<u64>,
    pub opt: LogisticOpt,
}

#[derive(Debug, Clone, Copy)]
pub struct Case3Row {
    pub rho: f64,
    pub seed: u64,
    pub class: i8,
    pub err_nat: f64,
    pub err_rob: f64,
}

/// Seed-median outcome of the label-noise experiment.
#[derive(Debug, Clone)]
pub struct Case3Report {
    pub rho_grid: Vec<f64>,
    pub rows: Vec<Case3Row>,
    /// Median natural / robust error per class (outer index
    /// `ClassLabel::index`), one entry per grid point.
    pub median_nat: [Vec<f64>; 2],
    pub median_rob: [Vec<f64>; 2],
    /// Median worst-class robust error per grid point.
    pub combined_worst_rob: Vec<f64>,
    /// Median worst-class robust error of all-adversarial training at the
    /// same budget, flipped samples attacked like everything else.
    pub control_worst_rob: f64,
    /// Median errors of the flipped class do not increase with rho.
    pub flipped_class_noninc: bool,
    /// Median errors of the other class do not decrease with rho.
    pub other_class_nondec: bool,
    /// Some positive rho beats the all-adversarial control on
    /// worst-class robust error.
    pub beats_adversarial_control: bool,
}

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn monotone(values: &[f64], nonincreasing: bool) -> bool {
    values.windows(2).all(|w| {
        if nonincreasing {
            w[1] <= w[0] + 1e-9
        } else {
            w[1] >= w[0] - 1e-9
        }
    })
}

/// Trains on data with a fraction of one class's labels flipped, attacking
/// clean samples with budget `eps` and anti-attacking the flipped ones
/// with `rho * eps`, then scores each model on the clean distribution.
///
/// Reported errors are closed-form for the trained linear rule, so the
/// only randomness is the training data. Medians are taken across seeds;
/// datasets are shared across the grid so comparisons are paired.
pub fn case3_experiment(cfg: &Case3Config) -> Result<Case3Report> {
    if cfg.task.noise.is_some() {
        return Err(CoreError::invalid(
            "pass the noise-free base task; the experiment adds the flips",
        ));
    }
    if cfg.rho_grid.is_empty() || cfg.seeds.is_empty() {
        return Err(CoreError::invalid("need at least one rho and one seed"));
    }
    for &rho in &cfg.rho_grid {
        if rho < 0.0 {
            return Err(CoreError::invalid(
                "anti-adversarial strengths are nonnegative here; the sign is applied internally",
            ));
        }
        if rho * cfg.eps >= cfg.task.eta {
            return Err(CoreError::invalid(format!(
                "rho {} at eps {} reaches the class mean",
                rho, cfg.eps
            )));
        }
    }
    let flipped = ClassLabel::from_i8(cfg.flipped_class)?;
    let other = flipped.other();

    let noisy_task = GaussianTaskSpec {
        noise: Some(LabelNoise {
            flip_ratio: cfg.flip_ratio,
            flipped_class: cfg.flipped_class,
        }),
        ..cfg.task.clone()
    };
    let eval_policy = PerturbPolicy::uniform_adversarial(cfg.eps);
    eval_policy.validate_for(&cfg.task)?;

    let mut rows = Vec::new();
    // nat_samples[class][rho_idx] collects one value per seed.
    let mut nat_samples = [vec![Vec::new(); cfg.rho_grid.len()], vec![Vec::new(); cfg.rho_grid.len()]];
    let mut rob_samples = nat_samples.clone();
    let mut worst_samples = vec![Vec::new(); cfg.rho_grid.len()];
    let mut control_samples = Vec::new();

    for &seed in &cfg.seeds {
        let data = sample_dataset(&noisy_task, cfg.n, seed)?;
        let flipped_set: std::collections::HashSet<usize> =
            data.flipped_indices().into_iter().collect();

        let eval = |bounds: &[f64]| -> Result<[f64; 4]> {
            let clf = train_logistic_with_bounds(&data, bounds, &cfg.opt)?;
            let em = class_errors_linear(&cfg.task, &clf, &eval_policy, ClassLabel::Minus)?;
            let ep = class_errors_linear(&cfg.task, &clf, &eval_policy, ClassLabel::Plus)?;
            Ok([em.natural, em.robust, ep.natural, ep.robust])
        };

        for (ri, &rho) in cfg.rho_grid.iter().enumerate() {
            let bounds: Vec<f64> = (0..data.n())
                .map(|i| {
                    if flipped_set.contains(&i) {
                        -rho * cfg.eps
                    } else {
                        cfg.eps
                    }
                })
                .collect();
            let [nm, rm, np, rp] = eval(&bounds)?;
            rows.push(Case3Row { rho, seed, class: -1, err_nat: nm, err_rob: rm });
            rows.push(Case3Row { rho, seed, class: 1, err_nat: np, err_rob: rp });
            nat_samples[0][ri].push(nm);
            rob_samples[0][ri].push(rm);
            nat_samples[1][ri].push(np);
            rob_samples[1][ri].push(rp);
            worst_samples[ri].push(rm.max(rp));
        }

        let control_bounds = vec![cfg.eps; data.n()];
        let [_, rm, _, rp] = eval(&control_bounds)?;
        control_samples.push(rm.max(rp));
    }

    let median_nat = [
        nat_samples[0].iter_mut().map(median).collect::<Vec<_>>(),
        nat_samples[1].iter_mut().map(median).collect::<Vec<_>>(),
    ];
    let median_rob = [
        rob_samples[0].iter_mut().map(median).collect::<Vec<_>>(),
        rob_samples[1].iter_mut().map(median).collect::<Vec<_>>(),
    ];
    let combined_worst_rob: Vec<f64> = worst_samples.iter_mut().map(median).collect();
    let control_worst_rob = median(&mut control_samples);

    let fi = flipped.index();
    let oi = other.index();
    let flipped_class_noninc =
        monotone(&median_nat[fi], true) && monotone(&median_rob[fi], true);
    let other_class_nondec =
        monotone(&median_nat[oi], false) && monotone(&median_rob[oi], false);
    let beats_adversarial_control = cfg
        .rho_grid
        .iter()
        .zip(&combined_worst_rob)
        .any(|(&rho, &w)| rho > 0.0 && w < control_worst_rob);

    Ok(Case3Report {
        rho_grid: cfg.rho_grid.clone(),
        rows,
        median_nat,
        median_rob,
        combined_worst_rob,
        control_worst_rob,
        flipped_class_noninc,
        other_class_nondec,
        beats_adversarial_control,
    })
}
