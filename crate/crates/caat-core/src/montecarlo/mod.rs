//! Sampling-based oracle for the closed-form theory: dataset generation,
//! exact robust-error estimation for linear rules, robust logistic
//! training, and the label-noise training experiment.

pub mod case3;
pub mod logistic;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::data::SyntheticDataset;
use crate::error::CoreError;
use crate::rng::{chunk_stream, stream};
use crate::task::{ClassLabel, GaussianTaskSpec, LinearClassifier, PerturbPolicy};
use crate::Result;

pub use case3::{case3_experiment, Case3Config, Case3Report, Case3Row};
pub use logistic::{train_logistic_robust, train_logistic_with_bounds, LogisticOpt};

/// Chunk size for seed-partitioned parallel estimation; fixed so results
/// do not depend on the thread count.
const MC_CHUNK: usize = 1 << 16;

/// A probability estimate with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

impl ErrorEstimate {
    pub fn from_counts(errors: u64, n: usize) -> Self {
        let value = errors as f64 / n as f64;
        ErrorEstimate {
            value,
            std_error: (value * (1.0 - value) / n as f64).sqrt(),
            n_samples: n,
        }
    }
}

/// Per-class natural and robust estimates.
#[derive(Debug, Clone, Copy)]
pub struct McErrors {
    pub natural: [ErrorEstimate; 2],
    pub robust: [ErrorEstimate; 2],
}

/// Draws `n` labeled samples from the task distribution.
///
/// Labels are drawn from the prior (`p(+1) = 1 / (1 + V)`), features from
/// the class Gaussian. Label noise then flips `round(flip_ratio * n_c)`
/// samples of the configured class, chosen uniformly. If a class comes up
/// empty the label vector is redrawn a bounded number of times before the
/// call fails.
pub fn sample_dataset(task: &GaussianTaskSpec, n: usize, seed: u64) -> Result<SyntheticDataset> {
    task.validate()?;
    if n < 2 {
        return Err(CoreError::invalid("need at least two samples"));
    }

    let p_plus = task.prior(ClassLabel::Plus);
    let labels: Vec<i8> = 'draw: {
        for attempt in 0..100u64 {
            let mut rng = chunk_stream(seed, "dataset-labels", attempt);
            let cand: Vec<i8> = (0..n)
                .map(|_| if rng.gen::<f64>() < p_plus { 1i8 } else { -1i8 })
                .collect();
            let plus = cand.iter().filter(|&&l| l == 1).count();
            if plus > 0 && plus < n {
                break 'draw cand;
            }
        }
        return Err(CoreError::Dataset(format!(
            "a class stayed empty after 100 label draws (n = {n}, p(+1) = {p_plus:.3e}); increase n"
        )));
    };
    let mut labels = labels;

    let clean_labels = labels.clone();
    let mut feature_rng = stream(seed, "dataset-features");
    let mut features = Vec::with_capacity(n * task.d);
    for &label in &clean_labels {
        let class = ClassLabel::from_i8(label)?;
        let mean = class.sign() * task.eta;
        let sigma = task.sigma(class);
        for _ in 0..task.d {
            let z: f64 = StandardNormal.sample(&mut feature_rng);
            features.push(mean + sigma * z);
        }
    }

    if let Some(noise) = task.noise {
        if noise.flip_ratio > 0.0 {
            let members: Vec<usize> = (0..n)
                .filter(|&i| clean_labels[i] == noise.flipped_class)
                .collect();
            let k = (noise.flip_ratio * members.len() as f64).round() as usize;
            let mut flip_rng = stream(seed, "dataset-flips");
            let chosen = rand::seq::index::sample(&mut flip_rng, members.len(), k);
            for idx in chosen.iter() {
                let i = members[idx];
                labels[i] = -labels[i];
            }
        }
    }

    let ds = SyntheticDataset {
        features,
        d: task.d,
        labels,
        clean_labels,
        seed,
    };
    ds.validate()?;
    Ok(ds)
}

/// Estimates per-class natural and robust errors of a linear rule by
/// stratified sampling: `n` draws from each class-conditional Gaussian.
///
/// The robust estimate counts samples for which some max-norm
/// perturbation within the class's radius flips the prediction; for a
/// linear rule the worst case is exact, a score shift of
/// `radius * l1-norm(w)` toward the boundary. The zero perturbation is in
/// every ball, so robust >= natural per class by construction.
pub fn estimate_errors_mc(
    clf: &LinearClassifier,
    task: &GaussianTaskSpec,
    policy: &PerturbPolicy,
    n: usize,
    seed: u64,
) -> Result<McErrors> {
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
    if n == 0 {
        return Err(CoreError::invalid("need n >= 1 samples per class"));
    }

    let mut natural = [ErrorEstimate::from_counts(0, 1); 2];
    let mut robust = [ErrorEstimate::from_counts(0, 1); 2];
    for class in ClassLabel::BOTH {
        let label = match class {
            ClassLabel::Minus => "mc-minus",
            ClassLabel::Plus => "mc-plus",
        };
        let mean = class.sign() * task.eta;
        let sigma = task.sigma(class);
        let shift = policy.radius(class) * clf.dual_norm();
        let chunks = n.div_ceil(MC_CHUNK);

        let (nat, rob) = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let count = MC_CHUNK.min(n - c * MC_CHUNK);
                let mut rng = chunk_stream(seed, label, c as u64);
                let mut nat = 0u64;
                let mut rob = 0u64;
                for _ in 0..count {
                    let mut score = clf.bias;
                    for w in &clf.direction {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        score += w * (mean + sigma * z);
                    }
                    match class {
                        ClassLabel::Minus => {
                            // Predicting +1 (score >= 0) is an error.
                            if score >= 0.0 {
                                nat += 1;
                            }
                            if score + shift >= 0.0 {
                                rob += 1;
                            }
                        }
                        ClassLabel::Plus => {
                            if score < 0.0 {
                                nat += 1;
                            }
                            if score - shift < 0.0 {
                                rob += 1;
                            }
                        }
                    }
                }
                (nat, rob)
            })
            .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));

        natural[class.index()] = ErrorEstimate::from_counts(nat, n);
        robust[class.index()] = ErrorEstimate::from_counts(rob, n);
    }
    Ok(McErrors { natural, robust })
}
