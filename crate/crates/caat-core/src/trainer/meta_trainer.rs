//! The combined training loop: learned per-sample weights over adversarial
//! and anti-adversarial perturbations, per-sample bounds, a bilevel update
//! of the weighting network against held-out meta data, and class-fairness
//! multipliers on the classifier objective.
//!
//! The ablation settings reduce this loop by pinning the direction weights
//! (all-adversarial) or the bound strategy (fixed). A reduced run keeps the
//! exact arithmetic of the matching plain baseline: unit weights multiply
//! through as exact 1.0 factors and the skipped components draw from their
//! own rng streams, so the shared draws stay aligned.

use rand::Rng;

use crate::adversary::{
    bound_strategy, gen_adversary_ce_from, gen_adversary_from, gen_anti_adversary_from,
    noised_start, remargin_bounds, BallRadii, BoundContext,
};
use crate::data::ClassDataset;
use crate::error::CoreError;
use crate::nn::{loss_ce_rows, Graph, Mlp, MlpSpec, Sgd, SgdConfig, Tensor};
use crate::rng::{chunk_stream, stream};
use crate::trainer::characteristics::{
    extract_characteristics, Characteristics, ClassLossStats, RunningZScore,
};
use crate::trainer::fairness::{class_event_rates, fairness_update, FairnessState};
use crate::trainer::logging::{epoch_row, WindowStats};
use crate::trainer::steps::{
    build_objective, meta_cotangents, meta_objective_grad, param_grads, per_sample_pair_grads,
    virtual_params, SampleWeights,
};
use crate::trainer::weighting::{rows_to_tensor, CombinationWeights, WeightingNet};
use crate::trainer::{
    DirectionMode, ObjectiveForm, TrainConfig, TrainLog, TrainOutcome, TrainerAlgo,
};
use crate::Result;

/// One point in the ablation grid: how perturbation directions are chosen
/// and which bound strategy applies unless the config overrides it.
pub(crate) struct CaatVariant {
    pub name: &'static str,
    pub direction: DirectionMode,
    pub default_bound: &'static str,
}

impl TrainerAlgo for CaatVariant {
    fn name(&self) -> &'static str {
        self.name
    }

    fn train(
        &self,
        data: &ClassDataset,
        meta: Option<&ClassDataset>,
        cfg: &TrainConfig,
        seed: u64,
    ) -> Result<TrainOutcome> {
        run_caat(self, data, meta, cfg, seed)
    }
}

/// Held-out meta samples, either supplied by the caller or carved out of
/// the training data after a natural warmup.
struct MetaSet {
    x: Tensor,
    labels: Vec<usize>,
    /// Rows of the training set that were held out, when the set was
    /// auto-compiled.
    indices: Option<Vec<usize>>,
}

impl MetaSet {
    fn n(&self) -> usize {
        self.labels.len()
    }

    fn gather(&self, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let mut feats = Vec::with_capacity(idx.len() * self.x.cols);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            feats.extend_from_slice(self.x.row(i));
            labels.push(self.labels[i]);
        }
        Ok((Tensor::from_vec(idx.len(), self.x.cols, feats)?, labels))
    }
}

fn sample_indices(rng: &mut crate::rng::Stream, len: usize, amount: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, len, amount.min(len)).into_vec()
}

/// Uses the supplied meta set, or holds one out of `data`: a copy of the
/// initial classifier warms up on the natural loss, and the lowest-loss
/// samples of each class become meta data. The warmup copy is then dropped;
/// the real run restarts from the original initialization on the remaining
/// rows.
fn resolve_meta(
    data: &ClassDataset,
    given: Option<&ClassDataset>,
    cfg: &TrainConfig,
    seed: u64,
    spec: &MlpSpec,
    w_seed: u64,
) -> Result<(Vec<usize>, MetaSet)> {
    if let Some(m) = given {
        m.validate()?;
        if m.d != data.d || m.num_classes != data.num_classes {
            return Err(CoreError::Dataset(format!(
                "meta set shape ({}, {} classes) does not match the training data ({}, {} classes)",
                m.d, m.num_classes, data.d, data.num_classes
            )));
        }
        let all: Vec<usize> = (0..m.n()).collect();
        let (x, labels, _) = m.gather(&all)?;
        return Ok((
            (0..data.n()).collect(),
            MetaSet {
                x,
                labels,
                indices: None,
            },
        ));
    }

    let mut warm = Mlp::init(spec.clone(), w_seed)?;
    let mut wsgd = Sgd::new(cfg.classifier_sgd())?;
    for t in 0..cfg.warmup_iterations {
        let mut rng = chunk_stream(seed, "warmup-batch", t as u64);
        let idx = sample_indices(&mut rng, data.n(), cfg.batch);
        let (x, y, _) = data.gather(&idx)?;
        let mut g = Graph::new();
        let params = warm.bind_trainable(&mut g);
        let x_id = g.input(x);
        let logits = warm.forward(&mut g, &params, x_id);
        let ce = g.ce_rows(logits, &y);
        let loss = g.mean(ce);
        g.backward(loss);
        let grads = param_grads(&g, &params);
        let mut ps = warm.params_flat_mut();
        wsgd.step(&mut ps, &grads)?;
    }

    let mut scores = vec![0.0f64; data.n()];
    let block = 4096;
    let mut lo = 0;
    while lo < data.n() {
        let hi = (lo + block).min(data.n());
        let idx: Vec<usize> = (lo..hi).collect();
        let (x, y, _) = data.gather(&idx)?;
        let losses = loss_ce_rows(&warm.forward_values(&x), &y);
        scores[lo..hi].copy_from_slice(&losses);
        lo = hi;
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(CoreError::Numerical(
            "non-finite warmup loss while compiling the meta set".into(),
        ));
    }

    let mut meta_idx = Vec::with_capacity(cfg.meta_per_class * data.num_classes);
    for c in 0..data.num_classes {
        let mut members: Vec<usize> = (0..data.n()).filter(|&i| data.labels[i] == c).collect();
        // At least one row per class must stay behind for training.
        if members.len() < cfg.meta_per_class + 1 {
            return Err(CoreError::Dataset(format!(
                "class {c} has {} samples, cannot hold out {} as meta data",
                members.len(),
                cfg.meta_per_class
            )));
        }
        members.sort_by(|&a, &b| {
            scores[a]
                .partial_cmp(&scores[b])
                .expect("finite scores")
                .then(a.cmp(&b))
        });
        meta_idx.extend_from_slice(&members[..cfg.meta_per_class]);
    }
    meta_idx.sort_unstable();
    let mut held = vec![false; data.n()];
    for &i in &meta_idx {
        held[i] = true;
    }
    let pool: Vec<usize> = (0..data.n()).filter(|&i| !held[i]).collect();
    let (x, labels, _) = data.gather(&meta_idx)?;
    Ok((
        pool,
        MetaSet {
            x,
            labels,
            indices: Some(meta_idx),
        },
    ))
}

fn run_caat(
    variant: &CaatVariant,
    data: &ClassDataset,
    meta_data: Option<&ClassDataset>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    data.validate()?;
    cfg.validate()?;
    let learned = variant.direction == DirectionMode::Learned;
    let classes = data.num_classes;
    let spec = cfg.classifier_spec(data.d, classes);
    let bound_name = cfg.bound_method.as_deref().unwrap_or(variant.default_bound);
    let bound = bound_strategy(bound_name)?;
    let remargin = bound_name == "remargin";

    let w_seed = stream(seed, "init-w").gen::<u64>();
    let mut net = Mlp::init(spec.clone(), w_seed)?;
    let mut sgd = Sgd::new(cfg.classifier_sgd())?;

    let (pool, meta) = if learned {
        let (pool, meta) = resolve_meta(data, meta_data, cfg, seed, &spec, w_seed)?;
        (pool, Some(meta))
    } else {
        ((0..data.n()).collect::<Vec<_>>(), None)
    };
    if pool.is_empty() {
        return Err(CoreError::Dataset("empty training pool".into()));
    }

    let mut wnet = if learned {
        Some(WeightingNet::init(
            cfg.weighting_hidden,
            cfg.tau,
            stream(seed, "init-omega").gen::<u64>(),
        )?)
    } else {
        None
    };
    let mut omega_sgd = Sgd::new(SgdConfig::plain(cfg.eta2))?;

    let mut zstats = RunningZScore::new();
    let mut class_loss = ClassLossStats::new(classes);
    let mut pool_counts = vec![0usize; classes];
    for &i in &pool {
        pool_counts[data.labels[i]] += 1;
    }
    let pool_props: Vec<f64> = pool_counts
        .iter()
        .map(|&c| c as f64 / pool.len() as f64)
        .collect();

    let mut fairness = FairnessState::new(classes);
    let mut per_class_eps = vec![cfg.base_eps; classes];
    let mut window = WindowStats::new(classes);
    let mut rows = Vec::new();

    let eval_take = cfg.eval_subset.min(pool.len());
    let (x_eval, y_eval, _) = data.gather(&pool[..eval_take])?;

    for t in 0..cfg.iterations {
        let tb = t as u64;
        let mut batch_rng = chunk_stream(seed, "batch", tb);
        let picked = sample_indices(&mut batch_rng, pool.len(), cfg.batch);
        let idx: Vec<usize> = picked.iter().map(|&j| pool[j]).collect();
        let (x, y, noisy) = data.gather(&idx)?;
        let n = idx.len();

        let (mut weights, zeta) = if learned {
            let raw = extract_characteristics(&net, &x, &y, &pool_props, &mut class_loss)?;
            zstats.update(&raw);
            let std_rows: Vec<Characteristics> =
                raw.iter().map(|r| zstats.standardize(r)).collect();
            let zeta = rows_to_tensor(&std_rows);
            let w = wnet.as_ref().expect("learned direction").weights(&zeta)?;
            (w, Some(zeta))
        } else {
            (CombinationWeights::all_adversarial(n), None)
        };

        let mut adv_rng = chunk_stream(seed, "adv-noise", tb);
        let adv_start = noised_start(&x, cfg.init_noise_scale, &mut adv_rng);
        // Drawn even when no anti attack will run: the gradient-based bound
        // probes this point, and its dedicated stream leaves every other
        // draw unchanged either way.
        let mut at_rng = chunk_stream(seed, "atadv-noise", tb);
        let atadv_start = noised_start(&x, cfg.init_noise_scale, &mut at_rng);

        let assignment = bound.assign(&BoundContext {
            net: &net,
            x: &x,
            labels: &y,
            adv_start: &adv_start,
            atadv_start: &atadv_start,
            alpha: &weights.alpha,
            beta: &weights.beta,
            base_eps: cfg.base_eps,
            per_class_eps: &per_class_eps,
        })?;
        let atk = cfg.attack_config(
            BallRadii::PerSample(assignment.eps_i.clone()),
            data.domain_clip,
        );

        let x_adv = match cfg.objective {
            ObjectiveForm::Split => gen_adversary_from(&net, &x, &adv_start, &atk)?,
            ObjectiveForm::Direct => gen_adversary_ce_from(&net, &x, &y, &adv_start, &atk)?,
        };
        let x_atadv = if learned {
            Some(gen_anti_adversary_from(&net, &x, &y, &atadv_start, &atk)?)
        } else {
            None
        };

        if learned {
            let zeta = zeta.as_ref().expect("learned direction");
            let wnet_ref = wnet.as_mut().expect("learned direction");
            let meta_set = meta.as_ref().expect("learned direction");
            let x_at = x_atadv.as_ref().expect("learned direction");

            let pairs =
                per_sample_pair_grads(&net, cfg.objective, &x, &y, &x_adv, x_at, cfg.lambda)?;
            let w_hat = virtual_params(&net, &weights, &pairs, cfg.eta1);
            let mut hat_net = net.clone();
            hat_net.set_from_flat(&w_hat)?;

            let mut meta_rng = chunk_stream(seed, "meta-batch", tb);
            let midx = sample_indices(&mut meta_rng, meta_set.n(), cfg.meta_batch);
            let (mx, my) = meta_set.gather(&midx)?;
            // Meta attacks run against the virtual classifier at the base
            // bound; per-sample bounds only apply to training samples.
            let matk = cfg.attack_config(BallRadii::Uniform(cfg.base_eps), data.domain_clip);
            let mut madv_rng = chunk_stream(seed, "meta-adv-noise", tb);
            let m_adv_start = noised_start(&mx, cfg.init_noise_scale, &mut madv_rng);
            let mut mat_rng = chunk_stream(seed, "meta-atadv-noise", tb);
            let m_at_start = noised_start(&mx, cfg.init_noise_scale, &mut mat_rng);
            let mx_adv = match cfg.objective {
                ObjectiveForm::Split => gen_adversary_from(&hat_net, &mx, &m_adv_start, &matk)?,
                ObjectiveForm::Direct => {
                    gen_adversary_ce_from(&hat_net, &mx, &my, &m_adv_start, &matk)?
                }
            };
            let mx_at = gen_anti_adversary_from(&hat_net, &mx, &my, &m_at_start, &matk)?;

            let (_, mgrad) = meta_objective_grad(
                &net,
                &w_hat,
                cfg.objective,
                &mx,
                &my,
                &mx_adv,
                &mx_at,
                cfg.lambda,
            )?;
            let cot = meta_cotangents(&pairs, &mgrad, cfg.eta1);
            let (mut g, p, out) = wnet_ref.forward_tape(zeta);
            let mut cot_t = Tensor::zeros(n, 2);
            for (i, c) in cot.iter().enumerate() {
                cot_t.set(i, 0, *c);
            }
            g.backward_with_cotangent(out, &cot_t);
            let ograds = param_grads(&g, &p);
            let mut ps = wnet_ref.net.params_flat_mut();
            omega_sgd.step(&mut ps, &ograds)?;

            // The classifier trains with the weights the updated network
            // assigns, not the ones the virtual step probed.
            weights = wnet_ref.weights(zeta)?;
        }

        let sw = SampleWeights {
            wa: (0..n)
                .map(|i| weights.alpha[i] * fairness.loss_factor(y[i]))
                .collect(),
            wk: (0..n)
                .map(|i| weights.alpha[i] * fairness.divergence_factor(y[i]))
                .collect(),
            wb: x_atadv.is_some().then(|| {
                (0..n)
                    .map(|i| weights.beta[i] * fairness.loss_factor(y[i]))
                    .collect()
            }),
        };
        let mut tape = build_objective(
            &net,
            cfg.objective,
            &x,
            &y,
            &x_adv,
            x_atadv.as_ref(),
            cfg.lambda,
            &sw,
        )?;
        tape.graph.backward(tape.loss);
        let grads = param_grads(&tape.graph, &tape.params);
        let mut ps = net.params_flat_mut();
        sgd.step(&mut ps, &grads)?;

        window.observe(&weights.alpha, &assignment.eps_i, &y, &noisy);

        if (t + 1) % cfg.fairness_every == 0 && (learned || remargin) {
            // Rates come from the meta set when one exists, from the fixed
            // log subset otherwise.
            let (ex, ey): (&Tensor, &[usize]) = match &meta {
                Some(m) => (&m.x, &m.labels),
                None => (&x_eval, &y_eval),
            };
            let mut frng = chunk_stream(seed, "fairness-eval", tb);
            let ecfg = cfg.eval_attack(data.domain_clip);
            let rates = class_event_rates(&net, ex, ey, classes, &ecfg, &mut frng)?;
            if learned {
                fairness_update(
                    &mut fairness,
                    &rates.nat_rates(),
                    &rates.bdy_rates(),
                    rates.overall_nat(),
                    rates.overall_bdy(),
                    cfg.tau1,
                    cfg.tau2,
                    cfg.fairness_step,
                )?;
            }
            if remargin {
                let mean = rates.overall_bdy();
                let filled: Vec<f64> = (0..classes)
                    .map(|c| rates.bdy_rate(c).unwrap_or(mean))
                    .collect();
                let mut next = remargin_bounds(
                    &filled,
                    mean,
                    cfg.tau2,
                    cfg.fairness_step,
                    &per_class_eps,
                    cfg.remargin_cap_factor * cfg.base_eps,
                )?;
                // Unobserved classes keep their bound.
                for c in 0..classes {
                    if rates.counts[c] == 0 {
                        next[c] = per_class_eps[c];
                    }
                }
                per_class_eps = next;
            }
        }

        if (t + 1) % cfg.log_every == 0 || t + 1 == cfg.iterations {
            let mut lrng = chunk_stream(seed, "log-eval", tb);
            let ecfg = cfg.eval_attack(data.domain_clip);
            rows.push(epoch_row(
                &net,
                &x_eval,
                &y_eval,
                classes,
                &ecfg,
                &mut lrng,
                t + 1,
                window.flush(),
            )?);
        }
    }

    Ok(TrainOutcome {
        net,
        weighting: wnet.map(|w| w.net),
        fairness,
        per_class_eps,
        meta_indices: meta.and_then(|m| m.indices),
        log: TrainLog { rows },
    })
}
