//! Plain adversarial-training baselines, written as straight loops on
//! purpose: the reduced settings of the combined trainer are tested against
//! these for bit-identical trajectories, so nothing here may depend on the
//! weighting, meta, or fairness machinery.

use rand::Rng;

use crate::adversary::{gen_adversary_ce_from, gen_adversary_from, noised_start, BallRadii};
use crate::data::ClassDataset;
use crate::nn::{Mlp, Sgd};
use crate::rng::{chunk_stream, stream};
use crate::trainer::fairness::FairnessState;
use crate::trainer::logging::{epoch_row, WindowStats};
use crate::trainer::steps::{build_objective, param_grads, SampleWeights};
use crate::trainer::{ObjectiveForm, TrainConfig, TrainLog, TrainOutcome, TrainerAlgo};
use crate::Result;

/// Divergence-regularized training: cross-entropy on the clean batch plus
/// the scaled clean-to-adversarial divergence, attacks maximizing that
/// divergence.
pub(crate) struct TradesBaseline;

/// Adversarial training on attacked inputs only, attacks maximizing the
/// label cross-entropy.
pub(crate) struct PgdAtBaseline;

impl TrainerAlgo for TradesBaseline {
    fn name(&self) -> &'static str {
        "trades"
    }

    fn train(
        &self,
        data: &ClassDataset,
        _meta: Option<&ClassDataset>,
        cfg: &TrainConfig,
        seed: u64,
    ) -> Result<TrainOutcome> {
        run_baseline(ObjectiveForm::Split, data, cfg, seed)
    }
}

impl TrainerAlgo for PgdAtBaseline {
    fn name(&self) -> &'static str {
        "pgd-at"
    }

    fn train(
        &self,
        data: &ClassDataset,
        _meta: Option<&ClassDataset>,
        cfg: &TrainConfig,
        seed: u64,
    ) -> Result<TrainOutcome> {
        run_baseline(ObjectiveForm::Direct, data, cfg, seed)
    }
}

fn run_baseline(
    form: ObjectiveForm,
    data: &ClassDataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    data.validate()?;
    cfg.validate()?;
    let classes = data.num_classes;
    let spec = cfg.classifier_spec(data.d, classes);
    let w_seed = stream(seed, "init-w").gen::<u64>();
    let mut net = Mlp::init(spec, w_seed)?;
    let mut sgd = Sgd::new(cfg.classifier_sgd())?;
    let mut window = WindowStats::new(classes);
    let mut rows = Vec::new();

    let eval_take = cfg.eval_subset.min(data.n());
    let eval_idx: Vec<usize> = (0..eval_take).collect();
    let (x_eval, y_eval, _) = data.gather(&eval_idx)?;

    for t in 0..cfg.iterations {
        let tb = t as u64;
        let mut batch_rng = chunk_stream(seed, "batch", tb);
        let idx =
            rand::seq::index::sample(&mut batch_rng, data.n(), cfg.batch.min(data.n())).into_vec();
        let (x, y, noisy) = data.gather(&idx)?;
        let n = idx.len();

        let mut adv_rng = chunk_stream(seed, "adv-noise", tb);
        let start = noised_start(&x, cfg.init_noise_scale, &mut adv_rng);
        let atk = cfg.attack_config(BallRadii::Uniform(cfg.base_eps), data.domain_clip);
        let x_adv = match form {
            ObjectiveForm::Split => gen_adversary_from(&net, &x, &start, &atk)?,
            ObjectiveForm::Direct => gen_adversary_ce_from(&net, &x, &y, &start, &atk)?,
        };

        let sw = SampleWeights::uniform(n, false);
        let mut tape = build_objective(&net, form, &x, &y, &x_adv, None, cfg.lambda, &sw)?;
        tape.graph.backward(tape.loss);
        let grads = param_grads(&tape.graph, &tape.params);
        let mut ps = net.params_flat_mut();
        sgd.step(&mut ps, &grads)?;

        let ones = vec![1.0; n];
        let radii = vec![cfg.base_eps; n];
        window.observe(&ones, &radii, &y, &noisy);

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
        weighting: None,
        fairness: FairnessState::new(classes),
        per_class_eps: vec![cfg.base_eps; classes],
        meta_indices: None,
        log: TrainLog { rows },
    })
}
