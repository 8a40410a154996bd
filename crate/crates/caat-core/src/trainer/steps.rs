//! Objective tapes and the bilevel update machinery: the weighted batch
//! objective shared by every trainer, per-sample gradient pairs, the virtual
//! classifier step, and the exact gradient of the meta objective with
//! respect to the combination weights.
//!
//! Sharing one builder matters more than it looks: the reduced settings must
//! reproduce the plain baselines bit for bit, so baselines and the full
//! trainer have to assemble their losses in the same arithmetic order.

use crate::error::CoreError;
use crate::nn::{BoundParams, Graph, Head, Mlp, NodeId, Tensor};
use crate::trainer::weighting::CombinationWeights;
use crate::trainer::ObjectiveForm;
use crate::Result;

/// Per-sample coefficients of the three loss terms. `wa` scales the
/// cross-entropy term (clean for the split form, adversarial for the direct
/// form), `wk` the divergence term, `wb` the anti-adversarial term.
#[derive(Debug, Clone)]
pub struct SampleWeights {
    pub wa: Vec<f64>,
    pub wk: Vec<f64>,
    pub wb: Option<Vec<f64>>,
}

impl SampleWeights {
    pub fn uniform(n: usize, with_anti: bool) -> Self {
        SampleWeights {
            wa: vec![1.0; n],
            wk: vec![1.0; n],
            wb: with_anti.then(|| vec![1.0; n]),
        }
    }
}

pub struct ObjectiveTape {
    pub graph: Graph,
    pub params: BoundParams,
    pub loss: NodeId,
}

impl ObjectiveTape {
    pub fn loss_value(&self) -> f64 {
        self.graph.value(self.loss).item()
    }
}

fn check_head(net: &Mlp) -> Result<()> {
    if net.spec.head != Head::Logits {
        return Err(CoreError::invalid("training objectives need a logits head"));
    }
    Ok(())
}

/// Split objective on a bound parameter set:
/// `(1/n) [ sum_i wa_i ce(x_i) + sum_i wk_i lambda kl(x_i || x_adv_i)
///          + sum_i wb_i ce(x_at_i) ]`.
fn split_loss(
    g: &mut Graph,
    net: &Mlp,
    params: &BoundParams,
    x: &Tensor,
    labels: &[usize],
    x_adv: &Tensor,
    x_atadv: Option<&Tensor>,
    lambda: f64,
    w: &SampleWeights,
) -> Result<NodeId> {
    let n = x.rows;
    if w.wa.len() != n || w.wk.len() != n {
        return Err(CoreError::Shape("weight length != batch size".into()));
    }
    let x_id = g.input(x.clone());
    let logits = net.forward(g, params, x_id);
    let ce = g.ce_rows(logits, labels);
    let adv_id = g.input(x_adv.clone());
    let logits_adv = net.forward(g, params, adv_id);
    let kl = g.kl_rows(logits, logits_adv);
    let kl_l = g.scale(kl, lambda);
    let ce_term = g.weighted_sum(ce, &w.wa);
    let kl_term = g.weighted_sum(kl_l, &w.wk);
    let mut total = g.add(ce_term, kl_term);
    if let Some(at) = x_atadv {
        let wb = w
            .wb
            .as_ref()
            .ok_or_else(|| CoreError::invalid("anti samples given without weights"))?;
        if wb.len() != n {
            return Err(CoreError::Shape("weight length != batch size".into()));
        }
        let at_id = g.input(at.clone());
        let logits_at = net.forward(g, params, at_id);
        let ce_at = g.ce_rows(logits_at, labels);
        let at_term = g.weighted_sum(ce_at, wb);
        total = g.add(total, at_term);
    }
    Ok(g.scale(total, 1.0 / n as f64))
}

/// Direct objective: `(1/n) [ sum_i wa_i ce(x_adv_i) + sum_i wb_i ce(x_at_i) ]`.
/// No divergence term; `wk` is ignored.
fn direct_loss(
    g: &mut Graph,
    net: &Mlp,
    params: &BoundParams,
    labels: &[usize],
    x_adv: &Tensor,
    x_atadv: Option<&Tensor>,
    w: &SampleWeights,
) -> Result<NodeId> {
    let n = x_adv.rows;
    if w.wa.len() != n {
        return Err(CoreError::Shape("weight length != batch size".into()));
    }
    let adv_id = g.input(x_adv.clone());
    let logits_adv = net.forward(g, params, adv_id);
    let ce = g.ce_rows(logits_adv, labels);
    let mut total = g.weighted_sum(ce, &w.wa);
    if let Some(at) = x_atadv {
        let wb = w
            .wb
            .as_ref()
            .ok_or_else(|| CoreError::invalid("anti samples given without weights"))?;
        if wb.len() != n {
            return Err(CoreError::Shape("weight length != batch size".into()));
        }
        let at_id = g.input(at.clone());
        let logits_at = net.forward(g, params, at_id);
        let ce_at = g.ce_rows(logits_at, labels);
        let at_term = g.weighted_sum(ce_at, wb);
        total = g.add(total, at_term);
    }
    Ok(g.scale(total, 1.0 / n as f64))
}

/// Weighted batch objective on the live parameters, ready for one backward
/// pass and an optimizer step. `x` is only read by the split form.
#[allow(clippy::too_many_arguments)]
pub fn build_objective(
    net: &Mlp,
    form: ObjectiveForm,
    x: &Tensor,
    labels: &[usize],
    x_adv: &Tensor,
    x_atadv: Option<&Tensor>,
    lambda: f64,
    w: &SampleWeights,
) -> Result<ObjectiveTape> {
    check_head(net)?;
    let mut g = Graph::new();
    let params = net.bind_trainable(&mut g);
    let loss = match form {
        ObjectiveForm::Split => {
            split_loss(&mut g, net, &params, x, labels, x_adv, x_atadv, lambda, w)?
        }
        ObjectiveForm::Direct => direct_loss(&mut g, net, &params, labels, x_adv, x_atadv, w)?,
    };
    Ok(ObjectiveTape {
        graph: g,
        params,
        loss,
    })
}

/// Reads the parameter gradients off a tape after a backward pass, in the
/// flat `[w0, b0, w1, b1, ..]` order the optimizer expects.
pub fn param_grads(g: &Graph, params: &BoundParams) -> Vec<Tensor> {
    params
        .ids
        .iter()
        .flat_map(|&(w, b)| {
            [
                g.grad(w).expect("trainable weight").clone(),
                g.grad(b).expect("trainable bias").clone(),
            ]
        })
        .collect()
}

/// Gradient pairs of one batch, sample by sample: `a[i]` is the gradient of
/// sample i's adversarial term (ce + lambda kl for the split form, adversarial
/// ce for the direct form), `b[i]` of its anti-adversarial cross-entropy.
/// Both are taken at the current parameters.
pub struct PairGrads {
    pub a: Vec<Vec<Tensor>>,
    pub b: Vec<Vec<Tensor>>,
}

pub fn per_sample_pair_grads(
    net: &Mlp,
    form: ObjectiveForm,
    x: &Tensor,
    labels: &[usize],
    x_adv: &Tensor,
    x_atadv: &Tensor,
    lambda: f64,
) -> Result<PairGrads> {
    check_head(net)?;
    let n = x.rows;
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for i in 0..n {
        let label = [labels[i]];
        let adv_i = Tensor::from_vec(1, x.cols, x_adv.row(i).to_vec())?;
        let mut g = Graph::new();
        let params = net.bind_trainable(&mut g);
        let adv_term = match form {
            ObjectiveForm::Split => {
                let xi = Tensor::from_vec(1, x.cols, x.row(i).to_vec())?;
                let x_id = g.input(xi);
                let logits = net.forward(&mut g, &params, x_id);
                let ce = g.ce_rows(logits, &label);
                let adv_id = g.input(adv_i);
                let logits_adv = net.forward(&mut g, &params, adv_id);
                let kl = g.kl_rows(logits, logits_adv);
                let kl_l = g.scale(kl, lambda);
                g.add(ce, kl_l)
            }
            ObjectiveForm::Direct => {
                let adv_id = g.input(adv_i);
                let logits_adv = net.forward(&mut g, &params, adv_id);
                g.ce_rows(logits_adv, &label)
            }
        };
        g.backward(adv_term);
        a.push(param_grads(&g, &params));

        // Backward resets every gradient, so the same tape serves both terms.
        let at_i = Tensor::from_vec(1, x.cols, x_atadv.row(i).to_vec())?;
        let at_id = g.input(at_i);
        let logits_at = net.forward(&mut g, &params, at_id);
        let ce_at = g.ce_rows(logits_at, &label);
        g.backward(ce_at);
        b.push(param_grads(&g, &params));
    }
    Ok(PairGrads { a, b })
}

/// Virtual parameters after one plain gradient step on the weighted batch:
/// `W - eta1 mean_i(alpha_i a_i + beta_i b_i)`.
pub fn virtual_params(
    net: &Mlp,
    w: &CombinationWeights,
    grads: &PairGrads,
    eta1: f64,
) -> Vec<Tensor> {
    let n = grads.a.len();
    debug_assert_eq!(w.len(), n);
    let mut out: Vec<Tensor> = net.params_flat().into_iter().cloned().collect();
    let scale = -eta1 / n as f64;
    for i in 0..n {
        for (k, t) in out.iter_mut().enumerate() {
            t.axpy(scale * w.alpha[i], &grads.a[i][k]);
            t.axpy(scale * w.beta[i], &grads.b[i][k]);
        }
    }
    out
}

/// Unweighted meta objective at the given parameter values, with its
/// gradient with respect to those values. The meta batch always carries both
/// attack directions.
#[allow(clippy::too_many_arguments)]
pub fn meta_objective_grad(
    net: &Mlp,
    at_params: &[Tensor],
    form: ObjectiveForm,
    x: &Tensor,
    labels: &[usize],
    x_adv: &Tensor,
    x_atadv: &Tensor,
    lambda: f64,
) -> Result<(f64, Vec<Tensor>)> {
    check_head(net)?;
    let m = x.rows;
    let w = SampleWeights::uniform(m, true);
    let mut g = Graph::new();
    let params = net.bind_values(&mut g, at_params)?;
    let loss = match form {
        ObjectiveForm::Split => split_loss(
            &mut g,
            net,
            &params,
            x,
            labels,
            x_adv,
            Some(x_atadv),
            lambda,
            &w,
        )?,
        ObjectiveForm::Direct => {
            direct_loss(&mut g, net, &params, labels, x_adv, Some(x_atadv), &w)?
        }
    };
    g.backward(loss);
    Ok((g.value(loss).item(), param_grads(&g, &params)))
}

/// Exact partial derivatives of the meta objective with respect to each
/// sample's adversary weight. With beta = 1 - alpha the virtual parameters
/// move by `-(eta1/n)(a_i - b_i)` per unit of alpha_i, and the gradient pairs
/// do not depend on the weights, so the chain rule needs no second-order
/// terms:
/// `dF/dalpha_i = -(eta1/n) <a_i - b_i, dF/dW_hat>`.
pub fn meta_cotangents(grads: &PairGrads, meta_grad: &[Tensor], eta1: f64) -> Vec<f64> {
    let n = grads.a.len();
    let c = -(eta1 / n as f64);
    (0..n)
        .map(|i| {
            let da: f64 = grads.a[i]
                .iter()
                .zip(meta_grad)
                .map(|(t, mg)| t.dot(mg))
                .sum();
            let db: f64 = grads.b[i]
                .iter()
                .zip(meta_grad)
                .map(|(t, mg)| t.dot(mg))
                .sum();
            c * (da - db)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::{gen_adversary_from, gen_anti_adversary_from, AttackConfig};
    use crate::nn::{Activation, MlpSpec};
    use crate::rng::stream;
    use crate::trainer::weighting::{rows_to_tensor, WeightingNet};
    use rand::Rng;

    fn small_net(seed: u64, d: usize) -> Mlp {
        Mlp::init(
            MlpSpec {
                widths: vec![d, 8, 2],
                activation: Activation::Tanh,
                head: Head::Logits,
            },
            seed,
        )
        .unwrap()
    }

    fn random_batch(seed: u64, n: usize, d: usize) -> (Tensor, Vec<usize>) {
        let mut rng = stream(seed, "test-batch");
        let x = Tensor::from_vec(
            n,
            d,
            (0..n * d).map(|_| rng.gen_range(-1.5..1.5)).collect(),
        )
        .unwrap();
        let labels = (0..n).map(|_| rng.gen_range(0..2)).collect();
        (x, labels)
    }

    fn attacked(
        net: &Mlp,
        x: &Tensor,
        labels: &[usize],
        seed: u64,
    ) -> (Tensor, Tensor) {
        let cfg = AttackConfig::eval_default(0.15);
        let mut rng = stream(seed, "attack-noise");
        let start = crate::adversary::noised_start(x, 0.001, &mut rng);
        let x_adv = gen_adversary_from(net, x, &start, &cfg).unwrap();
        let start_at = crate::adversary::noised_start(x, 0.001, &mut rng);
        let x_at = gen_anti_adversary_from(net, x, labels, &start_at, &cfg).unwrap();
        (x_adv, x_at)
    }

    #[test]
    fn batch_gradient_equals_the_weighted_sum_of_per_sample_pairs() {
        let net = small_net(3, 4);
        let (x, labels) = random_batch(5, 6, 4);
        let (x_adv, x_at) = attacked(&net, &x, &labels, 9);
        let alpha: Vec<f64> = (0..6).map(|i| 0.2 + 0.1 * i as f64).collect();
        let w = CombinationWeights::from_alpha(alpha).unwrap();
        let sw = SampleWeights {
            wa: w.alpha.clone(),
            wk: w.alpha.clone(),
            wb: Some(w.beta.clone()),
        };
        let mut tape = build_objective(
            &net,
            ObjectiveForm::Split,
            &x,
            &labels,
            &x_adv,
            Some(&x_at),
            0.8,
            &sw,
        )
        .unwrap();
        tape.graph.backward(tape.loss);
        let batch = param_grads(&tape.graph, &tape.params);

        let pairs =
            per_sample_pair_grads(&net, ObjectiveForm::Split, &x, &labels, &x_adv, &x_at, 0.8)
                .unwrap();
        for (k, bg) in batch.iter().enumerate() {
            let mut acc = Tensor::zeros(bg.rows, bg.cols);
            for i in 0..6 {
                acc.axpy(w.alpha[i] / 6.0, &pairs.a[i][k]);
                acc.axpy(w.beta[i] / 6.0, &pairs.b[i][k]);
            }
            for (got, want) in bg.data.iter().zip(&acc.data) {
                assert!((got - want).abs() < 1e-12, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn virtual_step_descends_the_weighted_objective() {
        // Median over repeats: one plain step with a small rate must lower
        // the loss it steps on.
        let mut improved = 0;
        for trial in 0..20 {
            let net = small_net(100 + trial, 3);
            let (x, labels) = random_batch(200 + trial, 8, 3);
            let (x_adv, x_at) = attacked(&net, &x, &labels, 300 + trial);
            let w = CombinationWeights::from_alpha(
                (0..8).map(|i| 0.1 + 0.09 * i as f64).collect(),
            )
            .unwrap();
            let sw = SampleWeights {
                wa: w.alpha.clone(),
                wk: w.alpha.clone(),
                wb: Some(w.beta.clone()),
            };
            let loss_at = |params: &[Tensor]| {
                let mut probe = net.clone();
                probe.set_from_flat(params).unwrap();
                build_objective(
                    &probe,
                    ObjectiveForm::Split,
                    &x,
                    &labels,
                    &x_adv,
                    Some(&x_at),
                    1.0,
                    &sw,
                )
                .unwrap()
                .loss_value()
            };
            let before: Vec<Tensor> = net.params_flat().into_iter().cloned().collect();
            let pairs = per_sample_pair_grads(
                &net,
                ObjectiveForm::Split,
                &x,
                &labels,
                &x_adv,
                &x_at,
                1.0,
            )
            .unwrap();
            let after = virtual_params(&net, &w, &pairs, 0.05);
            if loss_at(&after) < loss_at(&before) {
                improved += 1;
            }
        }
        assert!(improved >= 18, "descent in {improved} of 20 trials");
    }

    #[test]
    fn weighting_gradient_matches_finite_differences_on_alpha() {
        // The cotangents are the exact dF/dalpha_i when attacks and gradient
        // pairs are held fixed; check them against central differences
        // through the whole virtual step.
        let net = small_net(17, 3);
        let (x, labels) = random_batch(18, 5, 3);
        let (x_adv, x_at) = attacked(&net, &x, &labels, 19);
        let (mx, mlabels) = random_batch(20, 7, 3);
        let (mx_adv, mx_at) = attacked(&net, &mx, &mlabels, 21);
        let eta1 = 0.07;
        let pairs =
            per_sample_pair_grads(&net, ObjectiveForm::Split, &x, &labels, &x_adv, &x_at, 1.0)
                .unwrap();
        let meta_at = |alpha: &[f64]| {
            let w = CombinationWeights {
                alpha: alpha.to_vec(),
                beta: alpha.iter().map(|a| 1.0 - a).collect(),
            };
            let params = virtual_params(&net, &w, &pairs, eta1);
            meta_objective_grad(
                &net,
                &params,
                ObjectiveForm::Split,
                &mx,
                &mlabels,
                &mx_adv,
                &mx_at,
                1.0,
            )
            .unwrap()
            .0
        };
        let alpha: Vec<f64> = (0..5).map(|i| 0.25 + 0.1 * i as f64).collect();
        let w = CombinationWeights {
            alpha: alpha.clone(),
            beta: alpha.iter().map(|a| 1.0 - a).collect(),
        };
        let params = virtual_params(&net, &w, &pairs, eta1);
        let (_, mg) = meta_objective_grad(
            &net,
            &params,
            ObjectiveForm::Split,
            &mx,
            &mlabels,
            &mx_adv,
            &mx_at,
            1.0,
        )
        .unwrap();
        let cot = meta_cotangents(&pairs, &mg, eta1);
        let h = 1e-6;
        for i in 0..5 {
            let mut up = alpha.clone();
            let mut down = alpha.clone();
            up[i] += h;
            down[i] -= h;
            let fd = (meta_at(&up) - meta_at(&down)) / (2.0 * h);
            let denom = fd.abs().max(cot[i].abs()).max(1e-8);
            assert!(
                (fd - cot[i]).abs() / denom < 1e-4,
                "sample {i}: fd {fd} vs exact {} (denom {denom})",
                cot[i]
            );
        }
    }

    #[test]
    fn repeated_weighting_steps_reduce_the_meta_loss() {
        // Gradient descent on the weighting parameters against a frozen
        // batch: the meta loss after the steps must lie below the start
        // in most trials.
        let mut improved = 0;
        for trial in 0..5u64 {
            let net = small_net(23 + trial, 3);
            let (x, labels) = random_batch(24 + trial, 6, 3);
            let (x_adv, x_at) = attacked(&net, &x, &labels, 25 + trial);
            let (mx, mlabels) = random_batch(26 + trial, 6, 3);
            let (mx_adv, mx_at) = attacked(&net, &mx, &mlabels, 27 + trial);
            let eta1 = 0.1;
            let pairs = per_sample_pair_grads(
                &net,
                ObjectiveForm::Split,
                &x,
                &labels,
                &x_adv,
                &x_at,
                1.0,
            )
            .unwrap();
            let mut wnet = WeightingNet::init(20, 1.0, 29 + trial).unwrap();
            let zeta = rows_to_tensor(
                &(0..6)
                    .map(|i| {
                        let t = i as f64;
                        [t / 6.0, 1.0 - t / 3.0, 0.5, t * t / 36.0, 0.5, 0.3]
                    })
                    .collect::<Vec<_>>(),
            );
            let loss_and_grads = |wnet: &WeightingNet| -> (f64, Vec<Tensor>) {
                let w = wnet.weights(&zeta).unwrap();
                let params = virtual_params(&net, &w, &pairs, eta1);
                let (loss, mg) = meta_objective_grad(
                    &net,
                    &params,
                    ObjectiveForm::Split,
                    &mx,
                    &mlabels,
                    &mx_adv,
                    &mx_at,
                    1.0,
                )
                .unwrap();
                let cot = meta_cotangents(&pairs, &mg, eta1);
                let (mut g, p, out) = wnet.forward_tape(&zeta);
                let mut seed = Tensor::zeros(6, 2);
                for (i, c) in cot.iter().enumerate() {
                    seed.set(i, 0, *c);
                }
                g.backward_with_cotangent(out, &seed);
                (loss, param_grads(&g, &p))
            };
            let (start_loss, _) = loss_and_grads(&wnet);
            for _ in 0..40 {
                let (_, grads) = loss_and_grads(&wnet);
                let mut params = wnet.net.params_flat_mut();
                for (p, g) in params.iter_mut().zip(&grads) {
                    p.axpy(-1.0, g);
                }
            }
            let (end_loss, _) = loss_and_grads(&wnet);
            if end_loss < start_loss {
                improved += 1;
            }
        }
        assert!(improved >= 4, "meta loss fell in {improved} of 5 trials");
    }
}
