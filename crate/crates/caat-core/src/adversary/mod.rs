//! Signed-gradient attacks inside per-sample max-norm balls, in both
//! directions: adversaries climb their objective, anti-adversaries
//! descend it. Also hosts the perturbation-bound calculators.

pub mod bounds;

use rand_distr::{Distribution, StandardNormal};

use crate::error::CoreError;
use crate::nn::{Graph, Head, Mlp, Tensor};
use crate::rng::Stream;
use crate::Result;

pub use bounds::{
    bound_strategy, grad_based_bound, remargin_bounds, BoundAssignment, BoundContext, BoundMethod,
    BoundStrategy, GRAD_BOUND_OFFSET,
};

/// Per-sample max-norm radii for one batch.
#[derive(Debug, Clone, PartialEq)]
pub enum BallRadii {
    Uniform(f64),
    PerSample(Vec<f64>),
}

impl BallRadii {
    pub fn get(&self, i: usize) -> f64 {
        match self {
            BallRadii::Uniform(e) => *e,
            BallRadii::PerSample(v) => v[i],
        }
    }
}

/// Inner-loop step size; `Auto` walks the ball diameter with slack,
/// `2.5 * eps_i / steps` per sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    /// Inner iterations K.
    pub steps: usize,
    pub step_size: StepSize,
    /// Scale of the Gaussian start `x + scale * N(0, I)`.
    pub init_noise_scale: f64,
    pub ball: BallRadii,
    /// Optional feature-domain box applied after the ball projection.
    pub domain_clip: Option<(f64, f64)>,
}

impl AttackConfig {
    /// Evaluation-attack defaults: 10 iterations, auto step, uniform ball.
    pub fn eval_default(eps: f64) -> Self {
        AttackConfig {
            steps: 10,
            step_size: StepSize::Auto,
            init_noise_scale: 0.001,
            ball: BallRadii::Uniform(eps),
            domain_clip: None,
        }
    }

    pub fn validate_for(&self, n: usize) -> Result<()> {
        if self.steps == 0 {
            return Err(CoreError::invalid("attack needs at least one step"));
        }
        if let StepSize::Fixed(s) = self.step_size {
            if !(s > 0.0) {
                return Err(CoreError::invalid(format!("step size must be > 0, got {s}")));
            }
        }
        if !(self.init_noise_scale >= 0.0) {
            return Err(CoreError::invalid("init noise scale must be >= 0"));
        }
        match &self.ball {
            BallRadii::Uniform(e) => {
                if !(*e >= 0.0) {
                    return Err(CoreError::invalid(format!("radius must be >= 0, got {e}")));
                }
            }
            BallRadii::PerSample(v) => {
                if v.len() != n {
                    return Err(CoreError::Shape(format!(
                        "{} radii for {n} samples",
                        v.len()
                    )));
                }
                if v.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
                    return Err(CoreError::invalid("radii must be finite and >= 0"));
                }
            }
        }
        if let Some((lo, hi)) = self.domain_clip {
            if !(lo < hi) {
                return Err(CoreError::invalid(format!(
                    "domain clip [{lo}, {hi}] is empty"
                )));
            }
        }
        Ok(())
    }

    pub fn radius(&self, i: usize) -> f64 {
        self.ball.get(i)
    }

    fn step_for(&self, i: usize) -> f64 {
        match self.step_size {
            StepSize::Auto => 2.5 * self.radius(i) / self.steps as f64,
            StepSize::Fixed(s) => s,
        }
    }
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Projects a candidate into the max-norm ball around `origin`, then into
/// the feature domain. Coordinatewise clamps, so idempotent.
pub fn project_ball(
    origin: &[f64],
    candidate: &[f64],
    eps: f64,
    domain_clip: Option<(f64, f64)>,
) -> Result<Vec<f64>> {
    if !(eps >= 0.0) {
        return Err(CoreError::invalid(format!("radius must be >= 0, got {eps}")));
    }
    if origin.len() != candidate.len() {
        return Err(CoreError::Shape(format!(
            "candidate has {} coordinates, origin {}",
            candidate.len(),
            origin.len()
        )));
    }
    Ok(origin
        .iter()
        .zip(candidate)
        .map(|(&o, &c)| {
            let mut v = c.clamp(o - eps, o + eps);
            if let Some((lo, hi)) = domain_clip {
                v = v.clamp(lo, hi);
            }
            v
        })
        .collect())
}

fn project_rows(x: &Tensor, cand: &mut Tensor, cfg: &AttackConfig) {
    for i in 0..x.rows {
        let eps = cfg.radius(i);
        let orow = x.row(i);
        let crow = cand.row_mut(i);
        for j in 0..orow.len() {
            let mut v = crow[j].clamp(orow[j] - eps, orow[j] + eps);
            if let Some((lo, hi)) = cfg.domain_clip {
                v = v.clamp(lo, hi);
            }
            crow[j] = v;
        }
    }
}

/// Draws the standard perturbation start, `x + scale * N(0, I)`, without
/// projecting it.
pub fn noised_start(x: &Tensor, scale: f64, rng: &mut Stream) -> Tensor {
    let mut out = x.clone();
    for v in &mut out.data {
        let z: f64 = StandardNormal.sample(rng);
        *v += scale * z;
    }
    out
}

enum Objective<'a> {
    /// Maximize KL(f(x_clean) || f(x_cur)); the clean logits are frozen.
    KlFromClean,
    /// Move cross-entropy against the given labels: up or down.
    Ce { labels: &'a [usize], ascend: bool },
}

impl Objective<'_> {
    fn ascend(&self) -> bool {
        match self {
            Objective::KlFromClean => true,
            Objective::Ce { ascend, .. } => *ascend,
        }
    }
}

/// Shared inner loop. Evaluates the objective at the start and after
/// each projected step, and returns the per-sample best iterate, so the
/// returned points never score worse than the start.
fn run_attack(
    net: &Mlp,
    x: &Tensor,
    objective: Objective<'_>,
    cfg: &AttackConfig,
    start: Tensor,
) -> Result<Tensor> {
    cfg.validate_for(x.rows)?;
    if net.spec.head != Head::Logits {
        return Err(CoreError::invalid(
            "attacks expect a logits-head network; the losses apply softmax themselves",
        ));
    }
    if net.spec.in_width() != x.cols {
        return Err(CoreError::Shape(format!(
            "network takes {} features, batch has {}",
            net.spec.in_width(),
            x.cols
        )));
    }
    if let Objective::Ce { labels, .. } = &objective {
        if labels.len() != x.rows {
            return Err(CoreError::Shape("one label per row".into()));
        }
    }

    let clean_logits = match objective {
        Objective::KlFromClean => Some(net.forward_values(x)),
        Objective::Ce { .. } => None,
    };

    let ascend = objective.ascend();
    let n = x.rows;
    let mut cur = start;
    project_rows(x, &mut cur, cfg);
    let mut best = cur.clone();
    let mut best_obj = vec![if ascend { f64::NEG_INFINITY } else { f64::INFINITY }; n];
    let ones = vec![1.0; n];

    for step in 0..=cfg.steps {
        let mut g = Graph::new();
        let xid = g.input(cur.clone());
        let bound = net.bind_frozen(&mut g);
        let logits = net.forward(&mut g, &bound, xid);
        let col = match &objective {
            Objective::KlFromClean => {
                let p = g.constant(clean_logits.clone().expect("clean logits"));
                g.kl_rows(p, logits)
            }
            Objective::Ce { labels, .. } => g.ce_rows(logits, labels),
        };
        for i in 0..n {
            let v = g.value(col).get(i, 0);
            if !v.is_finite() {
                return Err(CoreError::numerical(format!(
                    "attack objective became {v} at inner step {step}"
                )));
            }
            if (ascend && v > best_obj[i]) || (!ascend && v < best_obj[i]) {
                best_obj[i] = v;
                best.row_mut(i).copy_from_slice(cur.row(i));
            }
        }
        if step == cfg.steps {
            break;
        }

        // Rows are independent through the network, so one backward of
        // the row sum yields every per-sample input gradient.
        let total = g.weighted_sum(col, &ones);
        g.backward(total);
        let dx = g
            .grad(xid)
            .ok_or_else(|| CoreError::numerical("attack input received no gradient"))?;
        if !dx.all_finite() {
            return Err(CoreError::numerical(format!(
                "non-finite attack gradient at inner step {step}"
            )));
        }
        let dir = if ascend { 1.0 } else { -1.0 };
        for i in 0..n {
            let eta = cfg.step_for(i);
            let grow = dx.row(i);
            let crow = cur.row_mut(i);
            for j in 0..crow.len() {
                crow[j] += dir * eta * sign0(grow[j]);
            }
        }
        project_rows(x, &mut cur, cfg);
    }
    Ok(best)
}

/// Adversary generation: ascends `KL(f(x) || f(x_adv))` from a noised
/// start with K projected signed-gradient steps.
pub fn gen_adversary(net: &Mlp, x: &Tensor, cfg: &AttackConfig, rng: &mut Stream) -> Result<Tensor> {
    let start = noised_start(x, cfg.init_noise_scale, rng);
    run_attack(net, x, Objective::KlFromClean, cfg, start)
}

/// Adversary generation from an externally drawn start (reused when the
/// bound calculator already inspected the start's gradients).
pub fn gen_adversary_from(net: &Mlp, x: &Tensor, start: &Tensor, cfg: &AttackConfig) -> Result<Tensor> {
    run_attack(net, x, Objective::KlFromClean, cfg, start.clone())
}

/// Cross-entropy-ascent adversary against explicit labels; used by the
/// evaluation attacks and the plain adversarial-training objective.
pub fn gen_adversary_ce(
    net: &Mlp,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
    rng: &mut Stream,
) -> Result<Tensor> {
    let start = noised_start(x, cfg.init_noise_scale, rng);
    run_attack(net, x, Objective::Ce { labels, ascend: true }, cfg, start)
}

pub fn gen_adversary_ce_from(
    net: &Mlp,
    x: &Tensor,
    labels: &[usize],
    start: &Tensor,
    cfg: &AttackConfig,
) -> Result<Tensor> {
    run_attack(net, x, Objective::Ce { labels, ascend: true }, cfg, start.clone())
}

/// Anti-adversary generation: descends the cross-entropy to the observed
/// label, padding the sample away from the boundary.
pub fn gen_anti_adversary(
    net: &Mlp,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
    rng: &mut Stream,
) -> Result<Tensor> {
    let start = noised_start(x, cfg.init_noise_scale, rng);
    run_attack(net, x, Objective::Ce { labels, ascend: false }, cfg, start)
}

pub fn gen_anti_adversary_from(
    net: &Mlp,
    x: &Tensor,
    labels: &[usize],
    start: &Tensor,
    cfg: &AttackConfig,
) -> Result<Tensor> {
    run_attack(net, x, Objective::Ce { labels, ascend: false }, cfg, start.clone())
}

/// Per-sample Euclidean norms of the KL-objective input gradient,
/// evaluated at `point` against the clean batch (Grad-Based bound input).
pub fn kl_grad_norms(net: &Mlp, x_clean: &Tensor, point: &Tensor) -> Result<Vec<f64>> {
    input_grad_norms(net, x_clean, point, Objective::KlFromClean)
}

/// Per-sample Euclidean norms of the cross-entropy input gradient at
/// `point` (Grad-Based bound input).
pub fn ce_grad_norms(net: &Mlp, point: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    input_grad_norms(net, point, point, Objective::Ce { labels, ascend: true })
}

fn input_grad_norms(
    net: &Mlp,
    x_clean: &Tensor,
    point: &Tensor,
    objective: Objective<'_>,
) -> Result<Vec<f64>> {
    if net.spec.head != Head::Logits {
        return Err(CoreError::invalid("gradient norms expect a logits-head network"));
    }
    let clean_logits = match objective {
        Objective::KlFromClean => Some(net.forward_values(x_clean)),
        Objective::Ce { .. } => None,
    };
    let mut g = Graph::new();
    let xid = g.input(point.clone());
    let bound = net.bind_frozen(&mut g);
    let logits = net.forward(&mut g, &bound, xid);
    let col = match &objective {
        Objective::KlFromClean => {
            let p = g.constant(clean_logits.expect("clean logits"));
            g.kl_rows(p, logits)
        }
        Objective::Ce { labels, .. } => g.ce_rows(logits, labels),
    };
    let total = g.weighted_sum(col, &vec![1.0; point.rows]);
    g.backward(total);
    let dx = g
        .grad(xid)
        .ok_or_else(|| CoreError::numerical("no input gradient available"))?;
    if !dx.all_finite() {
        return Err(CoreError::numerical("non-finite input gradient"));
    }
    Ok((0..dx.rows)
        .map(|i| dx.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{loss_ce_rows, loss_kl, Activation, MlpSpec};
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_net(seed: u64, widths: &[usize]) -> Mlp {
        Mlp::init(
            MlpSpec {
                widths: widths.to_vec(),
                activation: Activation::Tanh,
                head: Head::Logits,
            },
            seed,
        )
        .unwrap()
    }

    fn random_batch(seed: u64, n: usize, d: usize) -> Tensor {
        let mut rng = stream(seed, "attack-test-batch");
        Tensor::from_vec(n, d, (0..n * d).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
    }

    #[test]
    fn zero_radius_returns_the_clean_batch_exactly() {
        let net = random_net(1, &[3, 8, 2]);
        let x = random_batch(2, 4, 3);
        let cfg = AttackConfig {
            ball: BallRadii::Uniform(0.0),
            ..AttackConfig::eval_default(0.0)
        };
        let mut rng = stream(3, "attack-noise");
        let adv = gen_adversary(&net, &x, &cfg, &mut rng).unwrap();
        assert_eq!(adv.data, x.data);
    }

    #[test]
    fn adversary_never_scores_below_its_noised_start() {
        for seed in 0..10u64 {
            let net = random_net(seed, &[4, 10, 3]);
            let x = random_batch(seed + 100, 5, 4);
            let cfg = AttackConfig::eval_default(0.25);
            let mut rng = stream(seed + 200, "attack-noise");
            let start = noised_start(&x, cfg.init_noise_scale, &mut rng);
            let adv = gen_adversary_from(&net, &x, &start, &cfg).unwrap();

            let clean = net.forward_values(&x);
            // Projected start, row by row.
            let mut proj = start.clone();
            for i in 0..x.rows {
                let p = project_ball(x.row(i), proj.row(i), 0.25, None).unwrap();
                proj.row_mut(i).copy_from_slice(&p);
            }
            for i in 0..x.rows {
                let row = |t: &Tensor| {
                    Tensor::from_vec(1, t.cols, t.row(i).to_vec()).unwrap()
                };
                let kl_adv = loss_kl(&row(&clean), &net.forward_values(&row(&adv)));
                let kl_start = loss_kl(&row(&clean), &net.forward_values(&row(&proj)));
                assert!(
                    kl_adv >= kl_start - 1e-9,
                    "seed {seed} row {i}: {kl_adv} < {kl_start}"
                );
                for (a, o) in adv.row(i).iter().zip(x.row(i)) {
                    assert!((a - o).abs() <= 0.25 + 1e-9);
                }
            }
        }
    }

    #[test]
    fn anti_adversary_never_scores_above_its_noised_start() {
        for seed in 0..10u64 {
            let net = random_net(seed + 7, &[4, 10, 3]);
            let x = random_batch(seed + 300, 5, 4);
            let labels: Vec<usize> = (0..5).map(|i| i % 3).collect();
            let cfg = AttackConfig::eval_default(0.25);
            let mut rng = stream(seed + 400, "attack-noise");
            let start = noised_start(&x, cfg.init_noise_scale, &mut rng);
            let anti = gen_anti_adversary_from(&net, &x, &labels, &start, &cfg).unwrap();

            let mut proj = start.clone();
            for i in 0..x.rows {
                let p = project_ball(x.row(i), proj.row(i), 0.25, None).unwrap();
                proj.row_mut(i).copy_from_slice(&p);
            }
            let ce_anti = loss_ce_rows(&net.forward_values(&anti), &labels);
            let ce_start = loss_ce_rows(&net.forward_values(&proj), &labels);
            for i in 0..x.rows {
                assert!(
                    ce_anti[i] <= ce_start[i] + 1e-9,
                    "seed {seed} row {i}: {} > {}",
                    ce_anti[i],
                    ce_start[i]
                );
            }
        }
    }

    #[test]
    fn linear_model_adversary_saturates_every_active_coordinate() {
        // One linear layer with two classes: the KL gradient along
        // coordinate j is proportional to W[j][0] - W[j][1] with a sign
        // shared across coordinates, so the signed steps push each active
        // coordinate one way until the ball clamp pins it at exactly eps.
        // The start must keep its default noise: at the exact clean point
        // the KL gradient vanishes and the attack would never move.
        let mut net = random_net(5, &[3, 2]);
        net.layers[0].0 = Tensor::from_vec(3, 2, vec![0.9, -0.4, 0.0, 0.0, -0.7, 0.3]).unwrap();
        let x = random_batch(6, 3, 3);
        let cfg = AttackConfig::eval_default(0.2);
        let mut rng = stream(7, "attack-noise");
        let adv = gen_adversary(&net, &x, &cfg, &mut rng).unwrap();
        for i in 0..x.rows {
            for j in [0usize, 2] {
                let delta = (adv.get(i, j) - x.get(i, j)).abs();
                assert!(
                    (delta - 0.2).abs() < 1e-9,
                    "row {i} coord {j} moved {delta}"
                );
            }
            // The middle weight row is zero, so that coordinate carries
            // nothing but its initialization noise.
            let inert = (adv.get(i, 1) - x.get(i, 1)).abs();
            assert!(inert < 0.01, "row {i} inert coord moved {inert}");
        }
    }

    #[test]
    fn anti_adversary_pads_the_margin_of_a_correct_linear_prediction() {
        let mut net = random_net(8, &[2, 2]);
        net.layers[0].0 = Tensor::from_vec(2, 2, vec![1.0, -1.0, 0.5, -0.5]).unwrap();
        net.layers[0].1 = Tensor::zeros(1, 2);
        let x = Tensor::from_vec(1, 2, vec![0.8, 0.4]).unwrap();
        // logit0 - logit1 = 2*(x0 + 0.5 x1) > 0, so class 0 is correct.
        let labels = vec![0usize];
        let cfg = AttackConfig {
            init_noise_scale: 0.0,
            ..AttackConfig::eval_default(0.1)
        };
        let mut rng = stream(9, "attack-noise");
        let anti = gen_anti_adversary(&net, &x, &labels, &cfg, &mut rng).unwrap();
        let margin = |t: &Tensor| {
            let l = net.forward_values(t);
            l.get(0, 0) - l.get(0, 1)
        };
        assert!(margin(&anti) >= margin(&x) - 1e-12);
    }

    #[test]
    fn ce_adversary_hurts_more_than_anti_adversary_helps_pairwise() {
        let mut adv_wins = 0;
        for seed in 0..20u64 {
            let net = random_net(seed + 50, &[3, 6, 2]);
            let x = random_batch(seed + 500, 3, 3);
            let labels = vec![0usize, 1, 0];
            let cfg = AttackConfig::eval_default(0.3);
            let mut rng1 = stream(seed, "a");
            let mut rng2 = stream(seed, "b");
            let adv = gen_adversary_ce(&net, &x, &labels, &cfg, &mut rng1).unwrap();
            let anti = gen_anti_adversary(&net, &x, &labels, &cfg, &mut rng2).unwrap();
            let ce_adv: f64 = loss_ce_rows(&net.forward_values(&adv), &labels).iter().sum();
            let ce_anti: f64 = loss_ce_rows(&net.forward_values(&anti), &labels).iter().sum();
            if ce_adv > ce_anti {
                adv_wins += 1;
            }
        }
        assert_eq!(adv_wins, 20);
    }

    #[test]
    fn domain_clip_is_honored() {
        let net = random_net(11, &[2, 4, 2]);
        let mut x = random_batch(12, 6, 2);
        for v in &mut x.data {
            *v = v.clamp(-0.9, 0.9);
        }
        let cfg = AttackConfig {
            domain_clip: Some((-1.0, 1.0)),
            ..AttackConfig::eval_default(0.5)
        };
        let mut rng = stream(13, "attack-noise");
        let adv = gen_adversary(&net, &x, &cfg, &mut rng).unwrap();
        assert!(adv.data.iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn rejects_softmax_head_networks() {
        let net = Mlp::init(
            MlpSpec {
                widths: vec![2, 2],
                activation: Activation::Tanh,
                head: Head::Softmax { tau: 1.0 },
            },
            0,
        )
        .unwrap();
        let x = random_batch(14, 2, 2);
        let mut rng = stream(15, "attack-noise");
        assert!(gen_adversary(&net, &x, &AttackConfig::eval_default(0.1), &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_contained(
            pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..8),
            eps in 0.0f64..2.0,
            clip in prop::option::of((-2.0f64..0.0, 0.0f64..2.0)),
        ) {
            let origin: Vec<f64> = pairs.iter().map(|(o, _)| *o).collect();
            let candidate: Vec<f64> =
                pairs.iter().map(|(o, d)| o + d).collect();
            let once = project_ball(&origin, &candidate, eps, clip).unwrap();
            let twice = project_ball(&origin, &once, eps, clip).unwrap();
            prop_assert_eq!(&once, &twice);
            for (p, o) in once.iter().zip(&origin) {
                let mut lo = o - eps;
                let mut hi = o + eps;
                if let Some((clo, chi)) = clip {
                    lo = lo.max(clo);
                    hi = hi.min(chi);
                }
                // The intersection can be empty when the origin itself is
                // outside the domain; the domain then wins.
                if lo <= hi {
                    prop_assert!(*p >= lo - 1e-12 && *p <= hi + 1e-12);
                } else if let Some((clo, chi)) = clip {
                    prop_assert!(*p >= clo - 1e-12 && *p <= chi + 1e-12);
                }
            }
        }
    }
}
