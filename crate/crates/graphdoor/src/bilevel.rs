//! Bi-level trigger optimization: alternating surrogate training and
//! pool-feature updates, followed by final random-category poisoning.
//!
//! The outer objective is `loss_a + alpha * loss_h`; only trigger feature
//! rows are trainable (structures and category assignments are frozen).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attacher::{Attached, AttachmentPlan, LinkRule, SelectRule};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::{
    cosine, softmax_xent_backward, softmax_xent_forward, Adam, AdamConfig, DenseMatrix,
};
use crate::models::{Arch, Model};
use crate::pool::TriggerPool;

/// Settings for the alternating optimization.
#[derive(Debug, Clone, Copy)]
pub struct BilevelConfig {
    /// Weight on the similarity hinge in the outer objective.
    pub alpha: f64,
    /// Similarity margin for the hinge.
    pub tau_l: f64,
    /// Inner surrogate steps per outer iteration.
    pub inner_steps: usize,
    /// Outer iteration budget.
    pub outer_iters: usize,
    pub inner_lr: f64,
    pub outer_lr: f64,
    /// Surrogate hidden width.
    pub hidden: usize,
    /// Nodes sampled for the misleading loss each outer iteration.
    pub minibatch: usize,
    pub select: SelectRule,
    pub link: LinkRule,
    /// Stop early after this many outer iterations without improvement.
    pub plateau_window: usize,
    /// Re-initialize the surrogate every outer iteration instead of
    /// warm-starting it.
    pub cold_restart: bool,
    pub seed: u64,
}

impl Default for BilevelConfig {
    fn default() -> Self {
        BilevelConfig {
            alpha: 5.0,
            tau_l: 0.6,
            inner_steps: 5,
            outer_iters: 200,
            inner_lr: 0.01,
            outer_lr: 0.01,
            hidden: 64,
            minibatch: 256,
            select: SelectRule::BestScore,
            link: LinkRule::Threshold(0.2),
            plateau_window: 20,
            cold_restart: false,
            seed: 0,
        }
    }
}

/// Per-outer-iteration loss traces.
#[derive(Debug, Clone, Default)]
pub struct BilevelLog {
    pub loss_s: Vec<f64>,
    pub loss_a: Vec<f64>,
    pub loss_h: Vec<f64>,
    pub outer_iters_run: usize,
}

/// Everything `run_bilevel` produces.
#[derive(Debug, Clone)]
pub struct BilevelOutcome {
    pub pool: TriggerPool,
    /// The backdoored training graph: base graph plus one final
    /// random-category attachment per poisoned node.
    pub backdoored: Attached,
    /// `(host, category)` pairs drawn in the final poisoning pass.
    pub final_assignments: Vec<(usize, usize)>,
    pub surrogate: Model,
    pub log: BilevelLog,
}

/// Gradient buffers mirroring every trigger's feature matrix.
#[derive(Debug, Clone)]
pub struct PoolGrads {
    grads: Vec<Vec<DenseMatrix>>,
}

impl PoolGrads {
    pub fn zeros_like(pool: &TriggerPool) -> Self {
        let grads = (0..pool.num_categories())
            .map(|k| {
                pool.category(k)
                    .iter()
                    .map(|t| DenseMatrix::zeros(t.features.rows(), t.features.cols()))
                    .collect()
            })
            .collect();
        PoolGrads { grads }
    }

    pub fn get(&self, category: usize, pool_index: usize) -> &DenseMatrix {
        &self.grads[category][pool_index]
    }

    fn row_mut(&mut self, category: usize, pool_index: usize, row: usize) -> &mut [f64] {
        self.grads[category][pool_index].row_mut(row)
    }

    /// Flattened references in `trigger_ids` order.
    fn refs(&self) -> Vec<&DenseMatrix> {
        self.grads.iter().flatten().collect()
    }
}

/// Rebuild an attack graph from recorded plans using the pool's current
/// feature rows. Selection and connection structure are taken from the
/// plans verbatim (the stored `scores` are carried over unchanged).
pub fn rebuild_attached(
    graph: &Graph,
    features: &DenseMatrix,
    pool: &TriggerPool,
    plans: &[AttachmentPlan],
) -> Result<Attached> {
    let mut att = Attached::new(graph.clone(), features.clone());
    for plan in plans {
        let trigger = pool.trigger(plan.category, plan.pool_index);
        att.attach_instance(
            &trigger.features,
            &trigger.internal_edges,
            plan.host,
            plan.category,
            plan.pool_index,
            plan.connected_local_ids.clone(),
            plan.scores.clone(),
        )?;
    }
    Ok(att)
}

/// Surrogate loss: mean cross-entropy of labeled train nodes on the clean
/// graph plus mean cross-entropy of attached hosts toward their plans'
/// target categories. Either term is skipped when its node set is empty.
pub fn loss_s(
    model: &Model,
    clean_graph: &Graph,
    clean_features: &DenseMatrix,
    labels: &[Option<usize>],
    labeled_train: &[usize],
    att: &Attached,
) -> Result<f64> {
    let (value, _) = loss_s_with_grads(model, clean_graph, clean_features, labels, labeled_train, att)?;
    Ok(value)
}

/// [`loss_s`] plus gradients w.r.t. the surrogate parameters.
pub fn loss_s_with_grads(
    model: &Model,
    clean_graph: &Graph,
    clean_features: &DenseMatrix,
    labels: &[Option<usize>],
    labeled_train: &[usize],
    att: &Attached,
) -> Result<(f64, Vec<DenseMatrix>)> {
    let mut total = 0.0f64;
    let mut grads: Option<Vec<DenseMatrix>> = None;
    let mut add = |value: f64, g: Vec<DenseMatrix>| {
        total += value;
        match &mut grads {
            None => grads = Some(g),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g.iter()) {
                    a.add_scaled(b, 1.0);
                }
            }
        }
    };

    if !labeled_train.is_empty() {
        let fwd = model.forward(clean_graph, clean_features)?;
        let (value, probs) = softmax_xent_forward(&fwd.logits, labels, labeled_train)?;
        let d_logits = softmax_xent_backward(&probs, labels, labeled_train)?;
        let g = model.backward(clean_features, &fwd, &d_logits)?;
        add(value, g.d_params);
    }
    if !att.plans.is_empty() {
        let (hosts, target_labels) = host_targets(att);
        let fwd = model.forward(&att.graph, &att.features)?;
        let (value, probs) = softmax_xent_forward(&fwd.logits, &target_labels, &hosts)?;
        let d_logits = softmax_xent_backward(&probs, &target_labels, &hosts)?;
        let g = model.backward(&att.features, &fwd, &d_logits)?;
        add(value, g.d_params);
    }
    let grads = grads.ok_or(Error::NoLabeledNodes)?;
    Ok((total, grads))
}

fn host_targets(att: &Attached) -> (Vec<usize>, Vec<Option<usize>>) {
    let hosts: Vec<usize> = att.plans.iter().map(|p| p.host).collect();
    let mut labels = vec![None; att.graph.num_nodes()];
    for p in &att.plans {
        labels[p.host] = Some(p.category);
    }
    (hosts, labels)
}

/// Misleading loss: mean cross-entropy over attached hosts toward their
/// plans' categories, with the input-feature gradient on the attack graph.
pub fn loss_a_with_grads(model: &Model, att: &Attached) -> Result<(f64, DenseMatrix)> {
    if att.plans.is_empty() {
        return Err(Error::EmptyMask);
    }
    let (hosts, target_labels) = host_targets(att);
    let fwd = model.forward(&att.graph, &att.features)?;
    let (value, probs) = softmax_xent_forward(&fwd.logits, &target_labels, &hosts)?;
    let d_logits = softmax_xent_backward(&probs, &target_labels, &hosts)?;
    let g = model.backward(&att.features, &fwd, &d_logits)?;
    Ok((value, g.d_x))
}

/// Value-only variant of [`loss_a_with_grads`].
pub fn loss_a(model: &Model, att: &Attached) -> Result<f64> {
    Ok(loss_a_with_grads(model, att)?.0)
}

/// Similarity hinge over every host-connection edge:
/// `sum max(0, tau_l - cos(host, trigger node))`.
pub fn loss_h(att: &Attached, tau_l: f64) -> f64 {
    let mut total = 0.0f64;
    for (plan, nodes) in att.plans.iter().zip(att.instance_nodes.iter()) {
        let host = att.features.row(plan.host);
        for &local in &plan.connected_local_ids {
            let trig = att.features.row(nodes[local]);
            total += (tau_l - cosine(host, trig)).max(0.0);
        }
    }
    total
}

/// Add `scale` times the hinge gradient w.r.t. the connected trigger rows
/// into `grads`, returning the loss value. The gradient at the hinge kink
/// and at zero-norm rows is taken as 0.
pub fn loss_h_accumulate(
    att: &Attached,
    tau_l: f64,
    scale: f64,
    grads: &mut PoolGrads,
) -> f64 {
    let mut total = 0.0f64;
    for (plan, nodes) in att.plans.iter().zip(att.instance_nodes.iter()) {
        let host = att.features.row(plan.host);
        let host_norm = host.iter().map(|v| v * v).sum::<f64>().sqrt();
        for &local in &plan.connected_local_ids {
            let trig = att.features.row(nodes[local]);
            let cos = cosine(host, trig);
            let margin = tau_l - cos;
            if margin <= 0.0 {
                continue;
            }
            total += margin;
            let trig_norm = trig.iter().map(|v| v * v).sum::<f64>().sqrt();
            if host_norm == 0.0 || trig_norm == 0.0 {
                continue;
            }
            // d(-cos)/d trig = cos*trig/|trig|^2 - host/(|host||trig|).
            let grow = grads.row_mut(plan.category, plan.pool_index, local);
            for i in 0..grow.len() {
                let d = cos * trig[i] / (trig_norm * trig_norm)
                    - host[i] / (host_norm * trig_norm);
                grow[i] += scale * d;
            }
        }
    }
    total
}

/// Scatter an attack-graph input gradient back onto the pool triggers'
/// feature rows, scaled by `scale`. Rows of original nodes are ignored.
pub fn scatter_feature_grads(
    att: &Attached,
    d_x: &DenseMatrix,
    scale: f64,
    grads: &mut PoolGrads,
) {
    for (plan, nodes) in att.plans.iter().zip(att.instance_nodes.iter()) {
        for (local, &global) in nodes.iter().enumerate() {
            let src = d_x.row(global);
            let dst = grads.row_mut(plan.category, plan.pool_index, local);
            for (d, &s) in dst.iter_mut().zip(src.iter()) {
                *d += scale * s;
            }
        }
    }
}

/// Attach one pool trigger to each `(host, category)` pair on a fresh copy
/// of the base graph.
fn attach_all(
    graph: &Graph,
    features: &DenseMatrix,
    pool: &TriggerPool,
    pairs: &[(usize, usize)],
    select: SelectRule,
    link: LinkRule,
    rng: &mut ChaCha8Rng,
) -> Result<Attached> {
    let mut att = Attached::new(graph.clone(), features.clone());
    for &(host, category) in pairs {
        att.attach_from_pool(pool, host, category, select, link, rng)?;
    }
    Ok(att)
}

/// Algorithm: alternate `inner_steps` surrogate updates against the
/// poisoned-node attack graph with one outer update of all trigger
/// features, then poison each node in `poisoned` with a uniformly random
/// target category to produce the backdoored graph.
#[allow(clippy::too_many_arguments)]
pub fn run_bilevel(
    graph: &Graph,
    features: &DenseMatrix,
    labels: &[Option<usize>],
    labeled_train: &[usize],
    unlabeled: &[usize],
    poisoned: &[usize],
    num_classes: usize,
    mut pool: TriggerPool,
    cfg: &BilevelConfig,
) -> Result<BilevelOutcome> {
    if cfg.inner_steps == 0 {
        return Err(Error::InvalidArgument("inner_steps must be ≥ 1".into()));
    }
    if poisoned.is_empty() {
        return Err(Error::EmptyPoisonedSet);
    }
    let covered = pool.covered_categories();
    if covered.is_empty() {
        return Err(Error::UncoveredCategories((0..num_classes).collect()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Fixed target assignments for the surrogate loss, drawn once.
    let fixed: Vec<(usize, usize)> = poisoned
        .iter()
        .map(|&v| (v, covered[rng.gen_range(0..covered.len())]))
        .collect();

    let mut surrogate = Model::new(Arch::Gcn, features.cols(), cfg.hidden, num_classes, &mut rng);
    let mut inner_adam = Adam::new(AdamConfig::with_lr(cfg.inner_lr), &surrogate.param_shapes());
    let trigger_shapes: Vec<(usize, usize)> = pool
        .trigger_ids()
        .iter()
        .map(|&(k, j)| pool.trigger(k, j).features.shape())
        .collect();
    let mut outer_adam = Adam::new(AdamConfig::with_lr(cfg.outer_lr), &trigger_shapes);

    let mut log = BilevelLog::default();
    let mut best = f64::INFINITY;
    let mut anchor = f64::INFINITY;
    let mut stale = 0usize;
    for _ in 0..cfg.outer_iters {
        if cfg.cold_restart {
            surrogate = Model::new(Arch::Gcn, features.cols(), cfg.hidden, num_classes, &mut rng);
            inner_adam = Adam::new(AdamConfig::with_lr(cfg.inner_lr), &surrogate.param_shapes());
        }
        // Re-select and re-plan with the current trigger features.
        let vp_att = attach_all(graph, features, &pool, &fixed, cfg.select, cfg.link, &mut rng)?;

        let mut last_inner = 0.0;
        for _ in 0..cfg.inner_steps {
            let (value, d_params) = loss_s_with_grads(
                &surrogate,
                graph,
                features,
                labels,
                labeled_train,
                &vp_att,
            )?;
            let grad_refs: Vec<&DenseMatrix> = d_params.iter().collect();
            let mut param_refs: Vec<&mut DenseMatrix> =
                surrogate.params_mut().iter_mut().collect();
            inner_adam.step(&mut param_refs, &grad_refs)?;
            last_inner = value;
        }

        // Misleading loss on a fresh unlabeled sample with random covered
        // categories (one draw per node, so cost is independent of K).
        let mut batch = unlabeled.to_vec();
        batch.shuffle(&mut rng);
        batch.truncate(cfg.minibatch);
        let pairs: Vec<(usize, usize)> = batch
            .into_iter()
            .map(|v| (v, covered[rng.gen_range(0..covered.len())]))
            .collect();
        let mb_att = attach_all(graph, features, &pool, &pairs, cfg.select, cfg.link, &mut rng)?;

        let (la, d_x) = loss_a_with_grads(&surrogate, &mb_att)?;
        let mut grads = PoolGrads::zeros_like(&pool);
        scatter_feature_grads(&mb_att, &d_x, 1.0, &mut grads);
        let lh = loss_h_accumulate(&vp_att, cfg.tau_l, cfg.alpha, &mut grads);

        let grad_refs = grads.refs();
        let mut param_refs = pool.features_mut();
        outer_adam.step(&mut param_refs, &grad_refs)?;

        log.loss_s.push(last_inner);
        log.loss_a.push(la);
        log.loss_h.push(lh);
        log.outer_iters_run += 1;

        // Plateau check on a window mean: the minibatch and category draws
        // are resampled every iteration, so the raw total is too noisy to
        // compare point-to-point. Stop once the best window mean has not
        // improved by the tolerance for a full window of iterations.
        let w = cfg.plateau_window.max(1);
        if log.outer_iters_run >= w {
            let totals: Vec<f64> = log
                .loss_a
                .iter()
                .zip(&log.loss_h)
                .map(|(&a, &h)| a + cfg.alpha * h)
                .collect();
            let recent = totals[totals.len() - w..].iter().sum::<f64>() / w as f64;
            best = best.min(recent);
            if best < anchor - 1e-4 {
                anchor = best;
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.plateau_window {
                    break;
                }
            }
        }
    }

    // Final poisoning: uniformly random category over the full label set.
    let final_assignments: Vec<(usize, usize)> = poisoned
        .iter()
        .map(|&v| (v, rng.gen_range(0..num_classes)))
        .collect();
    let mut missing: Vec<usize> = final_assignments
        .iter()
        .map(|&(_, k)| k)
        .filter(|&k| pool.category(k).is_empty())
        .collect();
    missing.sort_unstable();
    missing.dedup();
    if !missing.is_empty() {
        return Err(Error::UncoveredCategories(missing));
    }
    let backdoored = attach_all(
        graph,
        features,
        &pool,
        &final_assignments,
        cfg.select,
        cfg.link,
        &mut rng,
    )?;

    Ok(BilevelOutcome {
        pool,
        backdoored,
        final_assignments,
        surrogate,
        log,
    })
}
