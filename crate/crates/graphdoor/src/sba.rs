//! Baseline attack: one fixed random trigger per category with feature
//! rows sampled verbatim from the training graph, attached by a single
//! random edge. No similarity logic and no optimization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attacher::Attached;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::DenseMatrix;

#[derive(Debug, Clone, Copy)]
pub struct SbaConfig {
    pub trigger_size: usize,
    /// Edge probability of the random trigger structure.
    pub p_edge: f64,
    pub seed: u64,
}

impl Default for SbaConfig {
    fn default() -> Self {
        SbaConfig {
            trigger_size: 5,
            p_edge: 0.3,
            seed: 0,
        }
    }
}

/// A fixed trigger for one target category.
#[derive(Debug, Clone)]
pub struct SbaTrigger {
    pub category: usize,
    /// Local index pairs `(i, j)` with `i < j`.
    pub internal_edges: Vec<(usize, usize)>,
    /// One training-graph feature row per trigger node, copied verbatim.
    pub features: DenseMatrix,
    /// Which training-graph row each feature row came from.
    pub source_rows: Vec<usize>,
}

/// Build one trigger per category: Erdős–Rényi structure, features drawn
/// uniformly (with replacement) from the rows of `train_features`.
pub fn sba_build_triggers(
    train_features: &DenseMatrix,
    num_categories: usize,
    cfg: &SbaConfig,
) -> Result<Vec<SbaTrigger>> {
    if cfg.trigger_size == 0 {
        return Err(Error::InvalidArgument("sba: trigger_size must be ≥ 1".into()));
    }
    if !(0.0..=1.0).contains(&cfg.p_edge) {
        return Err(Error::InvalidArgument(format!(
            "sba: p_edge {} outside [0, 1]",
            cfg.p_edge
        )));
    }
    if train_features.rows() == 0 {
        return Err(Error::InvalidArgument("sba: no training rows to sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut triggers = Vec::with_capacity(num_categories);
    for category in 0..num_categories {
        let mut internal_edges = Vec::new();
        for i in 0..cfg.trigger_size {
            for j in (i + 1)..cfg.trigger_size {
                if rng.gen_range(0.0..1.0) < cfg.p_edge {
                    internal_edges.push((i, j));
                }
            }
        }
        let source_rows: Vec<usize> = (0..cfg.trigger_size)
            .map(|_| rng.gen_range(0..train_features.rows()))
            .collect();
        let mut features = DenseMatrix::zeros(cfg.trigger_size, train_features.cols());
        for (local, &src) in source_rows.iter().enumerate() {
            features.row_mut(local).copy_from_slice(train_features.row(src));
        }
        triggers.push(SbaTrigger {
            category,
            internal_edges,
            features,
            source_rows,
        });
    }
    Ok(triggers)
}

/// Attach the category trigger to a host by one random edge.
pub fn sba_attach(
    att: &mut Attached,
    triggers: &[SbaTrigger],
    host: usize,
    category: usize,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    let trigger = triggers
        .iter()
        .find(|t| t.category == category)
        .ok_or_else(|| Error::UncoveredCategories(vec![category]))?;
    let local = rng.gen_range(0..trigger.features.rows());
    att.attach_instance(
        &trigger.features,
        &trigger.internal_edges,
        host,
        category,
        0,
        vec![local],
        Vec::new(),
    )
}

/// Poison every `(host, category)` pair on a fresh copy of the graph.
pub fn sba_poison(
    graph: &Graph,
    features: &DenseMatrix,
    triggers: &[SbaTrigger],
    assignments: &[(usize, usize)],
    seed: u64,
) -> Result<Attached> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut att = Attached::new(graph.clone(), features.clone());
    for &(host, category) in assignments {
        sba_attach(&mut att, triggers, host, category, &mut rng)?;
    }
    Ok(att)
}

/// Full baseline run: build the per-category triggers, draw a uniformly
/// random target category per poisoned node, and poison the graph.
pub fn sba_attack(
    graph: &Graph,
    features: &DenseMatrix,
    poisoned: &[usize],
    num_categories: usize,
    cfg: &SbaConfig,
) -> Result<(Vec<SbaTrigger>, Attached, Vec<(usize, usize)>)> {
    if poisoned.is_empty() {
        return Err(Error::EmptyPoisonedSet);
    }
    let triggers = sba_build_triggers(features, num_categories, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let assignments: Vec<(usize, usize)> = poisoned
        .iter()
        .map(|&v| (v, rng.gen_range(0..num_categories)))
        .collect();
    let att = sba_poison(graph, features, &triggers, &assignments, cfg.seed.wrapping_add(2))?;
    Ok((triggers, att, assignments))
}

/// View the baseline triggers as a one-per-category pool so they share
/// the pool checkpoint format.
pub fn sba_to_pool(
    triggers: &[SbaTrigger],
    num_categories: usize,
) -> crate::pool::TriggerPool {
    let converted = triggers
        .iter()
        .map(|t| crate::pool::SubgraphTrigger {
            source_nodes: t.source_rows.clone(),
            internal_edges: t.internal_edges.clone(),
            features: t.features.clone(),
            aps: vec![0.0; num_categories],
            target_category: t.category,
            score: 0.0,
        })
        .collect();
    crate::pool::build_pool(converted, 1, num_categories)
}

/// Inverse of [`sba_to_pool`]: first trigger of each covered category.
pub fn pool_to_sba(pool: &crate::pool::TriggerPool) -> Vec<SbaTrigger> {
    pool.covered_categories()
        .into_iter()
        .map(|k| {
            let t = pool.trigger(k, 0);
            SbaTrigger {
                category: k,
                internal_edges: t.internal_edges.clone(),
                features: t.features.clone(),
                source_rows: t.source_nodes.clone(),
            }
        })
        .collect()
}
