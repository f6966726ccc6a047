//! Attack-success and clean-accuracy measurement under the inductive
//! protocol: held-out nodes are spliced into the (possibly defended)
//! training graph one at a time, never mutating the stored graph.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attacher::{Attached, LinkRule, SelectRule};
use crate::error::{Error, Result};
use crate::graph::{Dataset, Graph};
use crate::linalg::DenseMatrix;
use crate::models::{argmax, Model};
use crate::pool::TriggerPool;
use crate::sba::{sba_attach, SbaTrigger};

/// Where evaluation-time triggers come from.
pub enum TriggerSource<'a> {
    Pool {
        pool: &'a TriggerPool,
        select: SelectRule,
        link: LinkRule,
    },
    Sba {
        triggers: &'a [SbaTrigger],
    },
}

impl TriggerSource<'_> {
    pub fn covers(&self, category: usize) -> bool {
        match self {
            TriggerSource::Pool { pool, .. } => {
                category < pool.num_categories() && !pool.category(category).is_empty()
            }
            TriggerSource::Sba { triggers } => triggers.iter().any(|t| t.category == category),
        }
    }

    pub fn attach(
        &self,
        att: &mut Attached,
        host: usize,
        category: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<usize> {
        match self {
            TriggerSource::Pool { pool, select, link } => {
                att.attach_from_pool(pool, host, category, *select, *link, rng)
            }
            TriggerSource::Sba { triggers } => sba_attach(att, triggers, host, category, rng),
        }
    }
}

/// Evaluation context: the victim's training graph plus the mapping back
/// to the original dataset ids.
pub struct InductiveEval<'a> {
    pub dataset: &'a Dataset,
    pub base_graph: &'a Graph,
    pub base_features: &'a DenseMatrix,
    /// `orig_to_base[v]` is the training-graph id of original node `v`, or
    /// `None` when the node is held out or was removed by a defense.
    pub orig_to_base: &'a [Option<usize>],
}

impl InductiveEval<'_> {
    /// Splice one held-out node onto a copy of the base graph, restoring
    /// its original edges to every retained node. Returns the copy and the
    /// new node's id.
    pub fn extend_with(&self, node: usize) -> Result<(Graph, DenseMatrix, usize)> {
        if node >= self.dataset.num_nodes() {
            return Err(Error::InvalidArgument(format!(
                "eval node {node} out of range"
            )));
        }
        let mut g = self.base_graph.clone();
        let new_id = g
            .add_nodes(1)
            .next()
            .expect("add_nodes(1) yields one id");
        for &u in self.dataset.graph.neighbors(node) {
            if let Some(base) = self.orig_to_base[u] {
                g.add_edge(base, new_id)?;
            }
        }
        let mut x = self.base_features.clone();
        let row = DenseMatrix::from_vec(
            1,
            self.dataset.num_features(),
            self.dataset.features.row(node).to_vec(),
        )?;
        x.append_rows(&row)?;
        Ok((g, x, new_id))
    }
}

/// Per-category attack success rate: the fraction of target nodes the
/// victim classifies as `k` once a category-`k` trigger is attached.
pub fn compute_asr(
    model: &Model,
    eval: &InductiveEval,
    source: &TriggerSource,
    targets: &[usize],
    num_categories: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if targets.is_empty() {
        return Err(Error::EmptyMask);
    }
    let uncovered: Vec<usize> =
        (0..num_categories).filter(|&k| !source.covers(k)).collect();
    if !uncovered.is_empty() {
        return Err(Error::UncoveredCategories(uncovered));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rates = Vec::with_capacity(num_categories);
    for k in 0..num_categories {
        let mut hits = 0usize;
        for &v in targets {
            let (g, x, host) = eval.extend_with(v)?;
            let mut att = Attached::new(g, x);
            source.attach(&mut att, host, k, &mut rng)?;
            let fwd = model.forward(&att.graph, &att.features)?;
            if argmax(fwd.logits.row(host)) == k {
                hits += 1;
            }
        }
        rates.push(hits as f64 / targets.len() as f64);
    }
    Ok(rates)
}

/// Accuracy on held-out nodes evaluated without any trigger.
pub fn compute_clean_accuracy(
    model: &Model,
    eval: &InductiveEval,
    nodes: &[usize],
) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut hits = 0usize;
    for &v in nodes {
        let label = eval.dataset.labels[v].ok_or_else(|| {
            Error::InvalidArgument(format!("eval node {v} has no ground-truth label"))
        })?;
        let (g, x, new_id) = eval.extend_with(v)?;
        let fwd = model.forward(&g, &x)?;
        if argmax(fwd.logits.row(new_id)) == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / nodes.len() as f64)
}
