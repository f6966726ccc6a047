//! The "select then attach" strategy: pick the most feature-similar
//! trigger for a (host, category) pair, then wire it in through
//! similarity-gated edges.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write as _};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeOrigin};
use crate::linalg::{cosine, DenseMatrix};
use crate::pool::TriggerPool;

/// How trigger nodes are wired to the host.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinkRule {
    /// Argmax-similarity node plus every node with cosine strictly above
    /// the threshold.
    Threshold(f64),
    /// Every trigger node (the "link all" arm).
    All,
    /// Only the argmax node (the "link one" arm).
    One,
}

/// How a trigger is chosen from a category list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectRule {
    /// Highest summed-cosine score, ties to the lowest pool index.
    BestScore,
    /// Uniform random member (the "w/o sele" arm).
    Random,
}

/// One realized attachment, as recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttachmentPlan {
    pub host: usize,
    pub category: usize,
    pub pool_index: usize,
    pub connected_local_ids: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Summed cosine between every trigger feature row and the host row.
pub fn trigger_score(trigger_features: &DenseMatrix, host_row: &[f64]) -> f64 {
    (0..trigger_features.rows())
        .map(|r| cosine(trigger_features.row(r), host_row))
        .sum()
}

/// Pick the best-scoring trigger in a category for this host.
pub fn select_trigger(
    pool: &TriggerPool,
    category: usize,
    host_row: &[f64],
) -> Result<(usize, f64)> {
    let list = pool.category(category);
    if list.is_empty() {
        return Err(Error::UncoveredCategories(vec![category]));
    }
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for (j, t) in list.iter().enumerate() {
        let s = trigger_score(&t.features, host_row);
        if s > best_score {
            best_score = s;
            best = j;
        }
    }
    Ok((best, best_score))
}

/// Uniform-random pool index from a category list.
pub fn select_trigger_random(
    pool: &TriggerPool,
    category: usize,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    let list = pool.category(category);
    if list.is_empty() {
        return Err(Error::UncoveredCategories(vec![category]));
    }
    Ok(rng.gen_range(0..list.len()))
}

/// Decide which trigger nodes connect to the host. Returns the local ids
/// (ascending) and the per-node cosine scores. At least one node — the
/// argmax — is always connected.
pub fn plan_links(
    trigger_features: &DenseMatrix,
    host_row: &[f64],
    rule: LinkRule,
) -> (Vec<usize>, Vec<f64>) {
    let scores: Vec<f64> = (0..trigger_features.rows())
        .map(|r| cosine(trigger_features.row(r), host_row))
        .collect();
    let argmax = {
        let mut best = 0usize;
        for (i, &s) in scores.iter().enumerate().skip(1) {
            if s > scores[best] {
                best = i;
            }
        }
        best
    };
    let connect: Vec<usize> = match rule {
        LinkRule::All => (0..scores.len()).collect(),
        LinkRule::One => vec![argmax],
        LinkRule::Threshold(tau) => (0..scores.len())
            .filter(|&i| i == argmax || scores[i] > tau)
            .collect(),
    };
    (connect, scores)
}

/// A graph being poisoned: base graph plus appended trigger instances,
/// with per-node provenance and the plan log.
#[derive(Debug, Clone)]
pub struct Attached {
    pub graph: Graph,
    pub features: DenseMatrix,
    pub origins: Vec<NodeOrigin>,
    pub plans: Vec<AttachmentPlan>,
    /// Global node ids per instance, parallel to `plans`.
    pub instance_nodes: Vec<Vec<usize>>,
}

impl Attached {
    pub fn new(graph: Graph, features: DenseMatrix) -> Self {
        let n = graph.num_nodes();
        Attached {
            graph,
            features,
            origins: vec![NodeOrigin::Original; n],
            plans: Vec::new(),
            instance_nodes: Vec::new(),
        }
    }

    /// Splice one trigger instance in: append its nodes and features, add
    /// its internal edges, and connect `connect_to` locals to `host`.
    /// Returns the instance index.
    #[allow(clippy::too_many_arguments)]
    pub fn attach_instance(
        &mut self,
        trigger_features: &DenseMatrix,
        internal_edges: &[(usize, usize)],
        host: usize,
        category: usize,
        pool_index: usize,
        connect_to: Vec<usize>,
        scores: Vec<f64>,
    ) -> Result<usize> {
        if connect_to.is_empty() {
            return Err(Error::InvalidArgument(
                "attachment must connect at least one trigger node".into(),
            ));
        }
        if host >= self.graph.num_nodes() {
            return Err(Error::InvalidArgument(format!(
                "host {host} out of range for {} nodes",
                self.graph.num_nodes()
            )));
        }
        let size = trigger_features.rows();
        if connect_to.iter().any(|&l| l >= size) {
            return Err(Error::InvalidArgument(
                "connect_to references a node outside the trigger".into(),
            ));
        }
        let instance = self.instance_nodes.len();
        let new_ids: Vec<usize> = self.graph.add_nodes(size).collect();
        for &(a, b) in internal_edges {
            self.graph.add_edge(new_ids[a], new_ids[b])?;
        }
        for &local in &connect_to {
            self.graph.add_edge(host, new_ids[local])?;
        }
        self.features.append_rows(trigger_features)?;
        self.origins.extend(std::iter::repeat_n(
            NodeOrigin::Trigger {
                category,
                pool_index,
                instance,
            },
            size,
        ));
        self.plans.push(AttachmentPlan {
            host,
            category,
            pool_index,
            connected_local_ids: connect_to,
            scores,
        });
        self.instance_nodes.push(new_ids);
        Ok(instance)
    }

    /// Select a trigger from the pool and attach it. Returns the instance
    /// index; the chosen trigger is `plans[i].pool_index`.
    pub fn attach_from_pool(
        &mut self,
        pool: &TriggerPool,
        host: usize,
        category: usize,
        select: SelectRule,
        link: LinkRule,
        rng: &mut ChaCha8Rng,
    ) -> Result<usize> {
        let host_row: Vec<f64> = self.features.row(host).to_vec();
        let pool_index = match select {
            SelectRule::BestScore => select_trigger(pool, category, &host_row)?.0,
            SelectRule::Random => select_trigger_random(pool, category, rng)?,
        };
        let trigger = pool.trigger(category, pool_index);
        let (connect_to, scores) = plan_links(&trigger.features, &host_row, link);
        self.attach_instance(
            &trigger.features,
            &trigger.internal_edges,
            host,
            category,
            pool_index,
            connect_to,
            scores,
        )
    }

    /// Ids of the original (pre-attachment) nodes.
    pub fn original_nodes(&self) -> Vec<usize> {
        (0..self.origins.len())
            .filter(|&v| self.origins[v] == NodeOrigin::Original)
            .collect()
    }
}

/// Single-shot pure wrapper: attach one pool trigger to one host of a
/// clean graph and return the new graph with its plan.
pub fn attach(
    graph: &Graph,
    features: &DenseMatrix,
    pool: &TriggerPool,
    host: usize,
    category: usize,
    tau_a: f64,
) -> Result<(Attached, AttachmentPlan)> {
    let mut att = Attached::new(graph.clone(), features.clone());
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let idx = att.attach_from_pool(
        pool,
        host,
        category,
        SelectRule::BestScore,
        LinkRule::Threshold(tau_a),
        &mut rng,
    )?;
    let plan = att.plans[idx].clone();
    Ok((att, plan))
}

/// Append plans to a JSON-lines manifest file.
pub fn write_manifest(path: impl AsRef<Path>, plans: &[AttachmentPlan]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    for plan in plans {
        let line = serde_json::to_string(plan)
            .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a manifest written by [`write_manifest`].
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<AttachmentPlan>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut plans = Vec::new();
    for (line_no, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let plan: AttachmentPlan = serde_json::from_str(&line).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: line_no + 1,
            detail: e.to_string(),
        })?;
        plans.push(plan);
    }
    Ok(plans)
}
