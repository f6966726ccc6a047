//! The multi-category trigger pool: candidate scoring by attachment
//! probability shift, threshold filtering, target-category assignment, and
//! per-category ranking.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attacher::{plan_links, Attached, LinkRule};
use crate::error::{Error, Result};
use crate::graph::{read_feature_matrix, write_feature_matrix, Graph};
use crate::linalg::{softmax_rows, DenseMatrix};
use crate::models::Model;
use crate::sampling::CandidateSubgraph;

/// One trigger: frozen structure, trainable feature rows, and the category
/// assignment derived from its probability-shift vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgraphTrigger {
    /// Source-graph node ids the candidate was sampled from (provenance).
    pub source_nodes: Vec<usize>,
    /// Local index pairs; frozen after construction.
    pub internal_edges: Vec<(usize, usize)>,
    /// Trainable feature rows, one per trigger node.
    pub features: DenseMatrix,
    /// Mean probability shift per category.
    pub aps: Vec<f64>,
    /// `argmax(aps)`; fixed at construction.
    pub target_category: usize,
    /// `max(aps)`; the ranking key.
    pub score: f64,
}

impl SubgraphTrigger {
    pub fn size(&self) -> usize {
        self.features.rows()
    }
}

/// Per-category ranked lists of triggers.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerPool {
    categories: Vec<Vec<SubgraphTrigger>>,
    n_pool: usize,
}

impl TriggerPool {
    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn n_pool(&self) -> usize {
        self.n_pool
    }

    pub fn category(&self, k: usize) -> &[SubgraphTrigger] {
        &self.categories[k]
    }

    pub fn trigger(&self, k: usize, j: usize) -> &SubgraphTrigger {
        &self.categories[k][j]
    }

    pub fn trigger_mut(&mut self, k: usize, j: usize) -> &mut SubgraphTrigger {
        &mut self.categories[k][j]
    }

    /// Categories that have at least one trigger.
    pub fn covered_categories(&self) -> Vec<usize> {
        (0..self.categories.len())
            .filter(|&k| !self.categories[k].is_empty())
            .collect()
    }

    /// Categories with no surviving trigger.
    pub fn uncovered_categories(&self) -> Vec<usize> {
        (0..self.categories.len())
            .filter(|&k| self.categories[k].is_empty())
            .collect()
    }

    pub fn num_triggers(&self) -> usize {
        self.categories.iter().map(|c| c.len()).sum()
    }

    /// `(category, index)` pairs in deterministic order.
    pub fn trigger_ids(&self) -> Vec<(usize, usize)> {
        let mut ids = Vec::with_capacity(self.num_triggers());
        for (k, list) in self.categories.iter().enumerate() {
            for j in 0..list.len() {
                ids.push((k, j));
            }
        }
        ids
    }

    /// Mutable borrows of every trigger's feature matrix, in
    /// [`trigger_ids`](Self::trigger_ids) order.
    pub fn features_mut(&mut self) -> Vec<&mut crate::linalg::DenseMatrix> {
        self.categories
            .iter_mut()
            .flatten()
            .map(|t| &mut t.features)
            .collect()
    }
}

/// Mean softmax-probability shift over `poisoned` nodes caused by
/// attaching `candidate` (via the similarity link rule) to every one of
/// them at once.
pub fn compute_aps(
    model: &Model,
    graph: &Graph,
    features: &DenseMatrix,
    candidate: &CandidateSubgraph,
    poisoned: &[usize],
    link: LinkRule,
) -> Result<Vec<f64>> {
    if poisoned.is_empty() {
        return Err(Error::EmptyPoisonedSet);
    }
    let clean = softmax_rows(&model.forward(graph, features)?.logits);

    let mut att = Attached::new(graph.clone(), features.clone());
    for &host in poisoned {
        let (connect_to, scores) = plan_links(&candidate.features, features.row(host), link);
        att.attach_instance(
            &candidate.features,
            &candidate.internal_edges,
            host,
            0,
            0,
            connect_to,
            scores,
        )?;
    }
    let shifted = softmax_rows(&model.forward(&att.graph, &att.features)?.logits);

    let k = clean.cols();
    let inv = 1.0 / poisoned.len() as f64;
    let mut aps = vec![0.0f64; k];
    for &v in poisoned {
        for c in 0..k {
            aps[c] += (shifted.get(v, c) - clean.get(v, c)) * inv;
        }
    }
    Ok(aps)
}

/// Keep candidates whose best shift clears `threshold`, assigning each its
/// argmax category (lowest index on ties).
pub fn filter_and_assign(
    scored: Vec<(CandidateSubgraph, Vec<f64>)>,
    threshold: f64,
) -> Vec<SubgraphTrigger> {
    let mut out = Vec::new();
    for (cand, aps) in scored {
        let (mut best_cat, mut best) = (0usize, f64::NEG_INFINITY);
        for (c, &v) in aps.iter().enumerate() {
            if v > best {
                best = v;
                best_cat = c;
            }
        }
        if best > threshold {
            out.push(SubgraphTrigger {
                source_nodes: cand.nodes,
                internal_edges: cand.internal_edges,
                features: cand.features,
                aps,
                target_category: best_cat,
                score: best,
            });
        }
    }
    out
}

/// Rank survivors per category and keep the top `n_pool` of each.
/// Categories can end up empty; callers decide whether uncovered
/// categories are fatal.
pub fn build_pool(
    triggers: Vec<SubgraphTrigger>,
    n_pool: usize,
    num_categories: usize,
) -> TriggerPool {
    let mut categories: Vec<Vec<SubgraphTrigger>> = vec![Vec::new(); num_categories];
    for t in triggers {
        categories[t.target_category].push(t);
    }
    for list in &mut categories {
        // Stable sort: equal scores keep their candidate order.
        list.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
        list.truncate(n_pool);
    }
    TriggerPool {
        categories,
        n_pool,
    }
}

/// Knobs for pool construction.
#[derive(Debug, Clone, Copy)]
pub struct PoolConfig {
    pub n_candidates: usize,
    pub trigger_size: usize,
    pub n_pool: usize,
    pub aps_threshold: f64,
    pub tau_a: f64,
    pub seed: u64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            n_candidates: 300,
            trigger_size: 5,
            n_pool: 40,
            aps_threshold: 0.2,
            tau_a: 0.2,
            seed: 0,
        }
    }
}

/// Sample candidates around unlabeled centers, score each by probability
/// shift, filter, and rank into a pool.
pub fn build_trigger_pool(
    model: &Model,
    graph: &Graph,
    features: &DenseMatrix,
    unlabeled: &[usize],
    poisoned: &[usize],
    num_categories: usize,
    cfg: &PoolConfig,
) -> Result<TriggerPool> {
    let candidates = crate::sampling::sample_candidate_pool(
        graph,
        features,
        unlabeled,
        cfg.n_candidates,
        cfg.trigger_size,
        cfg.seed,
    )?;
    let mut scored = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let aps = compute_aps(
            model,
            graph,
            features,
            &cand,
            poisoned,
            LinkRule::Threshold(cfg.tau_a),
        )?;
        scored.push((cand, aps));
    }
    let survivors = filter_and_assign(scored, cfg.aps_threshold);
    Ok(build_pool(survivors, cfg.n_pool, num_categories))
}

#[derive(Serialize, Deserialize)]
struct PoolManifest {
    n_pool: usize,
    num_categories: usize,
    triggers: Vec<TriggerEntry>,
}

#[derive(Serialize, Deserialize)]
struct TriggerEntry {
    category: usize,
    index: usize,
    source_nodes: Vec<usize>,
    internal_edges: Vec<(usize, usize)>,
    aps: Vec<f64>,
    score: f64,
    features_file: String,
}

/// Save a pool as `pool.json` plus one feature blob per trigger.
pub fn save_pool(dir: impl AsRef<Path>, pool: &TriggerPool) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut triggers = Vec::with_capacity(pool.num_triggers());
    for (k, j) in pool.trigger_ids() {
        let t = pool.trigger(k, j);
        let features_file = format!("trigger_{k}_{j}.bin");
        write_feature_matrix(dir.join(&features_file), &t.features)?;
        triggers.push(TriggerEntry {
            category: k,
            index: j,
            source_nodes: t.source_nodes.clone(),
            internal_edges: t.internal_edges.clone(),
            aps: t.aps.clone(),
            score: t.score,
            features_file,
        });
    }
    let manifest = PoolManifest {
        n_pool: pool.n_pool,
        num_categories: pool.num_categories(),
        triggers,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Config(format!("pool manifest: {e}")))?;
    let path = dir.join("pool.json");
    fs::write(&path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Load a pool saved by [`save_pool`].
pub fn load_pool(dir: impl AsRef<Path>) -> Result<TriggerPool> {
    let dir = dir.as_ref();
    let path = dir.join("pool.json");
    let json = fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let manifest: PoolManifest = serde_json::from_str(&json).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        line: 0,
        detail: e.to_string(),
    })?;
    let mut categories: Vec<Vec<SubgraphTrigger>> = vec![Vec::new(); manifest.num_categories];
    for entry in manifest.triggers {
        if entry.category >= manifest.num_categories {
            return Err(Error::Parse {
                file: path.display().to_string(),
                line: 0,
                detail: format!("category {} out of range", entry.category),
            });
        }
        let features = read_feature_matrix(dir.join(&entry.features_file))?;
        let list = &mut categories[entry.category];
        if entry.index != list.len() {
            return Err(Error::Parse {
                file: path.display().to_string(),
                line: 0,
                detail: format!(
                    "trigger index {} out of order in category {}",
                    entry.index, entry.category
                ),
            });
        }
        list.push(SubgraphTrigger {
            source_nodes: entry.source_nodes,
            internal_edges: entry.internal_edges,
            features,
            aps: entry.aps.clone(),
            target_category: entry.category,
            score: entry.score,
        });
    }
    Ok(TriggerPool {
        categories,
        n_pool: manifest.n_pool,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::quantize_f32;
    use crate::models::{Arch, Model};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_candidate(size: usize, d: usize, seed: u64) -> CandidateSubgraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CandidateSubgraph {
            center: 0,
            nodes: (0..size).collect(),
            internal_edges: (1..size).map(|i| (0, i)).collect(),
            features: DenseMatrix::from_fn(size, d, |_, _| rng.gen_range(-1.0..1.0)),
        }
    }

    fn toy_graph(seed: u64) -> (Graph, DenseMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new(6);
        for u in 0..6 {
            for v in (u + 1)..6 {
                if rng.gen_bool(0.4) {
                    g.add_edge(u, v).unwrap();
                }
            }
        }
        let x = DenseMatrix::from_fn(6, 4, |_, _| rng.gen_range(-1.0..1.0));
        (g, x)
    }

    #[test]
    fn aps_zero_for_constant_classifier() {
        let (g, x) = toy_graph(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut model = Model::new(Arch::Gcn, 4, 5, 3, &mut rng);
        for p in model.params_mut() {
            p.scale(0.0);
        }
        let cand = toy_candidate(3, 4, 3);
        let aps =
            compute_aps(&model, &g, &x, &cand, &[1, 4], LinkRule::Threshold(0.2)).unwrap();
        for v in aps {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn aps_sums_to_zero() {
        let (g, x) = toy_graph(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = Model::new(Arch::Gcn, 4, 5, 3, &mut rng);
        for seed in 0..10 {
            let cand = toy_candidate(3, 4, seed + 100);
            let aps =
                compute_aps(&model, &g, &x, &cand, &[0, 2, 5], LinkRule::Threshold(0.2)).unwrap();
            let sum: f64 = aps.iter().sum();
            assert!(sum.abs() < 1e-6, "APS sums to {sum}");
        }
    }

    #[test]
    fn aps_rejects_empty_poisoned_set() {
        let (g, x) = toy_graph(6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = Model::new(Arch::Gcn, 4, 5, 3, &mut rng);
        let cand = toy_candidate(3, 4, 8);
        assert!(matches!(
            compute_aps(&model, &g, &x, &cand, &[], LinkRule::Threshold(0.2)),
            Err(Error::EmptyPoisonedSet)
        ));
    }

    #[test]
    fn aps_single_host_matches_manual_attachment() {
        let (g, x) = toy_graph(9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let model = Model::new(Arch::Gcn, 4, 5, 3, &mut rng);
        let cand = toy_candidate(3, 4, 11);
        let host = 2usize;
        let aps =
            compute_aps(&model, &g, &x, &cand, &[host], LinkRule::Threshold(0.2)).unwrap();

        // Independent re-derivation: build the attached graph by hand.
        let (connect_to, _) = plan_links(&cand.features, x.row(host), LinkRule::Threshold(0.2));
        let mut g2 = g.clone();
        let new_ids: Vec<usize> = g2.add_nodes(3).collect();
        for &(a, b) in &cand.internal_edges {
            g2.add_edge(new_ids[a], new_ids[b]).unwrap();
        }
        for &local in &connect_to {
            g2.add_edge(host, new_ids[local]).unwrap();
        }
        let mut x2 = x.clone();
        x2.append_rows(&cand.features).unwrap();
        let before = softmax_rows(&model.forward(&g, &x).unwrap().logits);
        let after = softmax_rows(&model.forward(&g2, &x2).unwrap().logits);
        for c in 0..3 {
            let expect = after.get(host, c) - before.get(host, c);
            assert!((aps[c] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn filter_threshold_and_argmax() {
        let cand = |seed| toy_candidate(2, 3, seed);
        let scored = vec![
            (cand(0), vec![0.19, 0.10, -0.29]),
            (cand(1), vec![0.50, -0.20, -0.30]),
            (cand(2), vec![-0.10, 0.25, -0.15]),
        ];
        let kept = filter_and_assign(scored, 0.2);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].target_category, 0);
        assert!((kept[0].score - 0.5).abs() < 1e-12);
        assert_eq!(kept[1].target_category, 1);
    }

    #[test]
    fn filter_matches_brute_force_on_random_aps() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut scored = Vec::new();
        for i in 0..50 {
            // Random zero-sum 4-vector.
            let mut aps: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let mean: f64 = aps.iter().sum::<f64>() / 4.0;
            for v in &mut aps {
                *v -= mean;
            }
            scored.push((toy_candidate(2, 3, i), aps));
        }
        let expected: Vec<(usize, f64)> = scored
            .iter()
            .filter_map(|(_, aps)| {
                let best = aps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if best > 0.2 {
                    let cat = aps.iter().position(|&v| v == best).unwrap();
                    Some((cat, best))
                } else {
                    None
                }
            })
            .collect();
        let kept = filter_and_assign(scored, 0.2);
        let got: Vec<(usize, f64)> = kept.iter().map(|t| (t.target_category, t.score)).collect();
        assert_eq!(got, expected);
    }

    fn survivor(category: usize, score: f64, seed: u64) -> SubgraphTrigger {
        let c = toy_candidate(2, 3, seed);
        SubgraphTrigger {
            source_nodes: c.nodes,
            internal_edges: c.internal_edges,
            features: c.features,
            aps: vec![score, -score],
            target_category: category,
            score,
        }
    }

    #[test]
    fn pool_keeps_top_n_sorted() {
        let mut triggers = Vec::new();
        for i in 0..100 {
            triggers.push(survivor(0, 0.2 + (i as f64) * 0.001, i as u64));
        }
        let pool = build_pool(triggers, 40, 2);
        assert_eq!(pool.category(0).len(), 40);
        assert_eq!(pool.category(1).len(), 0);
        assert_eq!(pool.uncovered_categories(), vec![1]);
        assert_eq!(pool.covered_categories(), vec![0]);
        let scores: Vec<f64> = pool.category(0).iter().map(|t| t.score).collect();
        for w in scores.windows(2) {
            assert!(w[0] >= w[1]);
        }
        // Top of the list is the global maximum.
        assert!((scores[0] - 0.299).abs() < 1e-12);
    }

    #[test]
    fn pool_ranking_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut triggers = Vec::new();
        for i in 0..30 {
            triggers.push(survivor(i % 3, 0.2 + rng.gen::<f64>(), i as u64));
        }
        let oracle: Vec<Vec<f64>> = (0..3)
            .map(|k| {
                let mut s: Vec<f64> = triggers
                    .iter()
                    .filter(|t| t.target_category == k)
                    .map(|t| t.score)
                    .collect();
                s.sort_by(|a, b| b.partial_cmp(a).unwrap());
                s.truncate(5);
                s
            })
            .collect();
        let pool = build_pool(triggers, 5, 3);
        for k in 0..3 {
            let got: Vec<f64> = pool.category(k).iter().map(|t| t.score).collect();
            assert_eq!(got, oracle[k]);
        }
    }

    #[test]
    fn pool_checkpoint_round_trip() {
        let mut triggers = Vec::new();
        for i in 0..6 {
            let mut t = survivor(i % 2, 0.3 + i as f64 * 0.01, i as u64);
            t.features = quantize_f32(&t.features);
            triggers.push(t);
        }
        let pool = build_pool(triggers, 4, 3);
        let dir = tempfile::tempdir().unwrap();
        save_pool(dir.path(), &pool).unwrap();
        let back = load_pool(dir.path()).unwrap();
        assert_eq!(back, pool);
    }
}
