//! Candidate subgraph sampling (BFS) and representative-node selection
//! (k-means over embeddings).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::DenseMatrix;

/// A small connected (when possible) subgraph captured around a center
/// node, with features copied out of the source graph.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSubgraph {
    /// Global id of the BFS start node; always `nodes[0]`.
    pub center: usize,
    /// Global ids in BFS visit order.
    pub nodes: Vec<usize>,
    /// Local index pairs for every source-graph edge among `nodes`.
    pub internal_edges: Vec<(usize, usize)>,
    /// Feature rows aligned with `nodes`.
    pub features: DenseMatrix,
}

/// BFS from `center`, visiting neighbors in ascending id order, truncated
/// at `size` nodes. If the component runs out early, BFS restarts from the
/// smallest-id unvisited node so the result always has `size` nodes (or
/// every node in the graph, whichever is smaller).
pub fn bfs_sample(
    g: &Graph,
    features: &DenseMatrix,
    center: usize,
    size: usize,
) -> Result<CandidateSubgraph> {
    if size < 1 {
        return Err(Error::InvalidArgument("subgraph size must be ≥ 1".into()));
    }
    if center >= g.num_nodes() {
        return Err(Error::InvalidArgument(format!(
            "center {center} out of range for {} nodes",
            g.num_nodes()
        )));
    }
    let limit = size.min(g.num_nodes());
    let mut visited = vec![false; g.num_nodes()];
    let mut nodes = Vec::with_capacity(limit);
    let mut queue = std::collections::VecDeque::new();
    let mut restart_cursor = 0usize;
    queue.push_back(center);
    visited[center] = true;
    while nodes.len() < limit {
        let v = match queue.pop_front() {
            Some(v) => v,
            None => {
                // Component exhausted: restart from the smallest unvisited id.
                while visited[restart_cursor] {
                    restart_cursor += 1;
                }
                visited[restart_cursor] = true;
                restart_cursor
            }
        };
        nodes.push(v);
        for &u in g.neighbors(v) {
            if !visited[u] {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    let local_of: std::collections::HashMap<usize, usize> = nodes
        .iter()
        .enumerate()
        .map(|(local, &global)| (global, local))
        .collect();
    let mut internal_edges = Vec::new();
    for (i, &v) in nodes.iter().enumerate() {
        for &u in g.neighbors(v) {
            if let Some(&j) = local_of.get(&u) {
                if i < j {
                    internal_edges.push((i, j));
                }
            }
        }
    }
    let mut rows = DenseMatrix::zeros(nodes.len(), features.cols());
    for (i, &v) in nodes.iter().enumerate() {
        rows.row_mut(i).copy_from_slice(features.row(v));
    }
    Ok(CandidateSubgraph {
        center,
        nodes,
        internal_edges,
        features: rows,
    })
}

/// Sample `n_candidates` BFS subgraphs with centers drawn without
/// replacement from `unlabeled` (all of them if fewer are available).
pub fn sample_candidate_pool(
    g: &Graph,
    features: &DenseMatrix,
    unlabeled: &[usize],
    n_candidates: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<CandidateSubgraph>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = unlabeled.to_vec();
    centers.shuffle(&mut rng);
    centers.truncate(n_candidates);
    centers
        .into_iter()
        .map(|c| bfs_sample(g, features, c, size))
        .collect()
}

/// Lloyd's algorithm output.
#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centroids: DenseMatrix,
    pub assignment: Vec<usize>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// K-means with k-means++ seeding. Empty clusters are reseeded to the
/// point farthest from its assigned centroid; iteration stops when the
/// assignment is stable or after `max_iter` rounds.
pub fn kmeans(x: &DenseMatrix, k: usize, seed: u64, max_iter: usize) -> Result<KMeansResult> {
    let n = x.rows();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} outside 1..={n} points"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = x.cols();

    // k-means++ seeding.
    let mut centroids = DenseMatrix::zeros(k, dim);
    let first = rng.gen_range(0..n);
    centroids.row_mut(0).copy_from_slice(x.row(first));
    let mut best_d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = best_d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in best_d2.iter().enumerate() {
                t -= d;
                if t <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(x.row(pick));
        for i in 0..n {
            best_d2[i] = best_d2[i].min(sq_dist(x.row(i), centroids.row(c)));
        }
    }

    // Sentinel so the first assign pass always registers as a change.
    let mut assignment = vec![usize::MAX; n];
    let mut inertia = f64::INFINITY;
    for _ in 0..max_iter {
        // Assign.
        let mut changed = false;
        let mut new_inertia = 0.0f64;
        for i in 0..n {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = sq_dist(x.row(i), centroids.row(c));
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
            new_inertia += best_d;
        }
        debug_assert!(
            new_inertia <= inertia + 1e-9,
            "inertia increased: {inertia} -> {new_inertia}"
        );
        inertia = new_inertia;
        if !changed {
            break;
        }
        // Update.
        let mut sums = DenseMatrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignment[i];
            counts[c] += 1;
            let srow = sums.row_mut(c);
            for (s, &v) in srow.iter_mut().zip(x.row(i).iter()) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                let crow = centroids.row_mut(c);
                for (cv, &s) in crow.iter_mut().zip(sums.row(c).iter()) {
                    *cv = s * inv;
                }
            } else {
                // Reseed an empty cluster to the globally farthest point.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(x.row(a), centroids.row(assignment[a]));
                        let db = sq_dist(x.row(b), centroids.row(assignment[b]));
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                centroids.row_mut(c).copy_from_slice(x.row(far));
                assignment[far] = c;
            }
        }
    }
    // Final inertia against the last centroids.
    inertia = (0..n)
        .map(|i| sq_dist(x.row(i), centroids.row(assignment[i])))
        .sum();
    Ok(KMeansResult {
        centroids,
        assignment,
        inertia,
    })
}

/// Pick `k` representative candidate nodes: k-means over their embedding
/// rows, then per cluster the node nearest its centroid. Duplicate picks
/// are backfilled with the next-nearest unused node, so the result always
/// has exactly `k` distinct members of `candidates`.
pub fn select_poisoned_nodes(
    embeddings: &DenseMatrix,
    candidates: &[usize],
    k: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if candidates.is_empty() || k == 0 || k > candidates.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot select {k} nodes from {} candidates",
            candidates.len()
        )));
    }
    let rows = DenseMatrix::from_fn(candidates.len(), embeddings.cols(), |r, c| {
        embeddings.get(candidates[r], c)
    });
    let km = kmeans(&rows, k, seed, 100)?;
    let mut used = vec![false; candidates.len()];
    let mut picked = Vec::with_capacity(k);
    for c in 0..k {
        // Members of cluster c sorted by distance to its centroid.
        let mut ranked: Vec<(f64, usize)> = (0..candidates.len())
            .filter(|&i| km.assignment[i] == c)
            .map(|i| (sq_dist(rows.row(i), km.centroids.row(c)), i))
            .collect();
        ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        if let Some(&(_, i)) = ranked.iter().find(|&&(_, i)| !used[i]) {
            used[i] = true;
            picked.push(candidates[i]);
        }
    }
    // Backfill if clusters collided or were empty: nearest unused node to
    // any centroid, by (distance, index) order.
    while picked.len() < k {
        let mut ranked: Vec<(f64, usize)> = (0..candidates.len())
            .filter(|&i| !used[i])
            .map(|i| {
                let d = (0..k)
                    .map(|c| sq_dist(rows.row(i), km.centroids.row(c)))
                    .fold(f64::INFINITY, f64::min);
                (d, i)
            })
            .collect();
        ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let (_, i) = ranked[0];
        used[i] = true;
        picked.push(candidates[i]);
    }
    Ok(picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn uniform_features(n: usize) -> DenseMatrix {
        DenseMatrix::from_fn(n, 2, |r, c| (r * 2 + c) as f64)
    }

    #[test]
    fn bfs_star_hub_takes_smallest_leaves() {
        let g = Graph::from_edges(5, [(0, 3), (0, 1), (0, 4), (0, 2)]).unwrap();
        let x = uniform_features(5);
        let s = bfs_sample(&g, &x, 0, 3).unwrap();
        assert_eq!(s.nodes, vec![0, 1, 2]);
        assert_eq!(s.internal_edges, vec![(0, 1), (0, 2)]);
        assert_eq!(s.features.row(1), x.row(1));
    }

    #[test]
    fn bfs_size_one_is_center_only() {
        let g = Graph::from_edges(3, [(0, 1), (1, 2)]).unwrap();
        let x = uniform_features(3);
        let s = bfs_sample(&g, &x, 1, 1).unwrap();
        assert_eq!(s.nodes, vec![1]);
        assert!(s.internal_edges.is_empty());
    }

    #[test]
    fn bfs_path_end_takes_prefix() {
        let g = Graph::from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
        let x = uniform_features(5);
        let s = bfs_sample(&g, &x, 0, 3).unwrap();
        assert_eq!(s.nodes, vec![0, 1, 2]);
        assert_eq!(s.internal_edges, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn bfs_pads_from_smallest_unvisited_when_component_is_small() {
        // Component {3, 4} smaller than requested size; pad restarts at 0.
        let g = Graph::from_edges(5, [(3, 4), (0, 1)]).unwrap();
        let x = uniform_features(5);
        let s = bfs_sample(&g, &x, 3, 4).unwrap();
        assert_eq!(s.nodes, vec![3, 4, 0, 1]);
        assert_eq!(s.internal_edges, vec![(0, 1), (2, 3)]);
    }

    #[test]
    fn bfs_rejects_zero_size() {
        let g = Graph::new(2);
        let x = uniform_features(2);
        assert!(bfs_sample(&g, &x, 0, 0).is_err());
    }

    #[test]
    fn candidate_pool_draws_without_replacement() {
        let g = Graph::from_edges(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]).unwrap();
        let x = uniform_features(6);
        let unlabeled = vec![0, 2, 3, 5];
        let pool = sample_candidate_pool(&g, &x, &unlabeled, 3, 2, 7).unwrap();
        assert_eq!(pool.len(), 3);
        let centers: Vec<usize> = pool.iter().map(|s| s.center).collect();
        let mut dedup = centers.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), 3);
        assert!(centers.iter().all(|c| unlabeled.contains(c)));
        // Deterministic under the seed.
        let again = sample_candidate_pool(&g, &x, &unlabeled, 3, 2, 7).unwrap();
        assert_eq!(pool, again);
    }

    #[test]
    fn kmeans_k_equals_n_reaches_zero_inertia() {
        let x = DenseMatrix::from_vec(3, 2, vec![0.0, 0.0, 5.0, 5.0, -3.0, 1.0]).unwrap();
        let km = kmeans(&x, 3, 1, 50).unwrap();
        assert!(km.inertia < 1e-12);
    }

    #[test]
    fn kmeans_k_one_gives_global_mean() {
        let x = DenseMatrix::from_vec(4, 1, vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let km = kmeans(&x, 1, 2, 50).unwrap();
        assert!((km.centroids.get(0, 0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn kmeans_recovers_two_separated_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut data = Vec::new();
        let mut mean_a = [0.0f64; 2];
        let mut mean_b = [0.0f64; 2];
        for _ in 0..30 {
            let p = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
            mean_a[0] += p[0] / 30.0;
            mean_a[1] += p[1] / 30.0;
            data.extend_from_slice(&p);
        }
        for _ in 0..30 {
            let p = [10.0 + rng.gen_range(-0.5..0.5), 10.0 + rng.gen_range(-0.5..0.5)];
            mean_b[0] += p[0] / 30.0;
            mean_b[1] += p[1] / 30.0;
            data.extend_from_slice(&p);
        }
        let x = DenseMatrix::from_vec(60, 2, data).unwrap();
        let km = kmeans(&x, 2, 3, 100).unwrap();
        let c0 = km.centroids.row(0);
        let c1 = km.centroids.row(1);
        let (low, high) = if c0[0] < c1[0] { (c0, c1) } else { (c1, c0) };
        assert!((low[0] - mean_a[0]).abs() < 0.1 && (low[1] - mean_a[1]).abs() < 0.1);
        assert!((high[0] - mean_b[0]).abs() < 0.1 && (high[1] - mean_b[1]).abs() < 0.1);
    }

    #[test]
    fn select_k_one_picks_node_nearest_global_mean() {
        let emb =
            DenseMatrix::from_vec(4, 1, vec![0.0, 4.0, 5.0, 11.0]).unwrap();
        // Mean = 5; node 2 sits on it.
        let picked = select_poisoned_nodes(&emb, &[0, 1, 2, 3], 1, 0).unwrap();
        assert_eq!(picked, vec![2]);
    }

    #[test]
    fn select_separated_blobs_takes_one_per_blob() {
        let mut data = Vec::new();
        for blob in 0..3 {
            let base = blob as f64 * 20.0;
            for j in 0..4 {
                data.push(base + j as f64 * 0.1);
                data.push(base - j as f64 * 0.1);
            }
        }
        let emb = DenseMatrix::from_vec(12, 2, data).unwrap();
        let candidates: Vec<usize> = (0..12).collect();
        let picked = select_poisoned_nodes(&emb, &candidates, 3, 0).unwrap();
        assert_eq!(picked.len(), 3);
        let mut blobs: Vec<usize> = picked.iter().map(|&p| p / 4).collect();
        blobs.sort_unstable();
        assert_eq!(blobs, vec![0, 1, 2]);
    }

    #[test]
    fn select_respects_candidate_subset() {
        let emb = DenseMatrix::from_fn(10, 2, |r, _| r as f64);
        let candidates = vec![1, 3, 5, 7, 9];
        let picked = select_poisoned_nodes(&emb, &candidates, 4, 1).unwrap();
        assert_eq!(picked.len(), 4);
        assert!(picked.iter().all(|p| candidates.contains(p)));
        let mut dedup = picked.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), 4);
    }

    proptest! {
        #[test]
        fn prop_bfs_deterministic_and_sized(
            seed in 0u64..500,
            center in 0usize..10,
            size in 1usize..12,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut g = Graph::new(10);
            for u in 0..10 {
                for v in (u + 1)..10 {
                    if rng.gen_bool(0.25) {
                        g.add_edge(u, v).unwrap();
                    }
                }
            }
            let x = uniform_features(10);
            let a = bfs_sample(&g, &x, center, size).unwrap();
            let b = bfs_sample(&g, &x, center, size).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.nodes.len(), size.min(10));
            prop_assert_eq!(a.nodes[0], center);
            let mut uniq = a.nodes.clone();
            uniq.sort_unstable();
            uniq.dedup();
            prop_assert_eq!(uniq.len(), a.nodes.len());
        }

        #[test]
        fn prop_select_size_and_subset(
            k in 1usize..8,
            seed in 0u64..100,
        ) {
            let emb = DenseMatrix::from_fn(20, 3, |r, c| ((r * 7 + c * 3) % 13) as f64);
            let candidates: Vec<usize> = (0..20).filter(|v| v % 2 == 0).collect();
            let picked = select_poisoned_nodes(&emb, &candidates, k, seed).unwrap();
            prop_assert_eq!(picked.len(), k);
            prop_assert!(picked.iter().all(|p| candidates.contains(p)));
        }
    }
}
