//! Similarity-based edge pruning, pruning with label discarding, and
//! autoencoder-based outlier node filtering, plus the edge-similarity
//! measurement used to analyze unnoticeability.
//!
//! Defenses only remove: every output graph is a subgraph of the input and
//! label sets can only shrink.

use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, IdMap, NodeOrigin};
use crate::linalg::{cosine, matmul, matmul_backward, Adam, AdamConfig, DenseMatrix};
use crate::models::{Arch, Model};

/// What a defense removed, serializable as JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefenseReport {
    pub edges_removed_count: usize,
    pub edges_removed: Vec<(usize, usize)>,
    pub labels_discarded: Vec<usize>,
    pub nodes_removed: Vec<usize>,
    /// Fraction of the removed items (edges for pruning, nodes for outlier
    /// filtering) that touch trigger-origin nodes; 0 when nothing was removed.
    pub trigger_hit_rate: f64,
}

impl DefenseReport {
    fn for_edges(edges: Vec<(usize, usize)>, origins: &[NodeOrigin]) -> Self {
        let hits = edges
            .iter()
            .filter(|&&(u, v)| origins[u].is_trigger() || origins[v].is_trigger())
            .count();
        let rate = if edges.is_empty() {
            0.0
        } else {
            hits as f64 / edges.len() as f64
        };
        DefenseReport {
            edges_removed_count: edges.len(),
            edges_removed: edges,
            labels_discarded: Vec::new(),
            nodes_removed: Vec::new(),
            trigger_hit_rate: rate,
        }
    }
}

/// Edge-removal rule: drop the lowest fraction, or everything below a cutoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PruneMode {
    /// Remove exactly `⌊p · |E|⌋` lowest-cosine edges, ties broken by edge id.
    Percentile(f64),
    /// Remove every edge whose endpoint cosine is strictly below the cutoff.
    Threshold(f64),
}

/// Cosine similarity between the endpoint feature rows of every edge, in
/// edge order.
pub fn edge_cosines(g: &Graph, x: &DenseMatrix) -> Vec<f64> {
    g.edges()
        .iter()
        .map(|&(u, v)| cosine(x.row(u), x.row(v)))
        .collect()
}

/// Remove low-similarity edges.
pub fn prune(
    g: &Graph,
    x: &DenseMatrix,
    origins: &[NodeOrigin],
    mode: PruneMode,
) -> Result<(Graph, DefenseReport)> {
    if x.rows() != g.num_nodes() || origins.len() != g.num_nodes() {
        return Err(Error::ShapeMismatch(format!(
            "prune: {} nodes, {} feature rows, {} origins",
            g.num_nodes(),
            x.rows(),
            origins.len()
        )));
    }
    let cos = edge_cosines(g, x);
    let removed_ids: Vec<usize> = match mode {
        PruneMode::Percentile(p) => {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!(
                    "prune percentile {p} outside [0, 1]"
                )));
            }
            let count = (p * g.num_edges() as f64).floor() as usize;
            let mut ids: Vec<usize> = (0..g.num_edges()).collect();
            ids.sort_by(|&a, &b| cos[a].partial_cmp(&cos[b]).unwrap().then(a.cmp(&b)));
            let mut chosen = ids[..count].to_vec();
            chosen.sort_unstable();
            chosen
        }
        PruneMode::Threshold(tau) => {
            (0..g.num_edges()).filter(|&i| cos[i] < tau).collect()
        }
    };
    let removed: Vec<(usize, usize)> = removed_ids.iter().map(|&i| g.edges()[i]).collect();
    let mut drop = vec![false; g.num_edges()];
    for &i in &removed_ids {
        drop[i] = true;
    }
    let kept = g
        .edges()
        .iter()
        .enumerate()
        .filter(|&(i, _)| !drop[i])
        .map(|(_, &e)| e);
    let pruned = Graph::from_edges(g.num_nodes(), kept)?;
    Ok((pruned, DefenseReport::for_edges(removed, origins)))
}

/// Prune, then discard the label of every endpoint of a removed edge.
pub fn prune_ld(
    g: &Graph,
    x: &DenseMatrix,
    labels: &[Option<usize>],
    origins: &[NodeOrigin],
    mode: PruneMode,
) -> Result<(Graph, Vec<Option<usize>>, DefenseReport)> {
    let (pruned, mut report) = prune(g, x, origins, mode)?;
    let mut out = labels.to_vec();
    let mut discarded = Vec::new();
    for &(u, v) in &report.edges_removed {
        for node in [u, v] {
            if out[node].is_some() {
                out[node] = None;
                discarded.push(node);
            }
        }
    }
    discarded.sort_unstable();
    discarded.dedup();
    report.labels_discarded = discarded;
    Ok((pruned, out, report))
}

/// Settings for the outlier-detection defense (a pared-down DOMINANT).
#[derive(Debug, Clone, Copy)]
pub struct OdConfig {
    /// Fraction of nodes to remove; must be < 1.
    pub rho: f64,
    /// Weight of the feature term against the structure term.
    pub lambda: f64,
    pub epochs: usize,
    pub hidden: usize,
    pub embed: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for OdConfig {
    fn default() -> Self {
        OdConfig {
            rho: 0.05,
            lambda: 0.5,
            epochs: 100,
            hidden: 32,
            embed: 16,
            lr: 0.01,
            seed: 0,
        }
    }
}

/// Trained graph autoencoder: a two-layer convolutional encoder, a linear
/// feature decoder, and an inner-product structure decoder.
#[derive(Debug, Clone)]
pub struct OdModel {
    pub encoder: Model,
    pub feature_decoder: DenseMatrix,
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Dense `A + I` used as the structure-reconstruction target.
fn structure_target(g: &Graph) -> DenseMatrix {
    let n = g.num_nodes();
    let mut s = DenseMatrix::zeros(n, n);
    for v in 0..n {
        s.set(v, v, 1.0);
        for &u in g.neighbors(v) {
            s.set(v, u, 1.0);
        }
    }
    s
}

/// Train the autoencoder by minimizing
/// `lambda * mean((X - X̂)²) + (1 - lambda) * mean((S - σ(ZZᵀ))²)`.
pub fn od_train(g: &Graph, x: &DenseMatrix, cfg: &OdConfig) -> Result<OdModel> {
    if cfg.epochs == 0 {
        return Err(Error::InvalidArgument("od: epochs must be ≥ 1".into()));
    }
    let n = g.num_nodes();
    let d = x.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut encoder = Model::new(Arch::Gcn, d, cfg.hidden, cfg.embed, &mut rng);
    let scale = (6.0 / (cfg.embed + d) as f64).sqrt();
    let mut decoder = DenseMatrix::from_fn(cfg.embed, d, |_, _| {
        use rand::Rng;
        rng.gen_range(-scale..scale)
    });
    let s = structure_target(g);

    let mut shapes = encoder.param_shapes();
    shapes.push(decoder.shape());
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), &shapes);

    for _ in 0..cfg.epochs {
        let fwd = encoder.forward(g, x)?;
        let z = &fwd.logits;
        let xh = matmul(z, &decoder)?;

        // Feature term: d/dX̂ of lambda * mean((X̂ - X)²).
        let feat_scale = 2.0 * cfg.lambda / (n * d) as f64;
        let mut d_xh = xh.clone();
        d_xh.add_scaled(x, -1.0);
        d_xh.scale(feat_scale);
        let (mut d_z, d_decoder) = matmul_backward(z, &decoder, &d_xh)?;

        // Structure term: σ(ZZᵀ) is symmetric, so the gradient w.r.t. Z of
        // (1 - lambda) * mean((σ(ZZᵀ) - S)²) collapses to 2 M Z with
        // M = scale * (σ - S) ⊙ σ(1 - σ).
        let struct_scale = 2.0 * (1.0 - cfg.lambda) / (n * n) as f64;
        let zt = z.transpose();
        let mut m = matmul(z, &zt)?.map(sigmoid);
        for r in 0..n {
            for c in 0..n {
                let sig = m.get(r, c);
                m.set(r, c, struct_scale * (sig - s.get(r, c)) * sig * (1.0 - sig));
            }
        }
        let d_z_struct = matmul(&m, z)?;
        d_z.add_scaled(&d_z_struct, 2.0);

        let grads = encoder.backward(x, &fwd, &d_z)?;
        let mut grad_refs: Vec<&DenseMatrix> = grads.d_params.iter().collect();
        grad_refs.push(&d_decoder);
        let mut param_refs: Vec<&mut DenseMatrix> = encoder.params_mut().iter_mut().collect();
        param_refs.push(&mut decoder);
        adam.step(&mut param_refs, &grad_refs)?;
    }
    Ok(OdModel {
        encoder,
        feature_decoder: decoder,
    })
}

/// Per-node anomaly score:
/// `lambda * ‖x_v - x̂_v‖₂ + (1 - lambda) * ‖s_v - σ(ZZᵀ)_v‖₂`.
pub fn od_scores(model: &OdModel, g: &Graph, x: &DenseMatrix, lambda: f64) -> Result<Vec<f64>> {
    let n = g.num_nodes();
    let fwd = model.encoder.forward(g, x)?;
    let z = &fwd.logits;
    let xh = matmul(z, &model.feature_decoder)?;
    let s = structure_target(g);
    let zt = z.transpose();
    let rec = matmul(z, &zt)?.map(sigmoid);

    let mut scores = Vec::with_capacity(n);
    for v in 0..n {
        let feat_err = xh
            .row(v)
            .iter()
            .zip(x.row(v))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let struct_err = (0..n)
            .map(|u| {
                let diff = rec.get(v, u) - s.get(v, u);
                diff * diff
            })
            .sum::<f64>()
            .sqrt();
        scores.push(lambda * feat_err + (1.0 - lambda) * struct_err);
    }
    Ok(scores)
}

/// Train the autoencoder and drop the `⌊rho · n⌋` highest-scoring nodes
/// with their incident edges. Returns the filtered graph and the id map
/// from new to old node ids.
pub fn od_filter(
    g: &Graph,
    x: &DenseMatrix,
    labels: &[Option<usize>],
    origins: &[NodeOrigin],
    cfg: &OdConfig,
) -> Result<(Graph, IdMap, DefenseReport)> {
    if cfg.rho >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "od: rho {} must be < 1",
            cfg.rho
        )));
    }
    if cfg.rho < 0.0 {
        return Err(Error::InvalidArgument("od: rho must be ≥ 0".into()));
    }
    let n = g.num_nodes();
    if x.rows() != n || origins.len() != n || labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "od: {n} nodes, {} rows, {} labels, {} origins",
            x.rows(),
            labels.len(),
            origins.len()
        )));
    }
    let count = (cfg.rho * n as f64).floor() as usize;
    if count == 0 {
        let report = DefenseReport {
            edges_removed_count: 0,
            edges_removed: Vec::new(),
            labels_discarded: Vec::new(),
            nodes_removed: Vec::new(),
            trigger_hit_rate: 0.0,
        };
        return Ok((g.clone(), IdMap::identity(n), report));
    }

    let model = od_train(g, x, cfg)?;
    let scores = od_scores(&model, g, x, cfg.lambda)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut removed: Vec<usize> = order[..count].to_vec();
    removed.sort_unstable();

    let mut keep_mask = vec![true; n];
    for &v in &removed {
        keep_mask[v] = false;
    }
    let kept: Vec<usize> = (0..n).filter(|&v| keep_mask[v]).collect();
    let (filtered, idmap) = g.induced_subgraph(&kept)?;

    let edges_removed: Vec<(usize, usize)> = g
        .edges()
        .iter()
        .copied()
        .filter(|&(u, v)| !keep_mask[u] || !keep_mask[v])
        .collect();
    let labels_discarded: Vec<usize> = removed
        .iter()
        .copied()
        .filter(|&v| labels[v].is_some())
        .collect();
    let hits = removed.iter().filter(|&&v| origins[v].is_trigger()).count();
    let report = DefenseReport {
        edges_removed_count: edges_removed.len(),
        edges_removed,
        labels_discarded,
        trigger_hit_rate: hits as f64 / removed.len() as f64,
        nodes_removed: removed,
    };
    Ok((filtered, idmap, report))
}

/// Endpoint cosines grouped by edge provenance.
#[derive(Debug, Clone, Default)]
pub struct EdgeSimilarities {
    /// Both endpoints original.
    pub clean: Vec<f64>,
    /// One original endpoint, one trigger endpoint.
    pub connection: Vec<f64>,
    /// Both endpoints trigger nodes.
    pub internal: Vec<f64>,
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

impl EdgeSimilarities {
    pub fn clean_mean(&self) -> Option<f64> {
        mean(&self.clean)
    }

    pub fn connection_mean(&self) -> Option<f64> {
        mean(&self.connection)
    }

    pub fn internal_mean(&self) -> Option<f64> {
        mean(&self.internal)
    }
}

/// Split every edge's endpoint cosine by whether the edge touches trigger
/// nodes.
pub fn edge_similarities(g: &Graph, x: &DenseMatrix, origins: &[NodeOrigin]) -> EdgeSimilarities {
    let mut out = EdgeSimilarities::default();
    for &(u, v) in g.edges() {
        let c = cosine(x.row(u), x.row(v));
        match (origins[u].is_trigger(), origins[v].is_trigger()) {
            (false, false) => out.clean.push(c),
            (true, true) => out.internal.push(c),
            _ => out.connection.push(c),
        }
    }
    out
}

/// Uniform histogram over `[-1, 1]` contrasting clean edges with
/// trigger-origin (connection + internal) edges.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityHistogram {
    /// Left edge of each bin; bins share a uniform width.
    pub bin_lo: Vec<f64>,
    pub clean_counts: Vec<usize>,
    pub trigger_counts: Vec<usize>,
}

pub fn similarity_histogram(sims: &EdgeSimilarities, bins: usize) -> SimilarityHistogram {
    assert!(bins > 0, "histogram needs at least one bin");
    let width = 2.0 / bins as f64;
    let index = |c: f64| -> usize {
        let i = ((c + 1.0) / width).floor() as isize;
        i.clamp(0, bins as isize - 1) as usize
    };
    let mut hist = SimilarityHistogram {
        bin_lo: (0..bins).map(|i| -1.0 + i as f64 * width).collect(),
        clean_counts: vec![0; bins],
        trigger_counts: vec![0; bins],
    };
    for &c in &sims.clean {
        hist.clean_counts[index(c)] += 1;
    }
    for &c in sims.connection.iter().chain(&sims.internal) {
        hist.trigger_counts[index(c)] += 1;
    }
    hist
}

/// Write `bin,clean_count,trigger_count` rows with a header line.
pub fn write_histogram_csv(hist: &SimilarityHistogram, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let io = |e| Error::io(path.display().to_string(), e);
    writeln!(file, "bin,clean_count,trigger_count").map_err(io)?;
    for i in 0..hist.bin_lo.len() {
        writeln!(
            file,
            "{},{},{}",
            hist.bin_lo[i], hist.clean_counts[i], hist.trigger_counts[i]
        )
        .map_err(io)?;
    }
    Ok(())
}

/// Serialize a defense report as pretty JSON.
pub fn write_defense_report(report: &DefenseReport, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Config(format!("defense report: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_defense_report(path: &Path) -> Result<DefenseReport> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        line: 0,
        detail: e.to_string(),
    })
}
