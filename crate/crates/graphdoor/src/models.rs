//! Two-layer GCN, mean-aggregator GraphSAGE, and single-head GAT with
//! hand-derived backward passes, plus a shared training loop.
//!
//! Every architecture exposes gradients for its parameters *and* for the
//! input feature matrix; the latter is what lets trigger optimization push
//! loss gradients into trigger feature rows.

use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::{
    leaky_relu, leaky_relu_grad, matmul, matmul_backward, relu_backward, relu_forward,
    softmax_rows, softmax_xent_backward, softmax_xent_forward, spmm, Adam, AdamConfig, CsrMatrix,
    DenseMatrix,
};

/// Network architecture selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arch {
    Gcn,
    Sage,
    Gat,
}

pub const ALL_ARCHS: [Arch; 3] = [Arch::Gcn, Arch::Sage, Arch::Gat];

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Gcn => "gcn",
            Arch::Sage => "sage",
            Arch::Gat => "gat",
        }
    }

    pub fn parse(s: &str) -> Option<Arch> {
        ALL_ARCHS.iter().copied().find(|a| a.as_str() == s)
    }

    fn param_count(self) -> usize {
        match self {
            Arch::Gcn => 2,
            Arch::Sage => 4,
            Arch::Gat => 6,
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A two-layer network of the chosen architecture.
///
/// Parameter layout:
/// * GCN — `[W1 (d×h), W2 (h×K)]`
/// * SAGE — `[W1_self, W1_neigh (d×h), W2_self, W2_neigh (h×K)]`
/// * GAT — `[W1 (d×h), a1_src (h×1), a1_dst (h×1), W2 (h×K), a2_src (K×1), a2_dst (K×1)]`
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: Arch,
    in_dim: usize,
    hidden: usize,
    out_dim: usize,
    params: Vec<DenseMatrix>,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-limit..limit))
}

impl Model {
    pub fn new(
        arch: Arch,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Model {
        let params = match arch {
            Arch::Gcn => vec![
                glorot(rng, in_dim, hidden),
                glorot(rng, hidden, out_dim),
            ],
            Arch::Sage => vec![
                glorot(rng, in_dim, hidden),
                glorot(rng, in_dim, hidden),
                glorot(rng, hidden, out_dim),
                glorot(rng, hidden, out_dim),
            ],
            Arch::Gat => vec![
                glorot(rng, in_dim, hidden),
                glorot(rng, hidden, 1),
                glorot(rng, hidden, 1),
                glorot(rng, hidden, out_dim),
                glorot(rng, out_dim, 1),
                glorot(rng, out_dim, 1),
            ],
        };
        Model {
            arch,
            in_dim,
            hidden,
            out_dim,
            params,
        }
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn params(&self) -> &[DenseMatrix] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [DenseMatrix] {
        &mut self.params
    }

    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.params.iter().map(|p| p.shape()).collect()
    }

    /// Inference-mode forward pass (no dropout).
    pub fn forward(&self, graph: &Graph, x: &DenseMatrix) -> Result<Forward> {
        self.forward_inner(graph, x, None)
    }

    /// Training-mode forward pass: inverted dropout on the hidden layer.
    pub fn forward_train(
        &self,
        graph: &Graph,
        x: &DenseMatrix,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Forward> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout {dropout} outside [0, 1)"
            )));
        }
        if dropout == 0.0 {
            return self.forward_inner(graph, x, None);
        }
        self.forward_inner(graph, x, Some((dropout, rng)))
    }

    fn forward_inner(
        &self,
        graph: &Graph,
        x: &DenseMatrix,
        dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<Forward> {
        if x.rows() != graph.num_nodes() {
            return Err(Error::DimensionMismatch {
                context: "forward".into(),
                detail: format!("{} feature rows for {} nodes", x.rows(), graph.num_nodes()),
            });
        }
        if x.cols() != self.in_dim {
            return Err(Error::DimensionMismatch {
                context: "forward".into(),
                detail: format!("{} feature cols, model expects {}", x.cols(), self.in_dim),
            });
        }
        match self.arch {
            Arch::Gcn => self.gcn_forward(graph, x, dropout),
            Arch::Sage => self.sage_forward(graph, x, dropout),
            Arch::Gat => self.gat_forward(graph, x, dropout),
        }
    }

    fn gcn_forward(
        &self,
        graph: &Graph,
        x: &DenseMatrix,
        dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<Forward> {
        let adj = graph.normalized_adjacency();
        let z1 = spmm(&adj, &matmul(x, &self.params[0])?)?;
        let h = relu_forward(&z1);
        let (h_drop, mask) = apply_dropout(h, dropout);
        let logits = spmm(&adj, &matmul(&h_drop, &self.params[1])?)?;
        Ok(Forward {
            logits,
            cache: Cache::Gcn {
                adj,
                z1,
                h_drop,
                mask,
            },
        })
    }

    fn sage_forward(
        &self,
        graph: &Graph,
        x: &DenseMatrix,
        dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<Forward> {
        let agg = graph.mean_aggregator();
        let m1 = spmm(&agg, x)?;
        let mut z1 = matmul(x, &self.params[0])?;
        z1.add_scaled(&matmul(&m1, &self.params[1])?, 1.0);
        let h = relu_forward(&z1);
        let (h_drop, mask) = apply_dropout(h, dropout);
        let m2 = spmm(&agg, &h_drop)?;
        let mut logits = matmul(&h_drop, &self.params[2])?;
        logits.add_scaled(&matmul(&m2, &self.params[3])?, 1.0);
        Ok(Forward {
            logits,
            cache: Cache::Sage {
                agg,
                m1,
                z1,
                h_drop,
                m2,
                mask,
            },
        })
    }

    fn gat_forward(
        &self,
        graph: &Graph,
        x: &DenseMatrix,
        dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<Forward> {
        let l1 = gat_layer_forward(graph, x, &self.params[0], &self.params[1], &self.params[2]);
        let h = relu_forward(&l1.z);
        let (h_drop, mask) = apply_dropout(h, dropout);
        let l2 = gat_layer_forward(
            graph,
            &h_drop,
            &self.params[3],
            &self.params[4],
            &self.params[5],
        );
        let logits = l2.z.clone();
        Ok(Forward {
            logits,
            cache: Cache::Gat {
                l1,
                h_drop,
                l2,
                mask,
            },
        })
    }

    /// Gradients of the loss w.r.t. parameters and input features, given
    /// `d_logits` and the matching forward cache.
    pub fn backward(
        &self,
        x: &DenseMatrix,
        fwd: &Forward,
        d_logits: &DenseMatrix,
    ) -> Result<Gradients> {
        match (&fwd.cache, self.arch) {
            (
                Cache::Gcn {
                    adj,
                    z1,
                    h_drop,
                    mask,
                },
                Arch::Gcn,
            ) => {
                // logits = A·(H'·W2): A is symmetric, so dBefore = A·dLogits.
                let d_pre2 = spmm(adj, d_logits)?;
                let (d_h_drop, d_w2) = matmul_backward(h_drop, &self.params[1], &d_pre2)?;
                let d_h = undrop(d_h_drop, mask);
                let d_z1 = relu_backward(z1, &d_h);
                let d_pre1 = spmm(adj, &d_z1)?;
                let (d_x, d_w1) = matmul_backward(x, &self.params[0], &d_pre1)?;
                Ok(Gradients {
                    d_params: vec![d_w1, d_w2],
                    d_x,
                })
            }
            (
                Cache::Sage {
                    agg,
                    m1,
                    z1,
                    h_drop,
                    m2,
                    mask,
                },
                Arch::Sage,
            ) => {
                let agg_t = agg.transpose();
                // logits = H'·W2s + (P·H')·W2n
                let (d_h_a, d_w2s) = matmul_backward(h_drop, &self.params[2], d_logits)?;
                let (d_m2, d_w2n) = matmul_backward(m2, &self.params[3], d_logits)?;
                let mut d_h_drop = d_h_a;
                d_h_drop.add_scaled(&spmm(&agg_t, &d_m2)?, 1.0);
                let d_h = undrop(d_h_drop, mask);
                let d_z1 = relu_backward(z1, &d_h);
                // z1 = X·W1s + (P·X)·W1n
                let (d_x_a, d_w1s) = matmul_backward(x, &self.params[0], &d_z1)?;
                let (d_m1, d_w1n) = matmul_backward(m1, &self.params[1], &d_z1)?;
                let mut d_x = d_x_a;
                d_x.add_scaled(&spmm(&agg_t, &d_m1)?, 1.0);
                Ok(Gradients {
                    d_params: vec![d_w1s, d_w1n, d_w2s, d_w2n],
                    d_x,
                })
            }
            (
                Cache::Gat {
                    l1,
                    h_drop,
                    l2,
                    mask,
                },
                Arch::Gat,
            ) => {
                let (d_w2, d_a2s, d_a2d, d_h_drop) = gat_layer_backward(
                    l2,
                    h_drop,
                    &self.params[3],
                    &self.params[4],
                    &self.params[5],
                    d_logits,
                )?;
                let d_h = undrop(d_h_drop, mask);
                let d_z1 = relu_backward(&l1.z, &d_h);
                let (d_w1, d_a1s, d_a1d, d_x) = gat_layer_backward(
                    l1,
                    x,
                    &self.params[0],
                    &self.params[1],
                    &self.params[2],
                    &d_z1,
                )?;
                Ok(Gradients {
                    d_params: vec![d_w1, d_a1s, d_a1d, d_w2, d_a2s, d_a2d],
                    d_x,
                })
            }
            _ => Err(Error::InvalidArgument(
                "forward cache does not match model architecture".into(),
            )),
        }
    }
}

/// Forward-pass result: logits plus the activations backward needs.
pub struct Forward {
    pub logits: DenseMatrix,
    cache: Cache,
}

enum Cache {
    Gcn {
        adj: CsrMatrix,
        z1: DenseMatrix,
        h_drop: DenseMatrix,
        mask: Option<DenseMatrix>,
    },
    Sage {
        agg: CsrMatrix,
        m1: DenseMatrix,
        z1: DenseMatrix,
        h_drop: DenseMatrix,
        m2: DenseMatrix,
        mask: Option<DenseMatrix>,
    },
    Gat {
        l1: GatLayer,
        h_drop: DenseMatrix,
        l2: GatLayer,
        mask: Option<DenseMatrix>,
    },
}

/// Parameter and input gradients from one backward pass.
pub struct Gradients {
    pub d_params: Vec<DenseMatrix>,
    pub d_x: DenseMatrix,
}

fn apply_dropout(
    h: DenseMatrix,
    dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> (DenseMatrix, Option<DenseMatrix>) {
    match dropout {
        None => (h, None),
        Some((p, rng)) => {
            let keep = 1.0 - p;
            let mask = DenseMatrix::from_fn(h.rows(), h.cols(), |_, _| {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            });
            let mut dropped = h;
            for (v, m) in dropped.data_mut().iter_mut().zip(mask.data().iter()) {
                *v *= m;
            }
            (dropped, Some(mask))
        }
    }
}

fn undrop(mut d: DenseMatrix, mask: &Option<DenseMatrix>) -> DenseMatrix {
    if let Some(m) = mask {
        for (v, s) in d.data_mut().iter_mut().zip(m.data().iter()) {
            *v *= s;
        }
    }
    d
}

/// One attention layer's activations: projected features, raw scores, and
/// normalized attention per closed neighborhood `N(v) ∪ {v}`.
struct GatLayer {
    z: DenseMatrix,
    g: DenseMatrix,
    nbhd: Vec<Vec<usize>>,
    pre: Vec<Vec<f64>>,
    alpha: Vec<Vec<f64>>,
}

fn gat_layer_forward(
    graph: &Graph,
    x: &DenseMatrix,
    w: &DenseMatrix,
    a_src: &DenseMatrix,
    a_dst: &DenseMatrix,
) -> GatLayer {
    let n = graph.num_nodes();
    let g = matmul(x, w).expect("projection shapes checked by caller");
    let dim = g.cols();
    let s_src: Vec<f64> = (0..n)
        .map(|v| dot(g.row(v), a_src.data()))
        .collect();
    let s_dst: Vec<f64> = (0..n)
        .map(|v| dot(g.row(v), a_dst.data()))
        .collect();
    let mut z = DenseMatrix::zeros(n, dim);
    let mut nbhd = Vec::with_capacity(n);
    let mut pre = Vec::with_capacity(n);
    let mut alpha = Vec::with_capacity(n);
    for v in 0..n {
        let mut hood: Vec<usize> = graph.neighbors(v).to_vec();
        let pos = hood.binary_search(&v).unwrap_err();
        hood.insert(pos, v);
        let scores: Vec<f64> = hood
            .iter()
            .map(|&u| leaky_relu(s_dst[v] + s_src[u]))
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let weights: Vec<f64> = exps.iter().map(|&e| e / total).collect();
        {
            let zrow = z.row_mut(v);
            for (&u, &a) in hood.iter().zip(weights.iter()) {
                for (zv, &gv) in zrow.iter_mut().zip(g.row(u).iter()) {
                    *zv += a * gv;
                }
            }
        }
        nbhd.push(hood);
        pre.push(hood_pre(&s_dst, &s_src, v, &nbhd[v]));
        alpha.push(weights);
    }
    GatLayer {
        z,
        g,
        nbhd,
        pre,
        alpha,
    }
}

fn hood_pre(s_dst: &[f64], s_src: &[f64], v: usize, hood: &[usize]) -> Vec<f64> {
    hood.iter().map(|&u| s_dst[v] + s_src[u]).collect()
}

#[allow(clippy::type_complexity)]
fn gat_layer_backward(
    layer: &GatLayer,
    x: &DenseMatrix,
    w: &DenseMatrix,
    a_src: &DenseMatrix,
    a_dst: &DenseMatrix,
    d_z: &DenseMatrix,
) -> Result<(DenseMatrix, DenseMatrix, DenseMatrix, DenseMatrix)> {
    let n = layer.g.rows();
    let dim = layer.g.cols();
    let mut d_g = DenseMatrix::zeros(n, dim);
    let mut d_s_src = vec![0.0f64; n];
    let mut d_s_dst = vec![0.0f64; n];
    for v in 0..n {
        let hood = &layer.nbhd[v];
        let alpha = &layer.alpha[v];
        let dz_row = d_z.row(v);
        // Value path: z_v = sum_u alpha_vu g_u.
        for (&u, &a) in hood.iter().zip(alpha.iter()) {
            let grow = d_g.row_mut(u);
            for (gv, &dv) in grow.iter_mut().zip(dz_row.iter()) {
                *gv += a * dv;
            }
        }
        // Attention path through the per-neighborhood softmax.
        let d_alpha: Vec<f64> = hood
            .iter()
            .map(|&u| dot(dz_row, layer.g.row(u)))
            .collect();
        let inner: f64 = alpha.iter().zip(d_alpha.iter()).map(|(a, d)| a * d).sum();
        for ((&u, (&a, &da)), &p) in hood
            .iter()
            .zip(alpha.iter().zip(d_alpha.iter()))
            .zip(layer.pre[v].iter())
        {
            let d_pre = a * (da - inner) * leaky_relu_grad(p);
            d_s_dst[v] += d_pre;
            d_s_src[u] += d_pre;
        }
    }
    // s_src[u] = g_u · a_src, s_dst[v] = g_v · a_dst.
    let mut d_a_src = DenseMatrix::zeros(dim, 1);
    let mut d_a_dst = DenseMatrix::zeros(dim, 1);
    for v in 0..n {
        let grow = layer.g.row(v);
        let drow = d_g.row_mut(v);
        for i in 0..dim {
            drow[i] += d_s_src[v] * a_src.get(i, 0) + d_s_dst[v] * a_dst.get(i, 0);
            d_a_src.data_mut()[i] += d_s_src[v] * grow[i];
            d_a_dst.data_mut()[i] += d_s_dst[v] * grow[i];
        }
    }
    let (d_x, d_w) = matmul_backward(x, w, &d_g)?;
    Ok((d_w, d_a_src, d_a_dst, d_x))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Training-loop settings shared by surrogate and victim models.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            lr: 0.01,
            weight_decay: 5e-4,
            hidden: 64,
            dropout: 0.5,
            seed: 0,
        }
    }
}

/// Per-epoch training loss and validation accuracy.
#[derive(Debug, Clone, Default)]
pub struct TrainCurve {
    pub train_loss: Vec<f64>,
    pub val_acc: Vec<f64>,
}

/// Train a fresh model on `train` node ids, snapshotting the parameters
/// with the best validation accuracy (final parameters if `val` is empty).
pub fn train_model(
    arch: Arch,
    graph: &Graph,
    features: &DenseMatrix,
    labels: &[Option<usize>],
    train: &[usize],
    val: &[usize],
    num_classes: usize,
    cfg: &TrainConfig,
) -> Result<(Model, TrainCurve)> {
    if cfg.epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be at least 1".into()));
    }
    if train.is_empty() {
        return Err(Error::NoLabeledNodes);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::new(arch, features.cols(), cfg.hidden, num_classes, &mut rng);
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), &model.param_shapes());
    let mut curve = TrainCurve::default();
    let mut best: Option<(f64, Vec<DenseMatrix>)> = None;
    for _ in 0..cfg.epochs {
        let fwd = model.forward_train(graph, features, cfg.dropout, &mut rng)?;
        let (loss, probs) = softmax_xent_forward(&fwd.logits, labels, train)?;
        let d_logits = softmax_xent_backward(&probs, labels, train)?;
        let mut grads = model.backward(features, &fwd, &d_logits)?;
        if cfg.weight_decay > 0.0 {
            for (g, p) in grads.d_params.iter_mut().zip(model.params.iter()) {
                g.add_scaled(p, cfg.weight_decay);
            }
        }
        let grad_refs: Vec<&DenseMatrix> = grads.d_params.iter().collect();
        let mut param_refs: Vec<&mut DenseMatrix> = model.params.iter_mut().collect();
        adam.step(&mut param_refs, &grad_refs)?;
        curve.train_loss.push(loss);
        if !val.is_empty() {
            let eval = model.forward(graph, features)?;
            let acc = accuracy(&eval.logits, labels, val)?;
            curve.val_acc.push(acc);
            if best.as_ref().map_or(true, |(b, _)| acc >= *b) {
                best = Some((acc, model.params.clone()));
            }
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok((model, curve))
}

/// Fraction of `mask` rows whose argmax logit equals the label.
pub fn accuracy(logits: &DenseMatrix, labels: &[Option<usize>], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut hits = 0usize;
    for &r in mask {
        let label = labels.get(r).copied().flatten().ok_or_else(|| {
            Error::InvalidArgument(format!("masked row {r} has no label"))
        })?;
        if argmax(logits.row(r)) == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / mask.len() as f64)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Predicted category and probability row for each requested node.
pub fn predict(
    model: &Model,
    graph: &Graph,
    features: &DenseMatrix,
    nodes: &[usize],
) -> Result<(Vec<usize>, DenseMatrix)> {
    let fwd = model.forward(graph, features)?;
    let probs = softmax_rows(&fwd.logits);
    let mut rows = DenseMatrix::zeros(nodes.len(), probs.cols());
    let mut cats = Vec::with_capacity(nodes.len());
    for (i, &v) in nodes.iter().enumerate() {
        rows.row_mut(i).copy_from_slice(probs.row(v));
        cats.push(argmax(probs.row(v)));
    }
    Ok((cats, rows))
}

const MODEL_MAGIC: &[u8; 4] = b"GDMW";

/// Write a model checkpoint: `GDMW` magic, arch tag, shape header, f32
/// weights in parameter order.
pub fn save_model(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);
    w.write_all(MODEL_MAGIC).map_err(io_err)?;
    let tag = model.arch.as_str().as_bytes();
    w.write_all(&[tag.len() as u8]).map_err(io_err)?;
    w.write_all(tag).map_err(io_err)?;
    w.write_all(&(model.params.len() as u32).to_le_bytes())
        .map_err(io_err)?;
    for p in &model.params {
        w.write_all(&(p.rows() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(&(p.cols() as u32).to_le_bytes()).map_err(io_err)?;
    }
    for p in &model.params {
        for &v in p.data() {
            w.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// Read a checkpoint written by [`save_model`].
pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| Error::io(name.clone(), e))?;
    let mut at = 0usize;
    let take = |at: &mut usize, len: usize| -> Result<&[u8]> {
        if *at + len > bytes.len() {
            return Err(Error::UnexpectedEof(name.clone()));
        }
        let s = &bytes[*at..*at + len];
        *at += len;
        Ok(s)
    };
    let magic = take(&mut at, 4)?;
    if magic != MODEL_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(MODEL_MAGIC).into_owned(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let tag_len = take(&mut at, 1)?[0] as usize;
    let tag = String::from_utf8_lossy(take(&mut at, tag_len)?).into_owned();
    let arch = Arch::parse(&tag).ok_or_else(|| Error::Parse {
        file: name.clone(),
        line: 0,
        detail: format!("unknown architecture tag {tag:?}"),
    })?;
    let count = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
    if count != arch.param_count() {
        return Err(Error::Parse {
            file: name.clone(),
            line: 0,
            detail: format!("{tag} expects {} matrices, found {count}", arch.param_count()),
        });
    }
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let r = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
        let c = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
        shapes.push((r, c));
    }
    let mut params = Vec::with_capacity(count);
    for &(r, c) in &shapes {
        let raw = take(&mut at, r * c * 4)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        params.push(DenseMatrix::from_vec(r, c, data)?);
    }
    if at != bytes.len() {
        return Err(Error::Parse {
            file: name,
            line: 0,
            detail: "trailing bytes after weights".into(),
        });
    }
    let (in_dim, hidden) = shapes[0];
    let out_dim = match arch {
        Arch::Gcn => shapes[1].1,
        Arch::Sage => shapes[2].1,
        Arch::Gat => shapes[3].1,
    };
    let model = Model {
        arch,
        in_dim,
        hidden,
        out_dim,
        params,
    };
    model.check_shapes()?;
    Ok(model)
}

impl Model {
    fn check_shapes(&self) -> Result<()> {
        let bad = |detail: String| {
            Err(Error::DimensionMismatch {
                context: "model shapes".into(),
                detail,
            })
        };
        let s = self.param_shapes();
        let (d, h, k) = (self.in_dim, self.hidden, self.out_dim);
        let expect: Vec<(usize, usize)> = match self.arch {
            Arch::Gcn => vec![(d, h), (h, k)],
            Arch::Sage => vec![(d, h), (d, h), (h, k), (h, k)],
            Arch::Gat => vec![(d, h), (h, 1), (h, 1), (h, k), (k, 1), (k, 1)],
        };
        if s != expect {
            return bad(format!("got {s:?}, expected {expect:?}"));
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return bad("non-finite parameter".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::finite_diff_check;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_features(r: &mut ChaCha8Rng, n: usize, d: usize) -> DenseMatrix {
        DenseMatrix::from_fn(n, d, |_, _| r.gen_range(-1.0..1.0))
    }

    fn random_graph(r: &mut ChaCha8Rng, n: usize, p: f64) -> Graph {
        let mut g = Graph::new(n);
        for u in 0..n {
            for v in (u + 1)..n {
                if r.gen_bool(p) {
                    g.add_edge(u, v).unwrap();
                }
            }
        }
        g
    }

    #[test]
    fn gcn_zero_weights_zero_logits() {
        let mut r = rng(1);
        let g = random_graph(&mut r, 5, 0.5);
        let x = random_features(&mut r, 5, 3);
        let mut model = Model::new(Arch::Gcn, 3, 4, 2, &mut r);
        for p in model.params_mut() {
            p.scale(0.0);
        }
        let fwd = model.forward(&g, &x).unwrap();
        assert!(fwd.logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gcn_isolated_node_reduces_to_mlp() {
        let mut r = rng(2);
        let g = Graph::new(1);
        let x = random_features(&mut r, 1, 3);
        let model = Model::new(Arch::Gcn, 3, 4, 2, &mut r);
        let fwd = model.forward(&g, &x).unwrap();
        let h = relu_forward(&matmul(&x, &model.params()[0]).unwrap());
        let expect = matmul(&h, &model.params()[1]).unwrap();
        for (a, b) in fwd.logits.data().iter().zip(expect.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gcn_path_matches_dense_oracle() {
        let mut r = rng(3);
        let g = Graph::from_edges(3, [(0, 1), (1, 2)]).unwrap();
        let x = random_features(&mut r, 3, 4);
        let model = Model::new(Arch::Gcn, 4, 5, 2, &mut r);
        let fwd = model.forward(&g, &x).unwrap();
        let a = g.normalized_adjacency().to_dense();
        let z1 = matmul(&a, &matmul(&x, &model.params()[0]).unwrap()).unwrap();
        let expect = matmul(&a, &matmul(&relu_forward(&z1), &model.params()[1]).unwrap()).unwrap();
        for (got, want) in fwd.logits.data().iter().zip(expect.data().iter()) {
            assert!((got - want).abs() < 1e-10);
        }
    }

    fn loss_for(model: &Model, g: &Graph, x: &DenseMatrix, labels: &[Option<usize>]) -> f64 {
        let mask: Vec<usize> = (0..x.rows()).collect();
        let fwd = model.forward(g, x).unwrap();
        softmax_xent_forward(&fwd.logits, labels, &mask).unwrap().0
    }

    fn check_all_grads(arch: Arch, seed: u64) {
        let mut r = rng(seed);
        let n = 5;
        let g = random_graph(&mut r, n, 0.6);
        let x = random_features(&mut r, n, 3);
        let labels: Vec<Option<usize>> = (0..n).map(|i| Some(i % 2)).collect();
        let mask: Vec<usize> = (0..n).collect();
        let model = Model::new(arch, 3, 4, 2, &mut r);
        let fwd = model.forward(&g, &x).unwrap();
        let (_, probs) = softmax_xent_forward(&fwd.logits, &labels, &mask).unwrap();
        let d_logits = softmax_xent_backward(&probs, &labels, &mask).unwrap();
        let grads = model.backward(&x, &fwd, &d_logits).unwrap();

        let worst_x = finite_diff_check(
            |probe| loss_for(&model, &g, probe, &labels),
            &x,
            &grads.d_x,
            1e-5,
        );
        assert!(worst_x < 1e-4, "{arch} d_x rel err {worst_x}");

        for (i, analytic) in grads.d_params.iter().enumerate() {
            let worst = finite_diff_check(
                |probe| {
                    let mut m = model.clone();
                    m.params[i] = probe.clone();
                    loss_for(&m, &g, &x, &labels)
                },
                &model.params()[i],
                analytic,
                1e-5,
            );
            assert!(worst < 1e-4, "{arch} param {i} rel err {worst}");
        }
    }

    #[test]
    fn gcn_gradients_match_finite_differences() {
        check_all_grads(Arch::Gcn, 10);
    }

    #[test]
    fn sage_gradients_match_finite_differences() {
        check_all_grads(Arch::Sage, 11);
    }

    #[test]
    fn gat_gradients_match_finite_differences() {
        check_all_grads(Arch::Gat, 12);
    }

    #[test]
    fn backward_is_linear_and_zero_on_zero() {
        let mut r = rng(13);
        let g = random_graph(&mut r, 6, 0.5);
        let x = random_features(&mut r, 6, 3);
        let model = Model::new(Arch::Gcn, 3, 4, 2, &mut r);
        let fwd = model.forward(&g, &x).unwrap();
        let zero = DenseMatrix::zeros(6, 2);
        let grads = model.backward(&x, &fwd, &zero).unwrap();
        assert!(grads.d_x.data().iter().all(|&v| v == 0.0));
        let d1 = DenseMatrix::from_fn(6, 2, |i, j| (i + j) as f64 * 0.1 - 0.4);
        let mut d2 = d1.clone();
        d2.scale(2.0);
        let g1 = model.backward(&x, &fwd, &d1).unwrap();
        let g2 = model.backward(&x, &fwd, &d2).unwrap();
        for (a, b) in g1.d_x.data().iter().zip(g2.d_x.data().iter()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sage_isolated_node_ignores_neighbor_weights() {
        let mut r = rng(14);
        let mut g = Graph::from_edges(3, [(0, 1), (1, 2)]).unwrap();
        g.add_nodes(1);
        let x = random_features(&mut r, 4, 3);
        let model = Model::new(Arch::Sage, 3, 4, 2, &mut r);
        let fwd = model.forward(&g, &x).unwrap();
        // Row 3 sees only the self path through both layers.
        let x3 = DenseMatrix::from_vec(1, 3, x.row(3).to_vec()).unwrap();
        let h3 = relu_forward(&matmul(&x3, &model.params()[0]).unwrap());
        let expect = matmul(&h3, &model.params()[2]).unwrap();
        for (a, b) in fwd.logits.row(3).iter().zip(expect.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gat_identical_features_give_uniform_attention() {
        let mut r = rng(15);
        let g = Graph::from_edges(4, [(0, 1), (0, 2), (0, 3)]).unwrap();
        let x = DenseMatrix::from_fn(4, 3, |_, c| 0.3 * (c as f64 + 1.0));
        let model = Model::new(Arch::Gat, 3, 4, 2, &mut r);
        let fwd = model.forward(&g, &x).unwrap();
        match &fwd.cache {
            Cache::Gat { l1, .. } => {
                for weights in &l1.alpha {
                    let uniform = 1.0 / weights.len() as f64;
                    for &a in weights {
                        assert!((a - uniform).abs() < 1e-12);
                    }
                }
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn gat_star_matches_hand_rolled_oracle() {
        let mut r = rng(16);
        let g = Graph::from_edges(4, [(0, 1), (0, 2), (0, 3)]).unwrap();
        let x = random_features(&mut r, 4, 3);
        let model = Model::new(Arch::Gat, 3, 4, 2, &mut r);
        let fwd = model.forward(&g, &x).unwrap();

        // Dense recomputation of both layers.
        let dense_layer = |inp: &DenseMatrix, w: &DenseMatrix, asrc: &DenseMatrix, adst: &DenseMatrix| {
            let gm = matmul(inp, w).unwrap();
            let n = gm.rows();
            let mut out = DenseMatrix::zeros(n, gm.cols());
            for v in 0..n {
                let mut hood: Vec<usize> = g.neighbors(v).to_vec();
                hood.push(v);
                hood.sort_unstable();
                let scores: Vec<f64> = hood
                    .iter()
                    .map(|&u| {
                        leaky_relu(dot(gm.row(v), adst.data()) + dot(gm.row(u), asrc.data()))
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|&s| (s - m).exp()).collect();
                let tot: f64 = exps.iter().sum();
                for (&u, &e) in hood.iter().zip(exps.iter()) {
                    for (o, &gv) in out.row_mut(v).iter_mut().zip(gm.row(u).iter()) {
                        *o += (e / tot) * gv;
                    }
                }
            }
            out
        };
        let z1 = dense_layer(&x, &model.params()[0], &model.params()[1], &model.params()[2]);
        let h = relu_forward(&z1);
        let expect = dense_layer(&h, &model.params()[3], &model.params()[4], &model.params()[5]);
        for (a, b) in fwd.logits.data().iter().zip(expect.data().iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn sage_star_matches_hand_rolled_oracle() {
        let mut r = rng(17);
        let g = Graph::from_edges(4, [(0, 1), (0, 2), (0, 3)]).unwrap();
        let x = random_features(&mut r, 4, 3);
        let model = Model::new(Arch::Sage, 3, 4, 2, &mut r);
        let fwd = model.forward(&g, &x).unwrap();
        let p = g.mean_aggregator().to_dense();
        let mut z1 = matmul(&x, &model.params()[0]).unwrap();
        z1.add_scaled(&matmul(&matmul(&p, &x).unwrap(), &model.params()[1]).unwrap(), 1.0);
        let h = relu_forward(&z1);
        let mut expect = matmul(&h, &model.params()[2]).unwrap();
        expect.add_scaled(&matmul(&matmul(&p, &h).unwrap(), &model.params()[3]).unwrap(), 1.0);
        for (a, b) in fwd.logits.data().iter().zip(expect.data().iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn permutation_equivariance_all_archs() {
        let mut r = rng(18);
        let n = 7;
        let g = random_graph(&mut r, n, 0.45);
        let x = random_features(&mut r, n, 3);
        let perm: Vec<usize> = vec![3, 0, 6, 2, 5, 1, 4];
        let mut g2 = Graph::new(n);
        for &(u, v) in g.edges() {
            g2.add_edge(perm[u], perm[v]).unwrap();
        }
        let mut x2 = DenseMatrix::zeros(n, 3);
        for v in 0..n {
            x2.row_mut(perm[v]).copy_from_slice(x.row(v));
        }
        for arch in ALL_ARCHS {
            let model = Model::new(arch, 3, 4, 2, &mut r);
            let out1 = model.forward(&g, &x).unwrap().logits;
            let out2 = model.forward(&g2, &x2).unwrap().logits;
            for v in 0..n {
                for c in 0..2 {
                    assert!(
                        (out1.get(v, c) - out2.get(perm[v], c)).abs() < 1e-9,
                        "{arch} not equivariant at node {v}"
                    );
                }
            }
        }
    }

    /// Homophilous two-class graph with block features: class = block with
    /// larger mass, and most edges stay within a class.
    fn separable_dataset(n: usize, seed: u64) -> (Graph, DenseMatrix, Vec<Option<usize>>) {
        let mut r = rng(seed);
        let mut g = Graph::new(n);
        let mut x = DenseMatrix::zeros(n, 4);
        let mut labels = Vec::with_capacity(n);
        for v in 0..n {
            let class = v % 2;
            for c in 0..4 {
                let base = if (c < 2) == (class == 0) { 1.0 } else { 0.0 };
                x.set(v, c, base + r.gen_range(-0.1..0.1));
            }
            labels.push(Some(class));
        }
        for u in 0..n {
            for v in (u + 1)..n {
                let p = if u % 2 == v % 2 { 0.2 } else { 0.01 };
                if r.gen_bool(p) {
                    g.add_edge(u, v).unwrap();
                }
            }
        }
        (g, x, labels)
    }

    #[test]
    fn training_fits_separable_data() {
        let (g, x, labels) = separable_dataset(40, 20);
        let train: Vec<usize> = (0..30).collect();
        let val: Vec<usize> = (30..40).collect();
        let cfg = TrainConfig {
            epochs: 150,
            hidden: 16,
            ..Default::default()
        };
        for arch in ALL_ARCHS {
            let (model, _) = train_model(arch, &g, &x, &labels, &train, &val, 2, &cfg).unwrap();
            let fwd = model.forward(&g, &x).unwrap();
            let acc = accuracy(&fwd.logits, &labels, &train).unwrap();
            assert!(acc >= 0.95, "{arch} train accuracy {acc}");
        }
    }

    #[test]
    fn training_rejects_zero_epochs_and_empty_train() {
        let (g, x, labels) = separable_dataset(10, 21);
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(train_model(Arch::Gcn, &g, &x, &labels, &[0], &[], 2, &cfg).is_err());
        let cfg = TrainConfig::default();
        assert!(matches!(
            train_model(Arch::Gcn, &g, &x, &labels, &[], &[], 2, &cfg),
            Err(Error::NoLabeledNodes)
        ));
    }

    #[test]
    fn training_is_deterministic_under_fixed_seed() {
        let (g, x, labels) = separable_dataset(24, 22);
        let train: Vec<usize> = (0..16).collect();
        let val: Vec<usize> = (16..24).collect();
        let cfg = TrainConfig {
            epochs: 30,
            hidden: 8,
            seed: 9,
            ..Default::default()
        };
        let (m1, c1) = train_model(Arch::Gcn, &g, &x, &labels, &train, &val, 2, &cfg).unwrap();
        let (m2, c2) = train_model(Arch::Gcn, &g, &x, &labels, &train, &val, 2, &cfg).unwrap();
        assert_eq!(m1.params(), m2.params());
        assert_eq!(c1.train_loss, c2.train_loss);
    }

    #[test]
    fn dropout_backward_matches_finite_differences() {
        // Freeze a dropout mask by replaying the same RNG stream.
        let mut r = rng(23);
        let g = random_graph(&mut r, 5, 0.6);
        let x = random_features(&mut r, 5, 3);
        let labels: Vec<Option<usize>> = (0..5).map(|i| Some(i % 2)).collect();
        let mask: Vec<usize> = (0..5).collect();
        let model = Model::new(Arch::Gcn, 3, 4, 2, &mut r);
        let mut drop_rng = rng(99);
        let fwd = model.forward_train(&g, &x, 0.4, &mut drop_rng).unwrap();
        let (_, probs) = softmax_xent_forward(&fwd.logits, &labels, &mask).unwrap();
        let d_logits = softmax_xent_backward(&probs, &labels, &mask).unwrap();
        let grads = model.backward(&x, &fwd, &d_logits).unwrap();
        let worst = finite_diff_check(
            |probe| {
                let mut rr = rng(99);
                let f = model.forward_train(&g, probe, 0.4, &mut rr).unwrap();
                softmax_xent_forward(&f.logits, &labels, &mask).unwrap().0
            },
            &x,
            &grads.d_x,
            1e-5,
        );
        assert!(worst < 1e-4, "dropout d_x rel err {worst}");
    }

    #[test]
    fn checkpoint_round_trip_preserves_quantized_weights() {
        let mut r = rng(24);
        for arch in ALL_ARCHS {
            let model = Model::new(arch, 5, 4, 3, &mut r);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("model.bin");
            save_model(&path, &model).unwrap();
            let back = load_model(&path).unwrap();
            assert_eq!(back.arch(), arch);
            assert_eq!(back.param_shapes(), model.param_shapes());
            for (a, b) in back.params().iter().zip(model.params().iter()) {
                for (x, y) in a.data().iter().zip(b.data().iter()) {
                    assert_eq!(*x, *y as f32 as f64);
                }
            }
        }
    }

    #[test]
    fn checkpoint_bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        fs::write(&path, b"XXXX\x03gcn\x00\x00\x00\x00").unwrap();
        assert!(matches!(load_model(&path), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn predict_returns_categories_and_probability_rows() {
        let (g, x, labels) = separable_dataset(20, 25);
        let train: Vec<usize> = (0..20).collect();
        let cfg = TrainConfig {
            epochs: 40,
            hidden: 8,
            dropout: 0.0,
            ..Default::default()
        };
        let (model, _) = train_model(Arch::Gcn, &g, &x, &labels, &train, &[], 2, &cfg).unwrap();
        let (cats, rows) = predict(&model, &g, &x, &[0, 1, 5]).unwrap();
        assert_eq!(cats.len(), 3);
        assert_eq!(rows.rows(), 3);
        for i in 0..3 {
            let sum: f64 = rows.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert_eq!(cats[i], argmax(rows.row(i)));
        }
        // Predictions agree with labels on this separable data.
        assert_eq!(cats[0], labels[0].unwrap());
        assert_eq!(cats[1], labels[1].unwrap());
    }
}
