//! Dense and sparse linear-algebra kernels with hand-derived backward passes.
//!
//! Everything here is deterministic: identical inputs produce bit-identical
//! outputs on a fixed platform. Values are stored and accumulated in `f64`;
//! the on-disk formats (see [`crate::graph`]) quantize to `f32`.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "expected {}x{}={} entries, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &DenseMatrix, scale: f64) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    #[must_use]
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Stack a copy of `rows` from `other` onto the bottom of `self`.
    pub fn append_rows(&mut self, other: &DenseMatrix) -> Result<()> {
        if self.cols != other.cols {
            return Err(Error::ShapeMismatch(format!(
                "append_rows: {} cols vs {} cols",
                self.cols, other.cols
            )));
        }
        self.data.extend_from_slice(&other.data);
        self.rows += other.rows;
        Ok(())
    }
}

/// `a * b` with f64 accumulation.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch(format!(
            "matmul: {}x{} * {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = DenseMatrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a.get(i, k);
            if aik == 0.0 {
                continue;
            }
            let brow = b.row(k);
            let orow = out.row_mut(i);
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += aik * bv;
            }
        }
    }
    Ok(out)
}

/// Gradients of `c = a * b` w.r.t. both factors given `d_out = dL/dc`.
pub fn matmul_backward(
    a: &DenseMatrix,
    b: &DenseMatrix,
    d_out: &DenseMatrix,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let d_a = matmul(d_out, &b.transpose())?;
    let d_b = matmul(&a.transpose(), d_out)?;
    Ok((d_a, d_b))
}

pub fn relu_forward(x: &DenseMatrix) -> DenseMatrix {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// `d_x = d_out * relu'(x_pre)`; the subgradient at 0 is 0.
pub fn relu_backward(x_pre: &DenseMatrix, d_out: &DenseMatrix) -> DenseMatrix {
    debug_assert_eq!(x_pre.shape(), d_out.shape());
    DenseMatrix {
        rows: x_pre.rows,
        cols: x_pre.cols,
        data: x_pre
            .data
            .iter()
            .zip(d_out.data.iter())
            .map(|(&p, &d)| if p > 0.0 { d } else { 0.0 })
            .collect(),
    }
}

pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

pub fn leaky_relu_grad(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Sparse CSR matrix with explicit values.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        offsets: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if offsets.len() != rows + 1
            || indices.len() != values.len()
            || offsets.last().copied().unwrap_or(0) != indices.len()
        {
            return Err(Error::ShapeMismatch("inconsistent CSR arrays".into()));
        }
        if indices.iter().any(|&c| c >= cols) {
            return Err(Error::ShapeMismatch("CSR column index out of range".into()));
        }
        Ok(CsrMatrix {
            rows,
            cols,
            offsets,
            indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            rows: n,
            cols: n,
            offsets: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// (column, value) pairs of row `r`.
    pub fn row_iter(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.offsets[r];
        let hi = self.offsets[r + 1];
        self.indices[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row_iter(r) {
                out.set(r, c, v);
            }
        }
        out
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.cols];
        for &c in &self.indices {
            counts[c] += 1;
        }
        let mut offsets = Vec::with_capacity(self.cols + 1);
        offsets.push(0);
        for c in 0..self.cols {
            offsets.push(offsets[c] + counts[c]);
        }
        let mut cursor = offsets.clone();
        let mut indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0f64; self.nnz()];
        for r in 0..self.rows {
            for (c, v) in self.row_iter(r) {
                let slot = cursor[c];
                indices[slot] = r;
                values[slot] = v;
                cursor[c] += 1;
            }
        }
        CsrMatrix {
            rows: self.cols,
            cols: self.rows,
            offsets,
            indices,
            values,
        }
    }
}

/// Sparse-dense product `s * x`.
pub fn spmm(s: &CsrMatrix, x: &DenseMatrix) -> Result<DenseMatrix> {
    if s.cols != x.rows() {
        return Err(Error::ShapeMismatch(format!(
            "spmm: {}x{} * {}x{}",
            s.rows,
            s.cols,
            x.rows(),
            x.cols()
        )));
    }
    let mut out = DenseMatrix::zeros(s.rows, x.cols());
    for r in 0..s.rows {
        for (c, v) in s.row_iter(r) {
            let xrow = x.row(c);
            let orow = out.row_mut(r);
            for (o, &xv) in orow.iter_mut().zip(xrow.iter()) {
                *o += v * xv;
            }
        }
    }
    Ok(out)
}

/// Mean cross-entropy over `mask` rows plus full softmax probabilities.
///
/// Probabilities are computed for every row (callers use them for
/// prediction); the loss averages `-log p[label]` over the masked rows only.
pub fn softmax_xent_forward(
    logits: &DenseMatrix,
    labels: &[Option<usize>],
    mask: &[usize],
) -> Result<(f64, DenseMatrix)> {
    if labels.len() != logits.rows() {
        return Err(Error::ShapeMismatch(format!(
            "labels len {} vs {} logit rows",
            labels.len(),
            logits.rows()
        )));
    }
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let probs = softmax_rows(logits);
    let mut loss = 0.0f64;
    for &r in mask {
        let label = labels.get(r).copied().flatten().ok_or_else(|| {
            Error::InvalidArgument(format!("masked row {r} has no label"))
        })?;
        if label >= logits.cols() {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {} classes",
                logits.cols()
            )));
        }
        loss -= probs.get(r, label).max(f64::MIN_POSITIVE).ln();
    }
    Ok((loss / mask.len() as f64, probs))
}

/// Row-wise softmax with max-subtraction.
pub fn softmax_rows(logits: &DenseMatrix) -> DenseMatrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0f64;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// `dLogits = (probs - onehot) / |mask|` on masked rows, zero elsewhere.
pub fn softmax_xent_backward(
    probs: &DenseMatrix,
    labels: &[Option<usize>],
    mask: &[usize],
) -> Result<DenseMatrix> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let inv = 1.0 / mask.len() as f64;
    let mut d = DenseMatrix::zeros(probs.rows(), probs.cols());
    for &r in mask {
        let label = labels.get(r).copied().flatten().ok_or_else(|| {
            Error::InvalidArgument(format!("masked row {r} has no label"))
        })?;
        for c in 0..probs.cols() {
            let onehot = if c == label { 1.0 } else { 0.0 };
            d.set(r, c, (probs.get(r, c) - onehot) * inv);
        }
    }
    Ok(d)
}

/// Cosine similarity; either vector having zero norm gives 0 (never
/// "most similar").
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b.iter()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

/// Adam optimizer state over a fixed list of parameter matrices.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    first: Vec<DenseMatrix>,
    second: Vec<DenseMatrix>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, shapes: &[(usize, usize)]) -> Self {
        Adam {
            cfg,
            step: 0,
            first: shapes.iter().map(|&(r, c)| DenseMatrix::zeros(r, c)).collect(),
            second: shapes.iter().map(|&(r, c)| DenseMatrix::zeros(r, c)).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update. `params` and `grads` must line up
    /// with the shapes given at construction.
    pub fn step(&mut self, params: &mut [&mut DenseMatrix], grads: &[&DenseMatrix]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam: {} params, {} grads, {} slots",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.cfg.beta1.powf(t);
        let bc2 = 1.0 - self.cfg.beta2.powf(t);
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            if param.shape() != m.shape() || grad.shape() != m.shape() {
                return Err(Error::ShapeMismatch("adam: parameter shape drifted".into()));
            }
            for i in 0..m.data.len() {
                let g = grad.data[i];
                m.data[i] = self.cfg.beta1 * m.data[i] + (1.0 - self.cfg.beta1) * g;
                v.data[i] = self.cfg.beta2 * v.data[i] + (1.0 - self.cfg.beta2) * g * g;
                let m_hat = m.data[i] / bc1;
                let v_hat = v.data[i] / bc2;
                param.data[i] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}

/// Worst entry-wise relative error between `analytic` and a central
/// finite-difference estimate of the gradient of `f` at `at`.
pub fn finite_diff_check(
    mut f: impl FnMut(&DenseMatrix) -> f64,
    at: &DenseMatrix,
    analytic: &DenseMatrix,
    eps: f64,
) -> f64 {
    assert_eq!(at.shape(), analytic.shape());
    let mut worst = 0.0f64;
    let mut probe = at.clone();
    for i in 0..probe.data.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + eps;
        let hi = f(&probe);
        probe.data[i] = orig - eps;
        let lo = f(&probe);
        probe.data[i] = orig;
        let numeric = (hi - lo) / (2.0 * eps);
        let a = analytic.data[i];
        let diff = (numeric - a).abs();
        // Absolute floor so that true-zero gradients do not blow up the ratio.
        let rel = if diff < 1e-9 {
            0.0
        } else {
            diff / numeric.abs().max(a.abs()).max(1e-8)
        };
        worst = worst.max(rel);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn matmul_matches_naive_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_matrix(&mut rng, 5, 4);
        let b = random_matrix(&mut rng, 4, 3);
        let c = matmul(&a, &b).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += a.get(i, k) * b.get(k, j);
                }
                assert!((c.get(i, j) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch_rejected() {
        let a = DenseMatrix::zeros(2, 3);
        let b = DenseMatrix::zeros(2, 3);
        assert!(matmul(&a, &b).is_err());
    }

    #[test]
    fn relu_values() {
        let x = DenseMatrix::from_vec(1, 3, vec![-1.0, 0.0, 2.0]).unwrap();
        let y = relu_forward(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        assert!((leaky_relu(-1.0) + 0.2).abs() < 1e-15);
        assert_eq!(leaky_relu(2.0), 2.0);
    }

    #[test]
    fn spmm_identity_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 4, 3);
        let s = CsrMatrix::identity(4);
        assert_eq!(spmm(&s, &x).unwrap(), x);
    }

    #[test]
    fn spmm_two_node_normalized_adjacency() {
        // A+I normalized for the single-edge graph: all four entries 0.5.
        let s = CsrMatrix::new(
            2,
            2,
            vec![0, 2, 4],
            vec![0, 1, 0, 1],
            vec![0.5, 0.5, 0.5, 0.5],
        )
        .unwrap();
        let x = DenseMatrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = spmm(&s, &x).unwrap();
        for v in y.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn spmm_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // Random sparse 6x6 with ~half the entries filled.
        let mut offsets = vec![0usize];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for _ in 0..6 {
            for c in 0..6 {
                if rng.gen_bool(0.5) {
                    indices.push(c);
                    values.push(rng.gen_range(-2.0..2.0));
                }
            }
            offsets.push(indices.len());
        }
        let s = CsrMatrix::new(6, 6, offsets, indices, values).unwrap();
        let x = random_matrix(&mut rng, 6, 4);
        let sparse = spmm(&s, &x).unwrap();
        let dense = matmul(&s.to_dense(), &x).unwrap();
        for (a, b) in sparse.data().iter().zip(dense.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_hand_values() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert!((cosine(&[1.0, 0.0], &[1.0, 1.0]) - 1.0 / 2.0f64.sqrt()).abs() < 1e-12);
        assert!((cosine(&[2.0, 1.0], &[4.0, 2.0]) - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
        assert!((cosine(&[1.0, 0.0], &[-1.0, 0.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn csr_transpose_matches_dense_transpose() {
        let s = CsrMatrix::new(
            3,
            4,
            vec![0, 2, 3, 5],
            vec![0, 3, 1, 0, 2],
            vec![1.0, 2.0, 3.0, 4.0, 5.0],
        )
        .unwrap();
        let t = s.transpose();
        assert_eq!(t.to_dense(), s.to_dense().transpose());
        assert_eq!(t.transpose().to_dense(), s.to_dense());
    }

    #[test]
    fn xent_uniform_logits_is_ln_k() {
        for k in [2usize, 3, 5] {
            let logits = DenseMatrix::zeros(4, k);
            let labels: Vec<Option<usize>> = (0..4).map(|i| Some(i % k)).collect();
            let mask: Vec<usize> = (0..4).collect();
            let (loss, probs) = softmax_xent_forward(&logits, &labels, &mask).unwrap();
            assert!((loss - (k as f64).ln()).abs() < 1e-12);
            for r in 0..4 {
                let sum: f64 = probs.row(r).iter().sum();
                assert!((sum - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn xent_saturates_to_zero_on_confident_correct_logits() {
        let mut logits = DenseMatrix::zeros(2, 3);
        logits.set(0, 1, 50.0);
        logits.set(1, 2, 50.0);
        let labels = vec![Some(1), Some(2)];
        let (loss, _) = softmax_xent_forward(&logits, &labels, &[0, 1]).unwrap();
        assert!(loss < 1e-10);
    }

    #[test]
    fn xent_matches_per_row_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let logits = random_matrix(&mut rng, 4, 3);
        let labels = vec![Some(0), Some(2), Some(1), Some(0)];
        let mask = vec![0, 1, 3];
        let (loss, _) = softmax_xent_forward(&logits, &labels, &mask).unwrap();
        let mut expect = 0.0;
        for &r in &mask {
            let row = logits.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let p = (row[labels[r].unwrap()] - max).exp() / z;
            expect -= p.ln();
        }
        expect /= mask.len() as f64;
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn xent_empty_mask_rejected() {
        let logits = DenseMatrix::zeros(2, 2);
        let labels = vec![Some(0), Some(1)];
        assert!(matches!(
            softmax_xent_forward(&logits, &labels, &[]),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn xent_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..3 {
            let logits = random_matrix(&mut rng, 4, 3);
            let labels = vec![Some(1), Some(0), Some(2), Some(1)];
            let mask = vec![0, 2, 3];
            let (_, probs) = softmax_xent_forward(&logits, &labels, &mask).unwrap();
            let d = softmax_xent_backward(&probs, &labels, &mask).unwrap();
            let worst = finite_diff_check(
                |l| softmax_xent_forward(l, &labels, &mask).unwrap().0,
                &logits,
                &d,
                1e-4,
            );
            assert!(worst < 1e-4, "worst rel err {worst}");
        }
    }

    #[test]
    fn xent_backward_rows_zero_off_mask_and_sum_zero_on_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let logits = random_matrix(&mut rng, 5, 4);
        let labels: Vec<Option<usize>> = (0..5).map(|i| Some(i % 4)).collect();
        let mask = vec![1, 3];
        let (_, probs) = softmax_xent_forward(&logits, &labels, &mask).unwrap();
        let d = softmax_xent_backward(&probs, &labels, &mask).unwrap();
        for r in 0..5 {
            let sum: f64 = d.row(r).iter().sum();
            if mask.contains(&r) {
                assert!(sum.abs() < 1e-10, "softmax identity violated: {sum}");
            } else {
                assert!(d.row(r).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn adam_zero_grad_with_fresh_state_leaves_params_unchanged() {
        let mut p = DenseMatrix::from_vec(2, 2, vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let orig = p.clone();
        let g = DenseMatrix::zeros(2, 2);
        let mut adam = Adam::new(AdamConfig::default(), &[(2, 2)]);
        adam.step(&mut [&mut p], &[&g]).unwrap();
        assert_eq!(p, orig);
    }

    #[test]
    fn adam_constant_grad_moves_against_sign() {
        let mut p = DenseMatrix::zeros(1, 2);
        let g = DenseMatrix::from_vec(1, 2, vec![1.0, -1.0]).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), &[(1, 2)]);
        for _ in 0..50 {
            adam.step(&mut [&mut p], &[&g]).unwrap();
        }
        assert!(p.get(0, 0) < -0.1);
        assert!(p.get(0, 1) > 0.1);
    }

    #[test]
    fn adam_single_step_matches_hand_computed_update() {
        // lr=0.01, g=1: m_hat = 1, v_hat = 1, delta = -lr / (1 + eps).
        let mut p = DenseMatrix::zeros(1, 1);
        let g = DenseMatrix::from_vec(1, 1, vec![1.0]).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), &[(1, 1)]);
        adam.step(&mut [&mut p], &[&g]).unwrap();
        let expected = -0.01 / (1.0 + 1e-8);
        assert!((p.get(0, 0) - expected).abs() < 1e-15);
    }

    #[test]
    fn finite_diff_check_accepts_exact_gradient() {
        // f(x) = sum of squares; grad = 2x.
        let at = DenseMatrix::from_vec(2, 2, vec![0.3, -0.7, 1.1, 0.0]).unwrap();
        let grad = at.map(|v| 2.0 * v);
        let worst = finite_diff_check(
            |m| m.data().iter().map(|v| v * v).sum(),
            &at,
            &grad,
            1e-4,
        );
        assert!(worst < 1e-6);
    }
}
