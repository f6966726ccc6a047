//! Synthetic benchmark data: a stochastic block model with block-indicator
//! features plus Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{quantize_f32, Dataset, Graph, Role};
use crate::linalg::DenseMatrix;

#[derive(Debug, Clone, Copy)]
pub struct SbmSpec {
    /// Number of blocks (= classes).
    pub blocks: usize,
    pub n: usize,
    /// Intra-block edge probability.
    pub p_in: f64,
    /// Inter-block edge probability.
    pub p_out: f64,
    /// Feature dimension; must be at least `blocks`.
    pub dim: usize,
    /// Standard deviation of the feature noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SbmSpec {
    fn default() -> Self {
        SbmSpec {
            blocks: 4,
            n: 400,
            p_in: 0.05,
            p_out: 0.005,
            dim: 16,
            noise: 0.1,
            seed: 0,
        }
    }
}

impl SbmSpec {
    fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(Error::Config("sbm: blocks must be ≥ 1".into()));
        }
        if self.n < self.blocks {
            return Err(Error::Config(format!(
                "sbm: n = {} smaller than {} blocks",
                self.n, self.blocks
            )));
        }
        if self.dim < self.blocks {
            return Err(Error::Config(format!(
                "sbm: dim = {} cannot hold a {}-block one-hot signal",
                self.dim, self.blocks
            )));
        }
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("sbm: {name} = {p} outside [0, 1]")));
            }
        }
        if self.noise < 0.0 || !self.noise.is_finite() {
            return Err(Error::Config(format!("sbm: noise = {} invalid", self.noise)));
        }
        Ok(())
    }
}

/// Block of a node: contiguous, near-equal ranges.
pub fn sbm_block(spec: &SbmSpec, v: usize) -> usize {
    v * spec.blocks / spec.n
}

/// Generate the benchmark graph. Every node is labeled with its block;
/// all roles start as [`Role::Unlabeled`] until a split is applied.
/// Features are one-hot block indicators (first `blocks` dims) plus
/// `N(0, noise²)` on every dim, quantized through `f32` so the in-memory
/// values match what a saved bundle reloads.
pub fn generate_sbm(spec: &SbmSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut graph = Graph::new(spec.n);
    for u in 0..spec.n {
        for v in (u + 1)..spec.n {
            let p = if sbm_block(spec, u) == sbm_block(spec, v) {
                spec.p_in
            } else {
                spec.p_out
            };
            if rng.gen_range(0.0..1.0) < p {
                graph.add_edge(u, v)?;
            }
        }
    }
    let normal = Normal::new(0.0, spec.noise)
        .map_err(|e| Error::Config(format!("sbm: bad noise sigma: {e}")))?;
    let features = DenseMatrix::from_fn(spec.n, spec.dim, |r, c| {
        let signal = f64::from(u8::from(c == sbm_block(spec, r)));
        signal + normal.sample(&mut rng)
    });
    let dataset = Dataset {
        graph,
        features: quantize_f32(&features),
        labels: (0..spec.n).map(|v| Some(sbm_block(spec, v))).collect(),
        split: vec![Role::Unlabeled; spec.n],
    };
    dataset.validate()?;
    Ok(dataset)
}
