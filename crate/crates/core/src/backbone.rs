//! LightGCN-style backbone: symmetric-normalised bipartite propagation,
//! a small BPR trainer, and the layer-feature file format.
//!
//! Node indexing for every operator here is users first (`0..num_users`)
//! followed by items (`num_users..num_users + num_items`).

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::binio::{self, Reader};
use crate::error::{Error, Result};
use crate::graph::InteractionGraph;
use crate::par::{self, Exec};

const FEATURE_MAGIC: &[u8; 4] = b"WSFE";
const FEATURE_VERSION: u32 = 1;

/// Row-major `rows × dim` table of entity embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("embedding dimension must be at least 1".into()));
        }
        if data.len() != rows * dim {
            return Err(Error::Dimension(format!(
                "{} values for a {rows}x{dim} table",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid("non-finite embedding entry".into()));
        }
        Ok(EmbeddingTable { rows, dim, data })
    }

    /// I.i.d. `N(0, std²)` entries from a seeded stream.
    pub fn gaussian(rows: usize, dim: usize, std: f64, seed: u64) -> Result<Self> {
        let normal = Normal::new(0.0, std)
            .map_err(|e| Error::Invalid(format!("bad init std {std}: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * dim).map(|_| normal.sample(&mut rng)).collect();
        Self::new(rows, dim, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Per-entity stack of `L+1` layer vectors: the empirical sub-graph
/// feature distribution of each entity. Stored as `(entity, layer, dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerFeatureSet {
    entities: usize,
    layers: usize,
    dim: usize,
    data: Vec<f64>,
}

impl LayerFeatureSet {
    /// `layers` is `L+1`, the number of vectors per entity.
    pub fn new(entities: usize, layers: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if layers == 0 || dim == 0 {
            return Err(Error::Dimension(format!(
                "feature set needs at least one layer and one dimension (got {layers}, {dim})"
            )));
        }
        if data.len() != entities * layers * dim {
            return Err(Error::Dimension(format!(
                "{} values for {entities} entities x {layers} layers x {dim} dims",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid("non-finite feature entry".into()));
        }
        Ok(LayerFeatureSet {
            entities,
            layers,
            dim,
            data,
        })
    }

    pub fn entities(&self) -> usize {
        self.entities
    }

    /// Number of vectors per entity (`L+1`).
    pub fn layers(&self) -> usize {
        self.layers
    }

    /// Propagation depth `L`.
    pub fn depth(&self) -> usize {
        self.layers - 1
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The `(L+1) × d` block of one entity, row-major by layer.
    pub fn entity(&self, e: usize) -> &[f64] {
        let w = self.layers * self.dim;
        &self.data[e * w..(e + 1) * w]
    }

    pub fn vector(&self, e: usize, layer: usize) -> &[f64] {
        let start = (e * self.layers + layer) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Keeps the first `n` entities (users, under the standard ordering).
    pub fn head(&self, n: usize) -> Result<Self> {
        if n > self.entities {
            return Err(Error::OutOfRange {
                what: "entity count",
                index: n,
                bound: self.entities + 1,
            });
        }
        let w = self.layers * self.dim;
        Self::new(n, self.layers, self.dim, self.data[..n * w].to_vec())
    }

    /// Population standard deviation over every entry.
    pub fn entry_std(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        let n = self.data.len() as f64;
        let mean = self.data.iter().sum::<f64>() / n;
        (self.data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
    }

    /// Average over layers per entity, as an `entities × d` table.
    pub fn mean_layer(&self) -> EmbeddingTable {
        let mut out = vec![0.0; self.entities * self.dim];
        let inv = 1.0 / self.layers as f64;
        for (e, row) in out.chunks_exact_mut(self.dim).enumerate() {
            for l in 0..self.layers {
                for (o, v) in row.iter_mut().zip(self.vector(e, l)) {
                    *o += v;
                }
            }
            row.iter_mut().for_each(|o| *o *= inv);
        }
        EmbeddingTable {
            rows: self.entities,
            dim: self.dim,
            data: out,
        }
    }

    /// Layer-0 vectors, as an `entities × d` table.
    pub fn initial_layer(&self) -> EmbeddingTable {
        let data = (0..self.entities)
            .flat_map(|e| self.vector(e, 0).iter().copied())
            .collect();
        EmbeddingTable {
            rows: self.entities,
            dim: self.dim,
            data,
        }
    }

    /// Serialises to the `WSFE` binary format (32-bit float payload).
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(20 + 4 * self.data.len());
        out.extend_from_slice(FEATURE_MAGIC);
        binio::put_u32(&mut out, FEATURE_VERSION);
        binio::put_u32(&mut out, binio::to_u32(self.entities, "entities")?);
        binio::put_u32(&mut out, binio::to_u32(self.layers, "layers")?);
        binio::put_u32(&mut out, binio::to_u32(self.dim, "dim")?);
        for &x in &self.data {
            binio::put_f32(&mut out, x as f32);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4).ok() != Some(FEATURE_MAGIC.as_slice()) {
            return Err(Error::Format("not a WSFE feature file".into()));
        }
        let version = r.u32()?;
        if version != FEATURE_VERSION {
            return Err(Error::Format(format!("unsupported feature file version {version}")));
        }
        let entities = r.u32()? as usize;
        let layers = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let count = entities
            .checked_mul(layers)
            .and_then(|x| x.checked_mul(dim))
            .ok_or_else(|| Error::Format("feature header overflows".into()))?;
        let payload = r.f32_vec(count)?;
        if r.remaining() != 0 {
            return Err(Error::Format(format!(
                "{} trailing bytes after feature payload",
                r.remaining()
            )));
        }
        Self::new(entities, layers, dim, payload.into_iter().map(f64::from).collect())
    }
}

pub fn export_layer_features(features: &LayerFeatureSet, path: impl AsRef<Path>) -> Result<()> {
    binio::write_all(path.as_ref(), &features.to_bytes()?)
}

pub fn import_layer_features(path: impl AsRef<Path>) -> Result<LayerFeatureSet> {
    LayerFeatureSet::from_bytes(&binio::read_all(path.as_ref())?)
}

/// Symmetric normalised adjacency of the bipartite graph in CSR form.
/// Entry `(u, i)` is `1/sqrt(deg(u)·deg(i))`; isolated nodes have empty rows.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    num_users: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn new(graph: &InteractionGraph) -> Self {
        let nu = graph.num_users();
        let n = nu + graph.num_items();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(2 * graph.num_edges());
        let mut vals = Vec::with_capacity(2 * graph.num_edges());
        row_ptr.push(0);
        for u in 0..nu {
            let du = graph.user_degree(u) as f64;
            for &i in graph.items_of(u) {
                let di = graph.item_degree(i as usize) as f64;
                cols.push(nu as u32 + i);
                vals.push(1.0 / (du * di).sqrt());
            }
            row_ptr.push(cols.len());
        }
        for i in 0..graph.num_items() {
            let di = graph.item_degree(i) as f64;
            for &u in graph.users_of(i) {
                let du = graph.user_degree(u as usize) as f64;
                cols.push(u);
                vals.push(1.0 / (du * di).sqrt());
            }
            row_ptr.push(cols.len());
        }
        NormalizedAdjacency {
            num_users: nu,
            row_ptr,
            cols,
            vals,
        }
    }

    /// Total node count, users plus items.
    pub fn nodes(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    /// Stored entry at `(row, col)`, zero when absent.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        let span = self.row_ptr[row]..self.row_ptr[row + 1];
        match self.cols[span.clone()].binary_search(&(col as u32)) {
            Ok(k) => self.vals[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn row(&self, row: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[row]..self.row_ptr[row + 1];
        self.cols[span.clone()]
            .iter()
            .zip(&self.vals[span])
            .map(|(&c, &v)| (c as usize, v))
    }

    /// `out = Â · x` for a row-major `nodes × dim` matrix `x`.
    pub fn spmm(&self, x: &[f64], dim: usize, out: &mut [f64], exec: Exec) {
        debug_assert_eq!(x.len(), self.nodes() * dim);
        debug_assert_eq!(out.len(), x.len());
        par::for_each_row(out, dim, exec, |r, row| {
            row.fill(0.0);
            for (c, w) in self.row(r) {
                for (o, v) in row.iter_mut().zip(&x[c * dim..(c + 1) * dim]) {
                    *o += w * v;
                }
            }
        });
    }
}

/// Propagates `depth` layers: `v⁽ˡ⁾ = Â v⁽ˡ⁻¹⁾`, with layer 0 copied from
/// `emb`. Covers every user and item row.
pub fn propagate(
    emb: &EmbeddingTable,
    adj: &NormalizedAdjacency,
    depth: usize,
    exec: Exec,
) -> Result<LayerFeatureSet> {
    if emb.rows() != adj.nodes() {
        return Err(Error::Dimension(format!(
            "embedding table has {} rows, adjacency has {} nodes",
            emb.rows(),
            adj.nodes()
        )));
    }
    let (n, d, layers) = (emb.rows(), emb.dim(), depth + 1);
    let mut stack = Vec::with_capacity(layers);
    stack.push(emb.as_slice().to_vec());
    for l in 1..layers {
        let mut next = vec![0.0; n * d];
        adj.spmm(&stack[l - 1], d, &mut next, exec);
        stack.push(next);
    }
    let mut data = vec![0.0; n * layers * d];
    par::for_each_row(&mut data, layers * d, exec, |e, block| {
        for (l, layer) in stack.iter().enumerate() {
            block[l * d..(l + 1) * d].copy_from_slice(&layer[e * d..(e + 1) * d]);
        }
    });
    LayerFeatureSet::new(n, layers, d, data)
}

/// Hyper-parameters for [`train_bpr`].
#[derive(Debug, Clone, PartialEq)]
pub struct BprConfig {
    pub dim: usize,
    pub depth: usize,
    pub epochs: usize,
    pub lr: f64,
    pub reg: f64,
    pub batch_size: usize,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for BprConfig {
    fn default() -> Self {
        BprConfig {
            dim: 64,
            depth: 3,
            epochs: 50,
            lr: 0.01,
            reg: 1e-4,
            batch_size: 2048,
            init_std: 0.1,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub embeddings: EmbeddingTable,
    /// Mean BPR loss (including the L2 term) per epoch.
    pub loss_trace: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for k in 0..params.len() {
            let g = grad[k];
            self.m[k] = Self::BETA1 * self.m[k] + (1.0 - Self::BETA1) * g;
            self.v[k] = Self::BETA2 * self.v[k] + (1.0 - Self::BETA2) * g * g;
            params[k] -= lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + Self::EPS);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `-ln σ(x)` without overflow for large |x|.
fn softplus_neg(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// `out = (1/(L+1)) Σ_l Â^l x`, the LightGCN layer mean.
fn layer_mean(
    adj: &NormalizedAdjacency,
    x: &[f64],
    dim: usize,
    depth: usize,
    scratch: &mut [f64],
    out: &mut [f64],
    exec: Exec,
) {
    out.copy_from_slice(x);
    let mut cur = x.to_vec();
    for _ in 0..depth {
        adj.spmm(&cur, dim, scratch, exec);
        cur.copy_from_slice(scratch);
        out.iter_mut().zip(&cur).for_each(|(o, c)| *o += c);
    }
    let inv = 1.0 / (depth + 1) as f64;
    out.iter_mut().for_each(|o| *o *= inv);
}

/// Trains initial embeddings with BPR on the LightGCN layer-mean score.
///
/// Each epoch visits every observed `(user, item)` edge once in a seeded
/// shuffled order and pairs it with one negative item drawn uniformly from
/// the items the user has not interacted with. Mini-batches are scored on
/// freshly propagated embeddings and the gradient is pushed back through
/// the (symmetric) propagation operator before an Adam step. Propagation
/// rows are independent, so the result does not depend on `exec`.
pub fn train_bpr(graph: &InteractionGraph, cfg: &BprConfig, exec: Exec) -> Result<TrainOutput> {
    if cfg.dim == 0 || cfg.batch_size == 0 {
        return Err(Error::Invalid("dim and batch size must be at least 1".into()));
    }
    let nu = graph.num_users();
    let ni = graph.num_items();
    let n = nu + ni;
    let d = cfg.dim;
    let mut emb = EmbeddingTable::gaussian(n, d, cfg.init_std, cfg.seed)?;
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 {
        return Ok(TrainOutput {
            embeddings: emb,
            loss_trace,
        });
    }

    let adj = NormalizedAdjacency::new(graph);
    // users who interacted with every item have no negatives to sample
    let edges: Vec<(u32, u32)> = graph
        .edges()
        .filter(|&(u, _)| graph.user_degree(u as usize) < ni)
        .collect();
    if edges.is_empty() {
        return Err(Error::Invalid("no trainable (user, item) pairs in graph".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut adam = Adam::new(n * d);
    let mut order: Vec<usize> = (0..edges.len()).collect();
    let mut final_emb = vec![0.0; n * d];
    let mut grad_final = vec![0.0; n * d];
    let mut grad = vec![0.0; n * d];
    let mut scratch = vec![0.0; n * d];
    let mut batch = Vec::with_capacity(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            for &k in chunk {
                let (u, i) = edges[k];
                let seen = graph.items_of(u as usize);
                let j = loop {
                    let j = rng.random_range(0..ni as u32);
                    if seen.binary_search(&j).is_err() {
                        break j;
                    }
                };
                batch.push((u as usize, nu + i as usize, nu + j as usize));
            }

            layer_mean(&adj, emb.as_slice(), d, cfg.depth, &mut scratch, &mut final_emb, exec);
            grad_final.fill(0.0);
            grad.fill(0.0);
            let inv_b = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &(u, i, j) in &batch {
                let fu = &final_emb[u * d..(u + 1) * d];
                let fi = &final_emb[i * d..(i + 1) * d];
                let fj = &final_emb[j * d..(j + 1) * d];
                let x = dot(fu, fi) - dot(fu, fj);
                let e0 = |r: usize| &emb.data[r * d..(r + 1) * d];
                let reg_term =
                    0.5 * cfg.reg * (dot(e0(u), e0(u)) + dot(e0(i), e0(i)) + dot(e0(j), e0(j)));
                batch_loss += softplus_neg(x) + reg_term;
                // d(-ln σ(x))/dx = -σ(-x)
                let coef = -inv_b / (1.0 + x.exp());
                for k in 0..d {
                    let (u_k, i_k, j_k) = (fu[k], fi[k], fj[k]);
                    grad_final[u * d + k] += coef * (i_k - j_k);
                    grad_final[i * d + k] += coef * u_k;
                    grad_final[j * d + k] -= coef * u_k;
                }
                for r in [u, i, j] {
                    for k in 0..d {
                        grad[r * d + k] += cfg.reg * inv_b * emb.data[r * d + k];
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    loss: batch_loss,
                });
            }
            epoch_loss += batch_loss;

            // Â is symmetric, so the adjoint of the layer mean is itself
            layer_mean(&adj, &grad_final, d, cfg.depth, &mut scratch, &mut final_emb, exec);
            grad.iter_mut().zip(&final_emb).for_each(|(g, p)| *g += p);
            adam.update(&mut emb.data, &grad, cfg.lr);
        }
        let mean = epoch_loss / edges.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, loss: mean });
        }
        loss_trace.push(mean);
    }
    if emb.data.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteLoss {
            epoch: cfg.epochs,
            loss: f64::NAN,
        });
    }
    Ok(TrainOutput {
        embeddings: emb,
        loss_trace,
    })
}
