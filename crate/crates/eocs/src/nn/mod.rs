//! Dependency-light neural engine: GraphSAGE layers, the four-stack parallel
//! graph network with its decision MLP, exact reverse-mode gradients for the
//! binary-cross-entropy objective, and the Adam optimizer.
//!
//! Message passing follows the topology channel's nonzero pattern; because
//! that matrix has a unit diagonal, every node aggregates itself along with
//! its neighbors.

mod adam;
mod checkpoint;

pub use adam::{Adam, TrainConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::features::{FeatureScaling, FeatureSet};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint IO failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format not recognized: {0}")]
    VersionMismatch(String),
}

/// Neighbor-aggregation variants. The aggregate always includes the node
/// itself through the topology channel's self-loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Mean,
    Sum,
    Max,
}

impl Aggregator {
    pub(crate) fn code(self) -> u32 {
        match self {
            Aggregator::Mean => 0,
            Aggregator::Sum => 1,
            Aggregator::Max => 2,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Aggregator::Mean),
            1 => Some(Aggregator::Sum),
            2 => Some(Aggregator::Max),
            _ => None,
        }
    }
}

/// One GraphSAGE layer: ReLU(W . AGG(neighbors)).
#[derive(Debug, Clone, PartialEq)]
pub struct SageLayer {
    /// out_dim x in_dim.
    pub w: Array2<f64>,
    pub aggregator: Aggregator,
}

/// Dense layer of the decision MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// out_dim x in_dim.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Model shape. `mlp_widths` runs input (4dn) through the hidden widths to
/// the output m.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub layers: usize,
    pub mlp_widths: Vec<usize>,
    pub aggregator: Aggregator,
}

impl Architecture {
    /// Standard shape for a system with `n` buses and `m` lines: hidden
    /// dimension d = n unless overridden, three GraphSAGE layers per stack,
    /// and MLP hidden widths on a geometric ladder from 4dn down to m
    /// (three linear layers up to 60 buses, four beyond).
    pub fn for_system(n: usize, m: usize, d: Option<usize>, aggregator: Aggregator) -> Self {
        let d = d.unwrap_or(n);
        let depth = if n <= 60 { 3 } else { 4 };
        Architecture {
            n,
            m,
            d,
            layers: 3,
            mlp_widths: geometric_widths(4 * d * n, m, depth),
            aggregator,
        }
    }

    fn stack_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.layers);
        let mut input = self.n + 1;
        for _ in 0..self.layers {
            dims.push((self.d, input));
            input = self.d;
        }
        dims
    }

    fn validate(&self) -> Result<(), NnError> {
        if self.mlp_widths.first() != Some(&(4 * self.d * self.n)) {
            return Err(NnError::ShapeMismatch(format!(
                "decision network input must be 4dn = {}, got {:?}",
                4 * self.d * self.n,
                self.mlp_widths.first()
            )));
        }
        if self.mlp_widths.last() != Some(&self.m) {
            return Err(NnError::ShapeMismatch(
                "decision network output must equal the line count".into(),
            ));
        }
        if self.layers == 0 || self.mlp_widths.len() < 2 {
            return Err(NnError::ShapeMismatch("empty network".into()));
        }
        Ok(())
    }
}

pub fn geometric_widths(input: usize, output: usize, depth: usize) -> Vec<usize> {
    let ratio = (output as f64 / input as f64).powf(1.0 / depth as f64);
    let mut widths = vec![input];
    for i in 1..depth {
        let w = (input as f64 * ratio.powi(i as i32)).round() as usize;
        widths.push(w.max(output));
    }
    widths.push(output);
    widths
}

/// Four parallel GraphSAGE stacks (one per feature channel) feeding a
/// decision MLP; the frozen feature scaling travels with the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PgnnModel {
    pub arch: Architecture,
    pub stacks: [Vec<SageLayer>; 4],
    pub mlp: Vec<Linear>,
    pub scaling: FeatureScaling,
}

impl PgnnModel {
    /// Glorot-uniform initialization, deterministic for a given seed.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self, NnError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |rows: usize, cols: usize| -> Array2<f64> {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
        };
        let stacks = std::array::from_fn(|_| {
            arch.stack_dims()
                .into_iter()
                .map(|(out, input)| SageLayer {
                    w: glorot(out, input),
                    aggregator: arch.aggregator,
                })
                .collect()
        });
        let mlp = arch
            .mlp_widths
            .windows(2)
            .map(|pair| Linear { w: glorot(pair[1], pair[0]), b: Array1::zeros(pair[1]) })
            .collect();
        Ok(PgnnModel { arch, stacks, mlp, scaling: FeatureScaling::identity() })
    }

    /// Number of weight blocks in the checkpoint (stack matrices plus MLP
    /// weight/bias pairs).
    pub fn weight_block_count(&self) -> usize {
        4 * self.arch.layers + 2 * self.mlp.len()
    }

    pub fn param_count(&self) -> usize {
        let stacks: usize = self.stacks.iter().flatten().map(|l| l.w.len()).sum();
        let mlp: usize = self.mlp.iter().map(|l| l.w.len() + l.b.len()).sum();
        stacks + mlp
    }

    /// Flat view of one parameter, in the fixed block order used by the
    /// checkpoint format. Only intended for tests (finite differences).
    pub fn get_param(&self, mut idx: usize) -> f64 {
        for stack in &self.stacks {
            for layer in stack {
                if idx < layer.w.len() {
                    return layer.w.as_slice().unwrap()[idx];
                }
                idx -= layer.w.len();
            }
        }
        for layer in &self.mlp {
            if idx < layer.w.len() {
                return layer.w.as_slice().unwrap()[idx];
            }
            idx -= layer.w.len();
            if idx < layer.b.len() {
                return layer.b.as_slice().unwrap()[idx];
            }
            idx -= layer.b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut idx: usize, value: f64) {
        for stack in &mut self.stacks {
            for layer in stack {
                if idx < layer.w.len() {
                    layer.w.as_slice_mut().unwrap()[idx] = value;
                    return;
                }
                idx -= layer.w.len();
            }
        }
        for layer in &mut self.mlp {
            if idx < layer.w.len() {
                layer.w.as_slice_mut().unwrap()[idx] = value;
                return;
            }
            idx -= layer.w.len();
            if idx < layer.b.len() {
                layer.b.as_slice_mut().unwrap()[idx] = value;
                return;
            }
            idx -= layer.b.len();
        }
        panic!("parameter index out of range");
    }
}

/// Gradient (or moment) storage congruent with a model's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub stacks: [Vec<Array2<f64>>; 4],
    pub mlp_w: Vec<Array2<f64>>,
    pub mlp_b: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &PgnnModel) -> Self {
        Gradients {
            stacks: std::array::from_fn(|c| {
                model.stacks[c].iter().map(|l| Array2::zeros(l.w.dim())).collect()
            }),
            mlp_w: model.mlp.iter().map(|l| Array2::zeros(l.w.dim())).collect(),
            mlp_b: model.mlp.iter().map(|l| Array1::zeros(l.b.len())).collect(),
        }
    }

    /// Flatten in the checkpoint block order (tests only).
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for stack in &self.stacks {
            for w in stack {
                out.extend(w.iter().copied());
            }
        }
        for (w, b) in self.mlp_w.iter().zip(&self.mlp_b) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }
}

/// Neighbor lists (self-loops included) from the topology channel's nonzero
/// pattern.
pub fn adjacency_from_topology(t: &ArrayView2<f64>) -> Vec<Vec<usize>> {
    let n = t.nrows();
    (0..n)
        .map(|v| (0..n).filter(|&u| t[[v, u]] != 0.0).collect())
        .collect()
}

fn aggregate(
    h: &ArrayView2<f64>,
    adjacency: &[Vec<usize>],
    aggregator: Aggregator,
    argmax: Option<&mut Vec<u32>>,
) -> Array2<f64> {
    let (n, f) = (adjacency.len(), h.ncols());
    let mut out = Array2::zeros((n, f));
    match aggregator {
        Aggregator::Sum | Aggregator::Mean => {
            for (v, neigh) in adjacency.iter().enumerate() {
                let mut row = out.row_mut(v);
                for &u in neigh {
                    row += &h.row(u);
                }
                if aggregator == Aggregator::Mean && !neigh.is_empty() {
                    row /= neigh.len() as f64;
                }
            }
        }
        Aggregator::Max => {
            let slots = argmax.expect("max aggregation needs an argmax buffer");
            slots.clear();
            slots.resize(n * f, 0);
            for (v, neigh) in adjacency.iter().enumerate() {
                for j in 0..f {
                    // ties resolve to the lowest node index by scan order
                    let mut best = f64::NEG_INFINITY;
                    let mut best_u = 0u32;
                    for &u in neigh {
                        let val = h[[u, j]];
                        if val > best {
                            best = val;
                            best_u = u as u32;
                        }
                    }
                    out[[v, j]] = if neigh.is_empty() { 0.0 } else { best };
                    slots[v * f + j] = best_u;
                }
            }
        }
    }
    out
}

fn scatter_aggregate_grad(
    d_agg: &ArrayView2<f64>,
    adjacency: &[Vec<usize>],
    aggregator: Aggregator,
    argmax: Option<&[u32]>,
    d_h: &mut ndarray::ArrayViewMut2<f64>,
) {
    let f = d_agg.ncols();
    match aggregator {
        Aggregator::Sum | Aggregator::Mean => {
            for (v, neigh) in adjacency.iter().enumerate() {
                let scale = match aggregator {
                    Aggregator::Mean if !neigh.is_empty() => 1.0 / neigh.len() as f64,
                    _ => 1.0,
                };
                for &u in neigh {
                    let grow = d_agg.row(v);
                    let mut drow = d_h.row_mut(u);
                    drow.zip_mut_with(&grow, |a, &g| *a += scale * g);
                }
            }
        }
        Aggregator::Max => {
            let slots = argmax.expect("max aggregation backward needs the argmax buffer");
            for (v, neigh) in adjacency.iter().enumerate() {
                if neigh.is_empty() {
                    continue;
                }
                for j in 0..f {
                    d_h[[slots[v * f + j] as usize, j]] += d_agg[[v, j]];
                }
            }
        }
    }
}

/// One GraphSAGE layer applied to a node-feature matrix (rows = nodes).
pub fn sage_forward(
    layer: &SageLayer,
    h: &Array2<f64>,
    adjacency: &[Vec<usize>],
) -> Result<Array2<f64>, NnError> {
    if h.nrows() != adjacency.len() {
        return Err(NnError::ShapeMismatch(format!(
            "{} feature rows for {} nodes",
            h.nrows(),
            adjacency.len()
        )));
    }
    if h.ncols() != layer.w.ncols() {
        return Err(NnError::ShapeMismatch(format!(
            "feature width {} does not match layer input {}",
            h.ncols(),
            layer.w.ncols()
        )));
    }
    let mut scratch = Vec::new();
    let argmax = matches!(layer.aggregator, Aggregator::Max).then_some(&mut scratch);
    let agg = aggregate(&h.view(), adjacency, layer.aggregator, argmax);
    let mut out = agg.dot(&layer.w.t());
    out.mapv_inplace(|v| v.max(0.0));
    Ok(out)
}

/// Forward caches for one batch, consumed by the backward pass.
pub struct BatchCache {
    batch: usize,
    adjacency: Vec<Vec<Vec<usize>>>,
    /// Per stack, per layer: aggregated inputs (batch*n x in_dim).
    stack_agg: [Vec<Array2<f64>>; 4],
    /// Per stack, per layer: post-ReLU outputs.
    stack_out: [Vec<Array2<f64>>; 4],
    /// Per stack, per layer: argmax indices when max-aggregating.
    stack_argmax: [Vec<Vec<u32>>; 4],
    /// MLP activations, starting with the concatenated features.
    mlp_act: Vec<Array2<f64>>,
    /// Scores after the final sigmoid (batch x m).
    pub scores: Array2<f64>,
}

fn stack_channel(fs: &FeatureSet, c: usize) -> &Array2<f64> {
    match c {
        0 => &fs.p,
        1 => &fs.t,
        2 => &fs.d_z,
        _ => &fs.d,
    }
}

/// Batched forward pass. Feature sets may have different topologies; each
/// sample's adjacency comes from its own topology channel.
pub fn forward_batch(model: &PgnnModel, batch: &[&FeatureSet]) -> Result<BatchCache, NnError> {
    let arch = &model.arch;
    let (n, b) = (arch.n, batch.len());
    if b == 0 {
        return Err(NnError::ShapeMismatch("empty batch".into()));
    }
    for fs in batch {
        if fs.bus_count() != n || fs.p.ncols() != n + 1 {
            return Err(NnError::ShapeMismatch(format!(
                "feature set is {}x{}, model expects {}x{}",
                fs.bus_count(),
                fs.p.ncols(),
                n,
                n + 1
            )));
        }
    }
    let adjacency: Vec<Vec<Vec<usize>>> = batch
        .iter()
        .map(|fs| adjacency_from_topology(&fs.t.slice(ndarray::s![.., ..n])))
        .collect();

    let mut stack_agg: [Vec<Array2<f64>>; 4] = std::array::from_fn(|_| Vec::new());
    let mut stack_out: [Vec<Array2<f64>>; 4] = std::array::from_fn(|_| Vec::new());
    let mut stack_argmax: [Vec<Vec<u32>>; 4] = std::array::from_fn(|_| Vec::new());
    let mut features = Array2::zeros((b, 4 * arch.d * n));

    for c in 0..4 {
        // stacked node features for the whole batch: rows s*n..(s+1)*n
        let mut h = Array2::zeros((b * n, n + 1));
        for (s, fs) in batch.iter().enumerate() {
            h.slice_mut(ndarray::s![s * n..(s + 1) * n, ..])
                .assign(stack_channel(fs, c));
        }
        for layer in &model.stacks[c] {
            let f_in = h.ncols();
            let mut agg = Array2::zeros((b * n, f_in));
            let mut argmax_all = Vec::new();
            for (s, adj) in adjacency.iter().enumerate() {
                let mut scratch = Vec::new();
                let slot =
                    matches!(layer.aggregator, Aggregator::Max).then_some(&mut scratch);
                let part =
                    aggregate(&h.slice(ndarray::s![s * n..(s + 1) * n, ..]), adj, layer.aggregator, slot);
                agg.slice_mut(ndarray::s![s * n..(s + 1) * n, ..]).assign(&part);
                argmax_all.extend(scratch);
            }
            let mut out = agg.dot(&layer.w.t());
            out.mapv_inplace(|v| v.max(0.0));
            stack_agg[c].push(agg);
            stack_argmax[c].push(argmax_all);
            h = out.clone();
            stack_out[c].push(out);
        }
        // row-major flatten of each sample's (n x d) block
        for s in 0..b {
            for v in 0..n {
                for j in 0..arch.d {
                    features[[s, c * n * arch.d + v * arch.d + j]] = h[[s * n + v, j]];
                }
            }
        }
    }

    let mut mlp_act = vec![features];
    for (idx, layer) in model.mlp.iter().enumerate() {
        let z = mlp_act.last().unwrap().dot(&layer.w.t()) + &layer.b;
        let a = if idx + 1 == model.mlp.len() {
            z.mapv(|v| 1.0 / (1.0 + (-v).exp()))
        } else {
            z.mapv(|v| v.max(0.0))
        };
        mlp_act.push(a);
    }
    let scores = mlp_act.last().unwrap().clone();
    Ok(BatchCache { batch: b, adjacency, stack_agg, stack_out, stack_argmax, mlp_act, scores })
}

/// Scores for a single instance, in line-index order.
pub fn pgnn_forward(model: &PgnnModel, fs: &FeatureSet) -> Result<Vec<f64>, NnError> {
    let cache = forward_batch(model, &[fs])?;
    Ok(cache.scores.row(0).to_vec())
}

const BCE_CLAMP: f64 = 1e-7;

/// Mean binary cross entropy over lines, scores clamped away from 0 and 1.
pub fn bce_loss(scores: &[f64], labels: &[f64]) -> f64 {
    assert_eq!(scores.len(), labels.len());
    let m = scores.len() as f64;
    scores
        .iter()
        .zip(labels)
        .map(|(&v, &y)| {
            let v = v.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(y * v.ln() + (1.0 - y) * (1.0 - v).ln())
        })
        .sum::<f64>()
        / m
}

/// Batch-mean BCE across samples.
pub fn bce_loss_batch(scores: &Array2<f64>, labels: &Array2<f64>) -> f64 {
    assert_eq!(scores.dim(), labels.dim());
    let b = scores.nrows();
    let m = scores.ncols() as f64;
    let mut total = 0.0;
    for (v, y) in scores.iter().zip(labels.iter()) {
        let v = v.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        total -= y * v.ln() + (1.0 - y) * (1.0 - v).ln();
    }
    total / (m * b as f64)
}

/// Reverse-mode gradients of the batch-mean BCE through the whole network.
pub fn backward_batch(
    model: &PgnnModel,
    cache: &BatchCache,
    labels: &Array2<f64>,
) -> Result<Gradients, NnError> {
    let arch = &model.arch;
    let (n, b, m) = (arch.n, cache.batch, arch.m);
    if labels.dim() != (b, m) {
        return Err(NnError::ShapeMismatch(format!(
            "labels are {:?}, expected ({b}, {m})",
            labels.dim()
        )));
    }
    let mut grads = Gradients::zeros_like(model);

    // fused sigmoid + clamped BCE: dL/dz = (v - y) / (m * b) where active
    let v = &cache.scores;
    let mut d_z = Array2::zeros((b, m));
    let scale = 1.0 / (m as f64 * b as f64);
    for s in 0..b {
        for j in 0..m {
            let vij = v[[s, j]];
            if (BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&vij) {
                d_z[[s, j]] = (vij - labels[[s, j]]) * scale;
            }
        }
    }

    // decision MLP
    let mut d_act = d_z;
    for idx in (0..model.mlp.len()).rev() {
        let input = &cache.mlp_act[idx];
        if idx + 1 != model.mlp.len() {
            // ReLU mask of this layer's output
            let out = &cache.mlp_act[idx + 1];
            ndarray::Zip::from(&mut d_act).and(out).for_each(|g, &o| {
                if o <= 0.0 {
                    *g = 0.0;
                }
            });
        }
        grads.mlp_w[idx] = d_act.t().dot(input);
        grads.mlp_b[idx] = d_act.sum_axis(Axis(0));
        d_act = d_act.dot(&model.mlp[idx].w);
    }

    // split the concatenated features back into per-stack outputs
    for c in 0..4 {
        let mut d_h = Array2::zeros((b * n, arch.d));
        for s in 0..b {
            for node in 0..n {
                for j in 0..arch.d {
                    d_h[[s * n + node, j]] = d_act[[s, c * n * arch.d + node * arch.d + j]];
                }
            }
        }
        for l in (0..model.stacks[c].len()).rev() {
            let layer = &model.stacks[c][l];
            let out = &cache.stack_out[c][l];
            ndarray::Zip::from(&mut d_h).and(out).for_each(|g, &o| {
                if o <= 0.0 {
                    *g = 0.0;
                }
            });
            let agg = &cache.stack_agg[c][l];
            grads.stacks[c][l] = d_h.t().dot(agg);
            if l > 0 {
                let d_agg = d_h.dot(&layer.w);
                let f = d_agg.ncols();
                let mut d_prev = Array2::zeros((b * n, f));
                for (s, adj) in cache.adjacency.iter().enumerate() {
                    let part = d_agg.slice(ndarray::s![s * n..(s + 1) * n, ..]);
                    let mut target = d_prev.slice_mut(ndarray::s![s * n..(s + 1) * n, ..]);
                    let slots = &cache.stack_argmax[c][l]
                        [if matches!(layer.aggregator, Aggregator::Max) {
                            s * n * f..(s + 1) * n * f
                        } else {
                            0..0
                        }];
                    scatter_aggregate_grad(
                        &part,
                        adj,
                        layer.aggregator,
                        matches!(layer.aggregator, Aggregator::Max).then_some(slots),
                        &mut target,
                    );
                }
                d_h = d_prev;
            }
        }
    }
    Ok(grads)
}

/// Single-sample gradients of `bce_loss(pgnn_forward(...), labels)`.
pub fn backward(model: &PgnnModel, fs: &FeatureSet, labels: &[f64]) -> Result<Gradients, NnError> {
    let cache = forward_batch(model, &[fs])?;
    let y = Array2::from_shape_vec((1, labels.len()), labels.to_vec())
        .map_err(|e| NnError::ShapeMismatch(e.to_string()))?;
    backward_batch(model, &cache, &y)
}

/// Top-k thresholded decoding of line scores into an outage label vector:
/// a line is switched off when its score is among the k largest and at
/// least 0.5. Ties at the cutoff resolve to the lower line index.
pub fn decode_eoc(scores: &[f64], k: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut out = vec![false; scores.len()];
    for &idx in order.iter().take(k) {
        if scores[idx] >= 0.5 {
            out[idx] = true;
        }
    }
    out
}
