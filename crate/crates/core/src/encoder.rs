//! Edge-convolution encoders for the global and pose-invariant representations.
//!
//! An edge-conv layer maps `[n×c]` point features to `[n×c']`: every point
//! builds `k` edge inputs `concat(F_i, F_j − F_i)`, runs them through a shared
//! linear layer plus leaky ReLU and keeps the per-channel maximum. The linear
//! layer is stored as its two row blocks (`center`, `neighbor`), which lets the
//! layer evaluate `F·W` once per point instead of once per edge.
//!
//! Exact duplicate points are collapsed before any graph is built. Duplicates
//! carry identical features, so max-pooling over the unique set gives the same
//! result while keeping neighbourhoods independent of multiplicity.

use std::collections::BTreeMap;

use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::features::{edge_features, embed_edge_features, prepare_cloud, FeatureSpec};
use crate::geom::{knn, knn_rows, NeighborTable, PointCloud};
use crate::separation::{RepTag, Representation};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    /// Neighbours per point.
    pub k: usize,
    /// Representation width; equals the last layer width.
    pub m: usize,
    /// Output width of each layer. The length is the depth ℓ.
    pub widths: Vec<usize>,
    pub leaky_slope: f64,
    /// Rebuild the global branch graph from the current features each layer.
    pub dynamic_graph: bool,
}

impl EncoderConfig {
    /// `k = 24`, `m = 512`, widths `[64, 64, 128, 256, 512]`.
    pub fn full() -> Self {
        EncoderConfig {
            k: 24,
            m: 512,
            widths: vec![64, 64, 128, 256, 512],
            leaky_slope: 0.2,
            dynamic_graph: true,
        }
    }

    /// Small preset for CPU-scale training: widths `[16, 16, 32, 32, 64]`.
    pub fn desk() -> Self {
        EncoderConfig {
            m: 64,
            widths: vec![16, 16, 32, 32, 64],
            ..Self::full()
        }
    }

    pub fn layers(&self) -> usize {
        self.widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.m == 0 || self.widths.is_empty() {
            return Err(Error::InvalidArgument("k, m and the layer count must be positive".into()));
        }
        if self.widths.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        if self.widths.last() != Some(&self.m) {
            return Err(Error::InvalidArgument(format!(
                "last layer width {:?} must equal m = {}",
                self.widths.last(),
                self.m
            )));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::InvalidArgument(format!("leaky slope {} outside [0, 1)", self.leaky_slope)));
        }
        Ok(())
    }
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::full()
    }
}

/// Named parameter tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Puts every tensor on the tape as a leaf (or a constant when frozen).
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        BoundParams { vars }
    }
}

/// Parameters placed on a tape.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Rebinds `name` to another tape value.
    pub fn set(&mut self, name: &str, var: Var) {
        self.vars.insert(name.to_string(), var);
    }

    /// Gradients of every bound parameter after a backward pass; parameters
    /// the loss does not reach get zeros.
    pub fn grads(&self, tape: &Tape) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(name, &v)| {
                let g = tape
                    .grad(v)
                    .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape().to_vec()));
                (name.clone(), g)
            })
            .collect()
    }
}

/// Uniform in `±√(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::matrix(rows, cols, data).expect("positive dims")
}

/// Adds `{prefix}.center`, `{prefix}.neighbor` (both `[c_in×c_out]`) and a zero
/// `{prefix}.bias`. The initialization bound uses the concatenated fan-in `2·c_in`.
pub fn init_edge_conv(params: &mut ModelParams, prefix: &str, c_in: usize, c_out: usize, rng: &mut impl Rng) {
    params.insert(format!("{prefix}.center"), glorot_uniform(c_in, c_out, 2 * c_in, c_out, rng));
    params.insert(format!("{prefix}.neighbor"), glorot_uniform(c_in, c_out, 2 * c_in, c_out, rng));
    params.insert(format!("{prefix}.bias"), Tensor::zeros(vec![c_out]));
}

/// Adds `{prefix}.weight` `[c_in×c_out]` and a zero `{prefix}.bias`.
pub fn init_linear(params: &mut ModelParams, prefix: &str, c_in: usize, c_out: usize, rng: &mut impl Rng) {
    params.insert(format!("{prefix}.weight"), glorot_uniform(c_in, c_out, c_in, c_out, rng));
    params.insert(format!("{prefix}.bias"), Tensor::zeros(vec![c_out]));
}

/// Global-branch and invariant-branch parameters.
pub fn init_encoder_params(config: &EncoderConfig, spec: &FeatureSpec, rng: &mut impl Rng) -> Result<ModelParams> {
    config.validate()?;
    let mut params = ModelParams::new();
    let mut c_in = 3;
    for (l, &w) in config.widths.iter().enumerate() {
        init_edge_conv(&mut params, &format!("global.{l}"), c_in, w, rng);
        c_in = w;
    }
    init_linear(&mut params, "invariant.embed", spec.dim(), config.widths[0], rng);
    for l in 1..config.layers() {
        init_edge_conv(
            &mut params,
            &format!("invariant.{l}"),
            config.widths[l - 1],
            config.widths[l],
            rng,
        );
    }
    Ok(params)
}

/// Tape handles of one edge-conv layer.
#[derive(Clone, Copy, Debug)]
pub struct EdgeConvVars {
    pub center: Var,
    pub neighbor: Var,
    pub bias: Var,
}

impl EdgeConvVars {
    pub fn lookup(params: &BoundParams, prefix: &str) -> Result<Self> {
        Ok(EdgeConvVars {
            center: params.get(&format!("{prefix}.center"))?,
            neighbor: params.get(&format!("{prefix}.neighbor"))?,
            bias: params.get(&format!("{prefix}.bias"))?,
        })
    }
}

/// One edge-conv layer: `[n×c] → [n×c']`.
pub fn edge_conv_layer(
    tape: &mut Tape,
    features: Var,
    neighbors: &NeighborTable,
    layer: EdgeConvVars,
    slope: f64,
) -> Result<Var> {
    let (n, _) = tape.value(features).dims2("edge_conv_layer")?;
    if neighbors.len() != n {
        return Err(Error::shape(
            "edge_conv_layer",
            format!("neighbour table has {} rows for {n} points", neighbors.len()),
        ));
    }
    if let Some(&bad) = neighbors.flat().iter().find(|&&j| j >= n) {
        return Err(Error::InvalidArgument(format!(
            "neighbour index {bad} out of range for {n} points"
        )));
    }
    // z_ij = F_i·W_c + (F_j − F_i)·W_n + b = (F_i·(W_c − W_n) + b) + F_j·W_n.
    // Leaky ReLU is increasing, so max_j leaky(z_ij) = leaky(a_i + max_j F_j·W_n).
    let p = tape.matmul(features, layer.center)?;
    let q = tape.matmul(features, layer.neighbor)?;
    let self_term = tape.sub(p, q)?;
    let self_term = tape.add_row(self_term, layer.bias)?;
    let pooled = tape.gather_max(q, neighbors.flat(), neighbors.k())?;
    let z = tape.add(self_term, pooled)?;
    tape.leaky_relu(z, slope)
}

/// Per-cloud data the encoders need that does not depend on parameters:
/// coordinates, the spatial graph and the invariant edge features.
#[derive(Clone, Debug)]
pub struct PreparedCloud {
    original: PointCloud,
    unique: PointCloud,
    table: NeighborTable,
    invariant_features: Tensor,
}

impl PreparedCloud {
    pub fn new(cloud: &PointCloud, spec: &FeatureSpec, k: usize) -> Result<Self> {
        let unique = cloud.dedup();
        if unique.len() <= k {
            return Err(Error::InvalidArgument(format!(
                "cloud has {} distinct points, needs more than k = {k}",
                unique.len()
            )));
        }
        let unique = prepare_cloud(&unique, spec, k)?;
        let table = knn(&unique, k)?;
        let invariant_features = edge_features(&unique, spec, &table)?;
        Ok(PreparedCloud {
            original: cloud.clone(),
            unique,
            table,
            invariant_features,
        })
    }

    /// The cloud as given, duplicates included.
    pub fn cloud(&self) -> &PointCloud {
        &self.original
    }

    pub fn k(&self) -> usize {
        self.table.k()
    }

    fn check(&self, config: &EncoderConfig) -> Result<()> {
        if self.table.k() != config.k {
            return Err(Error::InvalidArgument(format!(
                "cloud prepared with k = {}, encoder uses k = {}",
                self.table.k(),
                config.k
            )));
        }
        Ok(())
    }
}

/// Global branch on the tape; returns the `[m]` max-pooled features.
pub fn global_branch(tape: &mut Tape, cloud: &PreparedCloud, config: &EncoderConfig, params: &BoundParams) -> Result<Var> {
    cloud.check(config)?;
    let mut f = tape.constant(cloud.unique.to_tensor());
    let mut table = cloud.table.clone();
    for l in 0..config.layers() {
        if l > 0 && config.dynamic_graph {
            let value = tape.value(f);
            table = knn_rows(value.data(), value.last_dim(), config.k)?;
        }
        let layer = EdgeConvVars::lookup(params, &format!("global.{l}"))?;
        f = edge_conv_layer(tape, f, &table, layer, config.leaky_slope)?;
    }
    tape.reduce_max(f)
}

/// Invariant branch on the tape; returns the `[m]` max-pooled features.
pub fn invariant_branch(
    tape: &mut Tape,
    cloud: &PreparedCloud,
    config: &EncoderConfig,
    params: &BoundParams,
) -> Result<Var> {
    cloud.check(config)?;
    let mut f = embed_edge_features(
        tape,
        cloud.invariant_features.clone(),
        cloud.table.k(),
        params.get("invariant.embed.weight")?,
        params.get("invariant.embed.bias")?,
        config.leaky_slope,
    )?;
    for l in 1..config.layers() {
        let layer = EdgeConvVars::lookup(params, &format!("invariant.{l}"))?;
        f = edge_conv_layer(tape, f, &cloud.table, layer, config.leaky_slope)?;
    }
    tape.reduce_max(f)
}

/// Γ_G of a cloud.
pub fn encode_global(cloud: &PointCloud, config: &EncoderConfig, params: &ModelParams) -> Result<Representation> {
    config.validate()?;
    let prepared = PreparedCloud::new(cloud, &FeatureSpec::default(), config.k)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let out = global_branch(&mut tape, &prepared, config, &bound)?;
    Representation::new(tape.value(out).data().to_vec(), RepTag::Global)
}

/// Γ_ν of a cloud.
pub fn encode_invariant(
    cloud: &PointCloud,
    spec: &FeatureSpec,
    config: &EncoderConfig,
    params: &ModelParams,
) -> Result<Representation> {
    config.validate()?;
    let prepared = PreparedCloud::new(cloud, spec, config.k)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let out = invariant_branch(&mut tape, &prepared, config, &bound)?;
    Representation::new(tape.value(out).data().to_vec(), RepTag::Invariant)
}
