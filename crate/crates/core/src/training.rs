//! Chamfer loss on the latent canonical clouds, Adam, the train and
//! fine-tune loops, and the binary checkpoint format.
//!
//! The loop only ever sees [`CloudPair`]s, so ground-truth poses cannot leak
//! into training.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{Tape, Tensor, Var};
use crate::datagen::CloudPair;
use crate::encoder::{EncoderConfig, ModelParams, PreparedCloud};
use crate::features::{FeatureKind, FeatureSpec};
use crate::geom::RotationMode;
use crate::separation::{pair_forward, Model, ModelConfig};
use crate::{Error, Result};

/// Chamfer discrepancy between the two canonical clouds, on the tape.
pub fn unsupervised_loss(tape: &mut Tape, source_canonical: Var, target_canonical: Var) -> Result<Var> {
    tape.chamfer(source_canonical, target_canonical)
}

/// Adam hyperparameters and moment buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl OptimState {
    pub fn new(lr: f64) -> Self {
        OptimState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// First and second moments of `name`, if it has been stepped.
    pub fn moments(&self, name: &str) -> Option<(&Tensor, &Tensor)> {
        self.moments.get(name).map(|(m, v)| (m, v))
    }
}

/// One bias-corrected Adam update. Every gradient is checked before any
/// parameter moves, so a non-finite gradient leaves `params` and `state`
/// untouched.
pub fn adam_step(params: &mut ModelParams, grads: &BTreeMap<String, Tensor>, state: &mut OptimState) -> Result<()> {
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no gradient for `{name}`")))?;
        if g.shape() != p.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("`{name}`: gradient {:?} vs parameter {:?}", g.shape(), p.shape()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - state.beta1.powf(t);
    let c2 = 1.0 - state.beta2.powf(t);
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let g = &grads[&name];
        let p = params.get_mut(&name).expect("listed");
        let (m, v) = state
            .moments
            .entry(name)
            .or_insert_with(|| (Tensor::zeros(g.shape().to_vec()), Tensor::zeros(g.shape().to_vec())));
        for (((pi, mi), vi), &gi) in p
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data())
        {
            *mi = state.beta1 * *mi + (1.0 - state.beta1) * gi;
            *vi = state.beta2 * *vi + (1.0 - state.beta2) * gi * gi;
            *pi -= state.lr * (*mi / c1) / ((*vi / c2).sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.data())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.values_mut().for_each(|g| g.data_mut().iter_mut().for_each(|x| *x *= s));
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm clip; off when `None`.
    pub clip_norm: Option<f64>,
    /// Cosine decay of the learning rate across the run.
    pub cosine: bool,
}

impl TrainConfig {
    pub fn desk(seed: u64) -> Self {
        TrainConfig {
            epochs: 30,
            lr: 1e-3,
            batch_size: 8,
            seed,
            clip_norm: None,
            cosine: false,
        }
    }

    pub fn full(seed: u64) -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 26,
            ..Self::desk(seed)
        }
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        if self.cosine && self.epochs > 1 {
            let x = epoch as f64 / (self.epochs - 1) as f64;
            0.5 * self.lr * (1.0 + (std::f64::consts::PI * x).cos())
        } else {
            self.lr
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be finite and ≥ 0", self.lr)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument(format!("clip norm {c} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainMeta {
    /// Completed epochs, summed over every phase.
    pub epoch: u64,
    pub seed: u64,
    /// Mean sample loss of every completed epoch.
    pub loss_history: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<OptimState>,
    pub meta: TrainMeta,
}

impl Checkpoint {
    pub fn fresh(model: Model, seed: u64) -> Self {
        Checkpoint {
            model,
            optimizer: None,
            meta: TrainMeta {
                seed,
                ..TrainMeta::default()
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// The final checkpoint, or the last good one after a divergence.
    pub checkpoint: Checkpoint,
    /// Mean sample loss per completed epoch of this run.
    pub losses: Vec<f64>,
    /// Epoch (1-based) at which a non-finite loss or gradient stopped the run.
    pub diverged_at: Option<usize>,
}

impl TrainOutcome {
    /// Turns a divergence into an error.
    pub fn into_result(self) -> Result<Checkpoint> {
        match self.diverged_at {
            Some(epoch) => Err(Error::Diverged { epoch }),
            None => Ok(self.checkpoint),
        }
    }
}

/// Loss and parameter gradients of one pair.
pub fn pair_loss_and_grads(
    model: &Model,
    source: &PreparedCloud,
    target: &PreparedCloud,
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, true);
    let vars = pair_forward(&mut tape, source, target, &model.config, &bound)?;
    let loss = unsupervised_loss(&mut tape, vars.source_canonical, vars.target_canonical)?;
    tape.backward(loss)?;
    Ok((tape.value(loss).data()[0], bound.grads(&tape)))
}

/// Prepares every pair for `model` in parallel, keeping order.
pub fn prepare_pairs(model: &Model, pairs: &[CloudPair]) -> Result<Vec<(PreparedCloud, PreparedCloud)>> {
    pairs
        .par_iter()
        .map(|p| Ok((model.prepare(&p.source)?, model.prepare(&p.target)?)))
        .collect()
}

/// Mean unsupervised loss of `model` over `pairs`.
pub fn evaluate_loss(model: &Model, prepared: &[(PreparedCloud, PreparedCloud)]) -> Result<f64> {
    if prepared.is_empty() {
        return Err(Error::InvalidArgument("no pairs to evaluate".into()));
    }
    let losses: Vec<f64> = prepared
        .par_iter()
        .map(|(s, t)| {
            let reg = crate::separation::register_prepared(s, t, model)?;
            crate::geom::chamfer(&reg.source_canonical, &reg.target_canonical)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Trains a freshly initialised model (seeded by `cfg.seed`).
pub fn train(config: &ModelConfig, pairs: &[CloudPair], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let model = Model::init(config.clone(), cfg.seed)?;
    let start = Checkpoint::fresh(model, cfg.seed);
    train_from(start, pairs, cfg)
}

/// Continues training from a checkpoint, reusing its optimizer state when
/// present.
pub fn train_from(start: Checkpoint, pairs: &[CloudPair], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let prepared = prepare_pairs(&start.model, pairs)?;
    run_epochs(start, &prepared, cfg)
}

/// Same as [`train_from`] for pairs already prepared for the model.
pub fn run_epochs(
    start: Checkpoint,
    prepared: &[(PreparedCloud, PreparedCloud)],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if prepared.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut good = start;
    let mut model = good.model.clone();
    let mut optim = good.optimizer.clone().unwrap_or_else(|| OptimState::new(cfg.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        optim.lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut failed = false;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<(f64, BTreeMap<String, Tensor>)> = batch
                .par_iter()
                .map(|&i| pair_loss_and_grads(&model, &prepared[i].0, &prepared[i].1))
                .collect::<Result<_>>()?;
            let mut sum: Option<BTreeMap<String, Tensor>> = None;
            for (loss, grads) in results {
                total += loss;
                match &mut sum {
                    None => sum = Some(grads),
                    Some(acc) => {
                        for (name, g) in grads {
                            let a = acc.get_mut(&name).expect("same parameter set");
                            a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            let mut grads = sum.expect("nonempty batch");
            let inv = 1.0 / batch.len() as f64;
            grads.values_mut().for_each(|g| g.data_mut().iter_mut().for_each(|x| *x *= inv));
            if let Some(c) = cfg.clip_norm {
                clip_global_norm(&mut grads, c);
            }
            match adam_step(&mut model.params, &grads, &mut optim) {
                Ok(()) if model.params.is_finite() => {}
                Ok(()) | Err(Error::NonFiniteGradient(_)) => {
                    failed = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let mean = total / prepared.len() as f64;
        if failed || !mean.is_finite() {
            return Ok(TrainOutcome {
                checkpoint: good,
                losses,
                diverged_at: Some(epoch + 1),
            });
        }
        losses.push(mean);
        good.meta.epoch += 1;
        good.meta.loss_history.push(mean);
        good.model = model.clone();
        good.optimizer = Some(optim.clone());
    }
    Ok(TrainOutcome {
        checkpoint: good,
        losses,
        diverged_at: None,
    })
}

/// Transductive fine-tuning: fresh optimizer state at `cfg.lr`, clouds only.
/// The checkpoint must have been trained with `expected`.
pub fn fine_tune(
    checkpoint: &Checkpoint,
    expected: &ModelConfig,
    pairs: &[CloudPair],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    check_config(&checkpoint.model.config, expected)?;
    let mut start = checkpoint.clone();
    start.optimizer = None;
    train_from(start, pairs, cfg)
}

/// Describes the first difference between two model configurations.
pub fn check_config(found: &ModelConfig, expected: &ModelConfig) -> Result<()> {
    let mismatch = |what: &str, a: String, b: String| {
        Err(Error::ConfigMismatch(format!("{what}: checkpoint has {a}, pipeline expects {b}")))
    };
    let (f, e) = (&found.encoder, &expected.encoder);
    if f.m != e.m {
        return mismatch("m", f.m.to_string(), e.m.to_string());
    }
    if f.widths != e.widths {
        return mismatch("layer widths", format!("{:?}", f.widths), format!("{:?}", e.widths));
    }
    if f.k != e.k {
        return mismatch("k", f.k.to_string(), e.k.to_string());
    }
    if found.features != expected.features {
        return mismatch("features", format!("{:?}", found.features), format!("{:?}", expected.features));
    }
    if found.rotation != expected.rotation {
        return mismatch("rotation mode", found.rotation.name().into(), expected.rotation.name().into());
    }
    if found != expected {
        return mismatch("model config", format!("{found:?}"), format!("{expected:?}"));
    }
    Ok(())
}

/// `epoch,mean_loss` rows, epochs counted from 1.
pub fn loss_curve_csv(losses: &[f64]) -> String {
    let mut out = String::from("epoch,mean_loss\n");
    for (i, l) in losses.iter().enumerate() {
        writeln!(out, "{},{l}", i + 1).expect("write to string");
    }
    out
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"UPCR";
pub const CHECKPOINT_VERSION: u32 = 1;

/// FNV-1a over the whole body, stored as the trailing eight bytes.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("length fits in u32"));
    }
    fn floats(&mut self, v: &[f64]) {
        v.iter().for_each(|&x| self.f64(x));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        if n > self.bytes.len().saturating_sub(self.pos) / 8 {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

fn write_config(w: &mut Writer, c: &ModelConfig) {
    w.len(c.encoder.k);
    w.len(c.encoder.m);
    w.len(c.encoder.widths.len());
    c.encoder.widths.iter().for_each(|&x| w.len(x));
    w.f64(c.encoder.leaky_slope);
    w.u8(c.encoder.dynamic_graph as u8);
    w.u8(c.features.kind.code());
    w.len(c.features.spfh_bins);
    w.len(c.features.pfh_bins);
    w.u8(c.rotation.code());
    w.len(c.head_hidden.len());
    c.head_hidden.iter().for_each(|&x| w.len(x));
}

fn read_config(r: &mut Reader) -> Result<ModelConfig> {
    let k = r.len()?;
    let m = r.len()?;
    let n = r.len()?;
    let widths = (0..n.min(1 << 16)).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
    let leaky_slope = r.f64()?;
    let dynamic_graph = match r.u8()? {
        0 => false,
        1 => true,
        b => return Err(Error::Checkpoint(format!("bad flag byte {b}"))),
    };
    let kind = FeatureKind::from_code(r.u8()?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let spfh_bins = r.len()?;
    let pfh_bins = r.len()?;
    let rotation = RotationMode::from_code(r.u8()?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let n = r.len()?;
    let head_hidden = (0..n.min(1 << 16)).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
    let config = ModelConfig {
        encoder: EncoderConfig {
            k,
            m,
            widths,
            leaky_slope,
            dynamic_graph,
        },
        features: FeatureSpec {
            kind,
            spfh_bins,
            pfh_bins,
        },
        rotation,
        head_hidden,
    };
    config.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(config)
}

fn write_tensor(w: &mut Writer, name: &str, t: &Tensor) {
    w.len(name.len());
    w.0.extend_from_slice(name.as_bytes());
    w.len(t.rank());
    t.shape().iter().for_each(|&d| w.u64(d as u64));
    w.floats(t.data());
}

fn read_tensor(r: &mut Reader) -> Result<(String, Tensor)> {
    let n = r.len()?;
    let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("non-UTF-8 tensor name".into()))?;
    let rank = r.len()?;
    if rank > 8 {
        return Err(Error::Checkpoint(format!("`{name}` has rank {rank}")));
    }
    let shape = (0..rank).map(|_| Ok(r.u64()? as usize)).collect::<Result<Vec<_>>>()?;
    let numel = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::Checkpoint(format!("`{name}` shape overflows")))?;
    let data = r.floats(numel)?;
    Ok((name, Tensor::new(shape, data)?))
}

/// Serialises a checkpoint. See the crate README for the layout.
pub fn encode_checkpoint(c: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    write_config(&mut w, &c.model.config);
    w.u64(c.meta.epoch);
    w.u64(c.meta.seed);
    w.len(c.meta.loss_history.len());
    w.floats(&c.meta.loss_history);
    w.len(c.model.params.len());
    for (name, t) in c.model.params.iter() {
        write_tensor(&mut w, name, t);
    }
    match &c.optimizer {
        None => w.u8(0),
        Some(o) => {
            w.u8(1);
            w.f64(o.lr);
            w.f64(o.beta1);
            w.f64(o.beta2);
            w.f64(o.eps);
            w.u64(o.step);
            w.len(o.moments.len());
            for (name, (m, v)) in &o.moments {
                write_tensor(&mut w, name, m);
                w.floats(v.data());
            }
        }
    }
    let sum = fnv1a(&w.0);
    w.u64(sum);
    w.0
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("missing UPCR magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    if bytes.len() < 16 {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 8);
    if fnv1a(body) != u64::from_le_bytes(trailer.try_into().expect("8 bytes")) {
        return Err(Error::Checkpoint("checksum mismatch (truncated or corrupted file)".into()));
    }
    let mut r = Reader { bytes: body, pos: 8 };
    let config = read_config(&mut r)?;
    let epoch = r.u64()?;
    let seed = r.u64()?;
    let n = r.len()?;
    let loss_history = r.floats(n)?;
    let n = r.len()?;
    let mut params = ModelParams::new();
    for _ in 0..n {
        let (name, t) = read_tensor(&mut r)?;
        params.insert(name, t);
    }
    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let mut o = OptimState::new(r.f64()?);
            o.beta1 = r.f64()?;
            o.beta2 = r.f64()?;
            o.eps = r.f64()?;
            o.step = r.u64()?;
            let n = r.len()?;
            for _ in 0..n {
                let (name, m) = read_tensor(&mut r)?;
                let v = Tensor::new(m.shape().to_vec(), r.floats(m.numel())?)?;
                o.moments.insert(name, (m, v));
            }
            Some(o)
        }
        b => return Err(Error::Checkpoint(format!("bad optimizer flag {b}"))),
    };
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", body.len() - r.pos)));
    }
    let expected = Model::init(config.clone(), 0)?;
    for (name, t) in expected.params.iter() {
        let found = params
            .get(name)
            .map_err(|_| Error::Checkpoint(format!("missing tensor `{name}`")))?;
        if found.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "`{name}` has shape {:?}, config implies {:?}",
                found.shape(),
                t.shape()
            )));
        }
    }
    if params.len() != expected.params.len() {
        return Err(Error::Checkpoint("unexpected extra tensors".into()));
    }
    Ok(Checkpoint {
        model: Model { config, params },
        optimizer,
        meta: TrainMeta {
            epoch,
            seed,
            loss_history,
        },
    })
}

pub fn save_checkpoint(path: &Path, c: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode_checkpoint(c)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Loads a checkpoint and rejects it unless it was built for `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<Checkpoint> {
    let c = load_checkpoint(path)?;
    check_config(&c.model.config, expected)?;
    Ok(c)
}
