//! Representation subtraction, the pose head and end-to-end pair registration.
//!
//! Both representations are turned into distributions, `q = softmax(Γ_G)` and
//! `p = softmax(Γ_ν)`, and the pose-related part is `Γ_μ = p ⊙ ln(p / q)`.
//! A shared MLP regresses each cloud's pose relative to a latent canonical
//! shape from its `Γ_μ`; the pair transform composes the two poses.

use std::fmt;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{softmax_slice, Tape, Tensor, Var};
use crate::encoder::{
    global_branch, init_encoder_params, init_linear, invariant_branch, BoundParams, EncoderConfig, ModelParams,
    PreparedCloud,
};
use crate::features::FeatureSpec;
use crate::geom::{compose_relative, PointCloud, RigidTransform, RotationMode, RotationParam};
use crate::{Error, Result};

/// Lower clamp on probabilities inside the logarithms of the subtraction.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RepTag {
    Global,
    Invariant,
    PoseRelated,
    Distribution,
}

impl fmt::Display for RepTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RepTag::Global => "global",
            RepTag::Invariant => "invariant",
            RepTag::PoseRelated => "pose_related",
            RepTag::Distribution => "distribution",
        })
    }
}

/// A tagged `m`-vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Representation {
    values: Vec<f64>,
    tag: RepTag,
}

impl Representation {
    pub fn new(values: Vec<f64>, tag: RepTag) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("empty representation".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("representation entry {i} is not finite")));
        }
        if tag == RepTag::Distribution {
            let sum: f64 = values.iter().sum();
            if values.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "not a distribution (sum {sum})"
                )));
            }
        }
        Ok(Representation { values, tag })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tag(&self) -> RepTag {
        self.tag
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs_diff(&self, other: &Representation) -> f64 {
        if self.len() != other.len() {
            return f64::INFINITY;
        }
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn to_distribution(rep: &Representation) -> Representation {
    Representation {
        values: softmax_slice(&rep.values),
        tag: RepTag::Distribution,
    }
}

/// Entrywise `p_i · ln(p_i / q_i)`; the entries sum to `KL(p‖q)`.
pub fn pose_related_rep(p: &Representation, q: &Representation) -> Result<Representation> {
    for r in [p, q] {
        if r.tag != RepTag::Distribution {
            return Err(Error::InvalidArgument(format!("expected a distribution, got {}", r.tag)));
        }
    }
    if p.len() != q.len() {
        return Err(Error::shape(
            "pose_related_rep",
            format!("widths {} and {} differ", p.len(), q.len()),
        ));
    }
    let values = p
        .values
        .iter()
        .zip(&q.values)
        .map(|(&pi, &qi)| pi * (pi.max(LOG_FLOOR).ln() - qi.max(LOG_FLOOR).ln()))
        .collect();
    Ok(Representation {
        values,
        tag: RepTag::PoseRelated,
    })
}

/// Everything that fixes the model's parameter shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub features: FeatureSpec,
    pub rotation: RotationMode,
    /// Hidden widths of the pose head.
    pub head_hidden: Vec<usize>,
}

impl ModelConfig {
    pub fn full() -> Self {
        ModelConfig {
            encoder: EncoderConfig::full(),
            features: FeatureSpec::default(),
            rotation: RotationMode::Euler,
            head_hidden: vec![256, 128],
        }
    }

    pub fn desk() -> Self {
        ModelConfig {
            encoder: EncoderConfig::desk(),
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.head_hidden.contains(&0) {
            return Err(Error::InvalidArgument("head widths must be positive".into()));
        }
        Ok(())
    }

    /// Input widths and output width of every head layer.
    fn head_layers(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.encoder.m];
        widths.extend(&self.head_hidden);
        widths.push(self.rotation.dim() + 3);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full()
    }
}

/// Configuration plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    /// Glorot-uniform weights and zero biases from `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = init_encoder_params(&config.encoder, &config.features, &mut rng)?;
        for (i, (a, b)) in config.head_layers().into_iter().enumerate() {
            init_linear(&mut params, &format!("head.{i}"), a, b, &mut rng);
        }
        Ok(Model { config, params })
    }

    pub fn prepare(&self, cloud: &PointCloud) -> Result<PreparedCloud> {
        PreparedCloud::new(cloud, &self.config.features, self.config.encoder.k)
    }
}

/// Pose of one cloud relative to the latent canonical shape.
#[derive(Clone, Debug, PartialEq)]
pub struct PosePrediction {
    pub rotation_param: RotationParam,
    pub translation: Vector3<f64>,
    pub decoded: RigidTransform,
}

/// Tape handles of a regressed pose.
#[derive(Clone, Copy, Debug)]
pub struct PoseVars {
    /// Rotation parameters including the identity offset.
    pub rotation_param: Var,
    /// `[3×3]` decoded rotation.
    pub rotation: Var,
    /// `[3]` translation.
    pub translation: Var,
}

impl PoseVars {
    pub fn read(&self, tape: &Tape, mode: RotationMode) -> Result<PosePrediction> {
        let rotation_param = RotationParam::new(mode, tape.value(self.rotation_param).data().to_vec())?;
        let t = tape.value(self.translation).data();
        let translation = Vector3::new(t[0], t[1], t[2]);
        let r = Matrix3::from_row_slice(tape.value(self.rotation).data());
        Ok(PosePrediction {
            rotation_param,
            translation,
            decoded: RigidTransform::new(r, translation)?,
        })
    }
}

/// `Γ_μ` on the tape from the two `[m]` representations.
pub fn pose_related_var(tape: &mut Tape, global: Var, invariant: Var) -> Result<Var> {
    let q = tape.softmax(global)?;
    let p = tape.softmax(invariant)?;
    let lp = tape.clamp_min(p, LOG_FLOOR)?;
    let lp = tape.log(lp)?;
    let lq = tape.clamp_min(q, LOG_FLOOR)?;
    let lq = tape.log(lq)?;
    let ratio = tape.sub(lp, lq)?;
    tape.mul(p, ratio)
}

/// The shared head `h_β`: leaky-ReLU MLP with a linear last layer. The mode's
/// identity offset is added to the rotation outputs so a zero output decodes
/// to the identity rotation in every mode.
pub fn head_forward(tape: &mut Tape, gamma_mu: Var, config: &ModelConfig, params: &BoundParams) -> Result<PoseVars> {
    let m = tape.value(gamma_mu).numel();
    if m != config.encoder.m {
        return Err(Error::shape(
            "regress_pose",
            format!("head expects width {}, got {m}", config.encoder.m),
        ));
    }
    let layers = config.head_layers();
    let mut h = tape.reshape(gamma_mu, vec![1, m])?;
    for i in 0..layers.len() {
        let w = params.get(&format!("head.{i}.weight"))?;
        let b = params.get(&format!("head.{i}.bias"))?;
        h = tape.matmul(h, w)?;
        h = tape.add_row(h, b)?;
        if i + 1 < layers.len() {
            h = tape.leaky_relu(h, config.encoder.leaky_slope)?;
        }
    }
    let mode = config.rotation;
    let d = mode.dim();
    let h = tape.reshape(h, vec![d + 3])?;
    let raw = tape.slice_last(h, 0, d)?;
    let offset = tape.constant(Tensor::vector(mode.identity_offset().to_vec())?);
    let rotation_param = tape.add(raw, offset)?;
    let rotation = tape.decode_rotation(rotation_param, mode)?;
    let translation = tape.slice_last(h, d, 3)?;
    Ok(PoseVars {
        rotation_param,
        rotation,
        translation,
    })
}

/// `Γ_μ → (Ω, t) → T` for a single representation.
pub fn regress_pose(gamma_mu: &Representation, config: &ModelConfig, params: &ModelParams) -> Result<PosePrediction> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let mu = tape.constant(Tensor::vector(gamma_mu.values().to_vec())?);
    let pose = head_forward(&mut tape, mu, config, &bound)?;
    pose.read(&tape, config.rotation)
}

/// Both branches, the subtraction and the head for one cloud.
pub fn cloud_pose(tape: &mut Tape, cloud: &PreparedCloud, config: &ModelConfig, params: &BoundParams) -> Result<PoseVars> {
    let global = global_branch(tape, cloud, &config.encoder, params)?;
    let invariant = invariant_branch(tape, cloud, &config.encoder, params)?;
    let mu = pose_related_var(tape, global, invariant)?;
    head_forward(tape, mu, config, params)
}

/// `X_c = R_Xᵀ (X − t_X)` as rows: `(X − t_X)·R_X`.
pub fn canonical_var(tape: &mut Tape, cloud: &PointCloud, pose: &PoseVars) -> Result<Var> {
    let x = tape.constant(cloud.to_tensor());
    let neg_t = tape.neg(pose.translation)?;
    let shifted = tape.add_row(x, neg_t)?;
    tape.matmul(shifted, pose.rotation)
}

/// Tape handles of a full source/target forward pass.
#[derive(Clone, Copy, Debug)]
pub struct PairVars {
    pub source: PoseVars,
    pub target: PoseVars,
    pub source_canonical: Var,
    pub target_canonical: Var,
}

pub fn pair_forward(
    tape: &mut Tape,
    source: &PreparedCloud,
    target: &PreparedCloud,
    config: &ModelConfig,
    params: &BoundParams,
) -> Result<PairVars> {
    let sp = cloud_pose(tape, source, config, params)?;
    let tp = cloud_pose(tape, target, config, params)?;
    let source_canonical = canonical_var(tape, source.cloud(), &sp)?;
    let target_canonical = canonical_var(tape, target.cloud(), &tp)?;
    Ok(PairVars {
        source: sp,
        target: tp,
        source_canonical,
        target_canonical,
    })
}

/// Output of [`register_pair`].
#[derive(Clone, Debug)]
pub struct Registration {
    /// Maps the source onto the target.
    pub transform: RigidTransform,
    pub source_pose: PosePrediction,
    pub target_pose: PosePrediction,
    pub source_canonical: PointCloud,
    pub target_canonical: PointCloud,
}

pub fn register_pair(source: &PointCloud, target: &PointCloud, model: &Model) -> Result<Registration> {
    register_prepared(&model.prepare(source)?, &model.prepare(target)?, model)
}

pub fn register_prepared(source: &PreparedCloud, target: &PreparedCloud, model: &Model) -> Result<Registration> {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, false);
    let vars = pair_forward(&mut tape, source, target, &model.config, &bound)?;
    let source_pose = vars.source.read(&tape, model.config.rotation)?;
    let target_pose = vars.target.read(&tape, model.config.rotation)?;
    Ok(Registration {
        transform: compose_relative(&source_pose.decoded, &target_pose.decoded),
        source_pose,
        target_pose,
        source_canonical: PointCloud::from_tensor(tape.value(vars.source_canonical))?,
        target_canonical: PointCloud::from_tensor(tape.value(vars.target_canonical))?,
    })
}
