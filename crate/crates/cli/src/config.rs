//! Resolved run configuration: preset defaults, then a TOML file, then
//! command-line flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use upcr::datagen::{DatasetConfig, NoiseSpec, Pairing, PoseRegime, Protocol, Setting, NUM_CATEGORIES};
use upcr::encoder::EncoderConfig;
use upcr::features::{FeatureKind, FeatureSpec};
use upcr::geom::RotationMode;
use upcr::separation::ModelConfig;
use upcr::training::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 256-point clouds, m = 64, 30 epochs
    Desk,
    /// 1024-point clouds, m = 512, 500 epochs
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub model: ModelSection,
    pub data: DataSection,
    pub train: TrainSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub k: usize,
    pub m: usize,
    pub widths: Vec<usize>,
    pub leaky_slope: f64,
    pub dynamic_graph: bool,
    pub features: String,
    pub spfh_bins: usize,
    pub pfh_bins: usize,
    pub rotation: String,
    pub head_hidden: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub setting: String,
    pub pairing: String,
    pub pose_regime: String,
    pub n_points: usize,
    pub partial_keep: usize,
    /// Noise on or off; unset means on for the `nd` setting only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<bool>,
    pub noise_sigma: f64,
    pub noise_clip: f64,
    pub noise_both_clouds: bool,
    pub n_categories: u32,
    pub shapes_per_category: u32,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Global gradient-norm clip; unset means off.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    pub cosine: bool,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let (model, protocol, train) = match preset {
            Preset::Desk => (ModelConfig::desk(), Protocol::desk(Setting::Upc), TrainConfig::desk(7)),
            Preset::Full => (ModelConfig::full(), Protocol::new(Setting::Upc), TrainConfig::full(7)),
        };
        let data = DatasetConfig::desk(Setting::Upc, 7);
        let noise = NoiseSpec::default();
        RunConfig {
            preset,
            seed: 7,
            model: ModelSection {
                k: model.encoder.k,
                m: model.encoder.m,
                widths: model.encoder.widths.clone(),
                leaky_slope: model.encoder.leaky_slope,
                dynamic_graph: model.encoder.dynamic_graph,
                features: model.features.kind.name().to_string(),
                spfh_bins: model.features.spfh_bins,
                pfh_bins: model.features.pfh_bins,
                rotation: model.rotation.name().to_string(),
                head_hidden: model.head_hidden.clone(),
            },
            data: DataSection {
                setting: protocol.setting.name().to_string(),
                pairing: protocol.pairing.name().to_string(),
                pose_regime: protocol.pose_regime.name().to_string(),
                n_points: protocol.n_points,
                partial_keep: protocol.partial_keep,
                noise: None,
                noise_sigma: noise.sigma,
                noise_clip: noise.clip,
                noise_both_clouds: noise.both_clouds,
                n_categories: NUM_CATEGORIES,
                shapes_per_category: data.shapes_per_category,
                n_train: data.n_train,
                n_test: data.n_test,
            },
            train: TrainSection {
                epochs: train.epochs,
                lr: train.lr,
                batch_size: train.batch_size,
                clip_norm: train.clip_norm,
                cosine: train.cosine,
                finetune_epochs: 10,
                finetune_lr: 1e-4,
            },
        }
    }

    /// Preset defaults overlaid with the keys present in `file`.
    pub fn load(preset: Preset, file: Option<&Path>) -> Result<Self> {
        let base = Self::preset(preset);
        let Some(path) = file else {
            return Ok(base);
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::overlay(base, &text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn overlay(base: Self, text: &str) -> Result<Self> {
        let overrides: toml::Table = toml::from_str(text)?;
        let mut merged = toml::Table::try_from(&base)?;
        merge(&mut merged, overrides);
        Ok(merged.try_into()?)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let m = &self.model;
        let config = ModelConfig {
            encoder: EncoderConfig {
                k: m.k,
                m: m.m,
                widths: m.widths.clone(),
                leaky_slope: m.leaky_slope,
                dynamic_graph: m.dynamic_graph,
            },
            features: FeatureSpec {
                kind: m.features.parse::<FeatureKind>()?,
                spfh_bins: m.spfh_bins,
                pfh_bins: m.pfh_bins,
            },
            rotation: m.rotation.parse::<RotationMode>()?,
            head_hidden: m.head_hidden.clone(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn protocol(&self) -> Result<Protocol> {
        let d = &self.data;
        let setting: Setting = d.setting.parse()?;
        let noisy = d.noise.unwrap_or(setting == Setting::Nd);
        let protocol = Protocol {
            setting,
            pairing: d.pairing.parse::<Pairing>()?,
            pose_regime: d.pose_regime.parse::<PoseRegime>()?,
            noise: noisy.then_some(NoiseSpec {
                sigma: d.noise_sigma,
                clip: d.noise_clip,
                both_clouds: d.noise_both_clouds,
            }),
            partial_keep: d.partial_keep,
            n_points: d.n_points,
        };
        protocol.validate()?;
        Ok(protocol)
    }

    pub fn dataset_config(&self) -> Result<DatasetConfig> {
        Ok(DatasetConfig {
            protocol: self.protocol()?,
            n_categories: self.data.n_categories,
            shapes_per_category: self.data.shapes_per_category,
            n_train: self.data.n_train,
            n_test: self.data.n_test,
            seed: self.seed,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            epochs: t.epochs,
            lr: t.lr,
            batch_size: t.batch_size,
            seed: self.seed,
            clip_norm: t.clip_norm,
            cosine: t.cosine,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn finetune_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            epochs: self.train.finetune_epochs,
            lr: self.train.finetune_lr,
            cosine: false,
            ..self.train_config()?
        };
        if cfg.epochs > 0 && cfg.lr < 0.0 {
            bail!("fine-tune learning rate must be ≥ 0");
        }
        Ok(cfg)
    }
}

/// Recursively overlays `over` onto `base`; tables merge, values replace.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}
