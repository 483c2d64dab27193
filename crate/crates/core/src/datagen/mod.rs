//! Synthetic data, evaluation protocols, dataset splits and cloud files.
//!
//! Every sample is reproducible from a 64-bit dataset seed: per-sample seeds
//! are derived with SplitMix64 from the seed, the category and the shape
//! index, and all randomness flows through [`ChaCha8Rng`], whose output is
//! fixed across platforms.

mod io;
mod shapes;

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::geom::{apply_transform, euler_to_matrix, Point, PointCloud, RigidTransform};
use crate::{Error, Result};

pub use io::{format_cloud, format_sig9, load_cloud, parse_cloud, save_cloud, CloudFormat};
pub use shapes::{normalize, synth_shape, MIN_POINTS, NUM_CATEGORIES};

pub use rand_chacha::ChaCha8Rng as SampleRng;

/// Experiment setting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Setting {
    /// Unseen point clouds: shape-disjoint split within every category.
    Upc,
    /// Unseen categories: category-disjoint split.
    Uc,
    /// Noisy data: the UPC split with Gaussian noise.
    Nd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pairing {
    Consistent,
    Partial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoseRegime {
    /// Per-axis Euler angles in [0°, 45°], translations in [−0.5, 0.5].
    ModelNet,
    /// One axis rotated by [0°, 60°], one axis translated by [0, 1].
    SevenScenes,
}

macro_rules! named_enum {
    ($ty:ty, $($variant:path => $name:literal),+) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self { $($variant => $name),+ }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($name => Ok($variant),)+
                    other => Err(Error::InvalidArgument(format!(
                        "unknown {} `{other}`", stringify!($ty).to_ascii_lowercase()
                    ))),
                }
            }
        }
    };
}

named_enum!(Setting, Setting::Upc => "upc", Setting::Uc => "uc", Setting::Nd => "nd");
named_enum!(Pairing, Pairing::Consistent => "consistent", Pairing::Partial => "partial");
named_enum!(PoseRegime, PoseRegime::ModelNet => "modelnet", PoseRegime::SevenScenes => "7scenes");

/// Clipped Gaussian coordinate noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub clip: f64,
    /// Perturb the source as well as the target.
    pub both_clouds: bool,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            sigma: 0.01,
            clip: 0.05,
            both_clouds: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Protocol {
    pub setting: Setting,
    pub pairing: Pairing,
    pub pose_regime: PoseRegime,
    pub noise: Option<NoiseSpec>,
    /// Points kept by each partial crop.
    pub partial_keep: usize,
    /// Points sampled per shape.
    pub n_points: usize,
}

impl Protocol {
    /// 1024-point consistent pairs in the ModelNet regime; ND adds default noise.
    pub fn new(setting: Setting) -> Self {
        Protocol {
            setting,
            pairing: Pairing::Consistent,
            pose_regime: PoseRegime::ModelNet,
            noise: (setting == Setting::Nd).then(NoiseSpec::default),
            partial_keep: 768,
            n_points: 1024,
        }
    }

    /// 256-point clouds, partial crops keep 192.
    pub fn desk(setting: Setting) -> Self {
        Protocol {
            partial_keep: 192,
            n_points: 256,
            ..Self::new(setting)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_points < MIN_POINTS {
            return Err(Error::InvalidArgument(format!(
                "protocol needs at least {MIN_POINTS} points per shape"
            )));
        }
        if self.setting == Setting::Nd && self.noise.is_none() {
            return Err(Error::InvalidArgument("the ND setting requires noise".into()));
        }
        if let Some(n) = self.noise {
            if !(n.sigma > 0.0 && n.clip > 0.0) {
                return Err(Error::InvalidArgument("noise sigma and clip must be positive".into()));
            }
        }
        if self.pairing == Pairing::Partial && !(1..self.n_points).contains(&self.partial_keep) {
            return Err(Error::InvalidArgument(format!(
                "partial crops must keep between 1 and {} points, got {}",
                self.n_points - 1,
                self.partial_keep
            )));
        }
        Ok(())
    }
}

/// One shape of the dataset: a category and an index within it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ShapeId {
    pub category: u32,
    pub index: u32,
}

/// Source and target clouds with no pose information.
#[derive(Clone, Debug, PartialEq)]
pub struct CloudPair {
    pub source: PointCloud,
    pub target: PointCloud,
}

/// A labelled pair: `target ≈ gt(source)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSample {
    pub source: PointCloud,
    pub target: PointCloud,
    pub gt: RigidTransform,
    pub shape: ShapeId,
    pub setting: Setting,
    pub pairing: Pairing,
}

impl DatasetSample {
    /// The unlabelled view used by training.
    pub fn clouds(&self) -> CloudPair {
        CloudPair {
            source: self.source.clone(),
            target: self.target.clone(),
        }
    }
}

/// SplitMix64 fold of `parts` into one seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut state = 0x243f_6a88_85a3_08d3u64;
    for &p in parts {
        state ^= p;
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        state = z ^ (z >> 31);
    }
    state
}

pub fn sample_transform(regime: PoseRegime, rng: &mut impl Rng) -> RigidTransform {
    match regime {
        PoseRegime::ModelNet => {
            let max = 45f64.to_radians();
            let (a, b, g) = (
                rng.random_range(0.0..=max),
                rng.random_range(0.0..=max),
                rng.random_range(0.0..=max),
            );
            let t = Vector3::new(
                rng.random_range(-0.5..=0.5),
                rng.random_range(-0.5..=0.5),
                rng.random_range(-0.5..=0.5),
            );
            RigidTransform {
                rotation: euler_to_matrix(a, b, g),
                translation: t,
            }
        }
        PoseRegime::SevenScenes => {
            let mut angles = [0.0; 3];
            angles[rng.random_range(0..3)] = rng.random_range(0.0..=60f64.to_radians());
            let mut t = Vector3::zeros();
            t[rng.random_range(0..3)] = rng.random_range(0.0..=1.0);
            RigidTransform {
                rotation: euler_to_matrix(angles[0], angles[1], angles[2]),
                translation: t,
            }
        }
    }
}

/// Adds i.i.d. `N(0, σ²)` noise, each draw clamped to `[−clip, clip]`.
pub fn add_noise(cloud: &PointCloud, sigma: f64, clip: f64, rng: &mut impl Rng) -> Result<PointCloud> {
    if !(sigma > 0.0 && clip > 0.0) {
        return Err(Error::InvalidArgument("noise sigma and clip must be positive".into()));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut draw = || normal.sample(rng).clamp(-clip, clip);
    let points = cloud
        .points()
        .iter()
        .map(|p| p + Vector3::new(draw(), draw(), draw()))
        .collect();
    PointCloud::new(points)
}

/// Uniform point in the unit ball.
pub fn unit_ball_point(rng: &mut impl Rng) -> Point {
    loop {
        let p = Point::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        if p.norm_squared() <= 1.0 {
            return p;
        }
    }
}

/// The `keep` points nearest to an anchor drawn uniformly in the unit ball,
/// in their original order.
pub fn make_partial(cloud: &PointCloud, keep: usize, rng: &mut impl Rng) -> Result<PointCloud> {
    let anchor = unit_ball_point(rng);
    partial_around(cloud, keep, &anchor)
}

pub fn partial_around(cloud: &PointCloud, keep: usize, anchor: &Point) -> Result<PointCloud> {
    if keep == 0 || keep >= cloud.len() {
        return Err(Error::InvalidArgument(format!(
            "partial crop must keep between 1 and {} points, got {keep}",
            cloud.len() - 1
        )));
    }
    let mut order: Vec<(f64, usize)> = cloud
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| ((p - anchor).norm_squared(), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut kept: Vec<usize> = order[..keep].iter().map(|&(_, i)| i).collect();
    kept.sort_unstable();
    cloud.select(&kept)
}

/// Train/test shapes. UC splits categories in half by index; UPC and ND keep
/// the first 80% of each category's shape indices for training.
pub fn split_dataset(setting: Setting, n_categories: u32, per_category: u32) -> Result<(Vec<ShapeId>, Vec<ShapeId>)> {
    if n_categories == 0 || per_category == 0 {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let ids = |cats: std::ops::Range<u32>, idx: std::ops::Range<u32>| -> Vec<ShapeId> {
        cats.flat_map(|category| idx.clone().map(move |index| ShapeId { category, index }))
            .collect()
    };
    match setting {
        Setting::Uc => {
            if n_categories < 2 {
                return Err(Error::InvalidArgument("the UC split needs at least 2 categories".into()));
            }
            let half = n_categories / 2;
            Ok((ids(0..half, 0..per_category), ids(half..n_categories, 0..per_category)))
        }
        Setting::Upc | Setting::Nd => {
            if per_category < 2 {
                return Err(Error::InvalidArgument("shape-disjoint splits need 2 shapes per category".into()));
            }
            let cut = (per_category * 4 / 5).clamp(1, per_category - 1);
            Ok((ids(0..n_categories, 0..cut), ids(0..n_categories, cut..per_category)))
        }
    }
}

/// The first `count` ids taken round-robin over categories.
pub fn balanced_subset(ids: &[ShapeId], count: usize) -> Vec<ShapeId> {
    let mut by_cat: std::collections::BTreeMap<u32, Vec<ShapeId>> = Default::default();
    for id in ids {
        by_cat.entry(id.category).or_default().push(*id);
    }
    let mut out = Vec::with_capacity(count.min(ids.len()));
    let mut round = 0;
    while out.len() < count.min(ids.len()) {
        for list in by_cat.values() {
            if let Some(id) = list.get(round) {
                if out.len() < count {
                    out.push(*id);
                }
            }
        }
        round += 1;
    }
    out
}

const SHAPE_STREAM: u64 = 1;
const PAIR_STREAM: u64 = 2;

/// The pair for one shape under `protocol`.
pub fn make_sample(protocol: &Protocol, shape: ShapeId, seed: u64) -> Result<DatasetSample> {
    protocol.validate()?;
    let key = [seed, shape.category as u64, shape.index as u64];
    let mut shape_rng = ChaCha8Rng::seed_from_u64(derive_seed(&[key[0], key[1], key[2], SHAPE_STREAM]));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[key[0], key[1], key[2], PAIR_STREAM]));
    let base = synth_shape(shape.category, protocol.n_points, &mut shape_rng)?;
    let gt = sample_transform(protocol.pose_regime, &mut rng);
    let (mut source, mut target) = match protocol.pairing {
        Pairing::Consistent => {
            let target = apply_transform(&gt, &base);
            (base, target)
        }
        Pairing::Partial => {
            let source = make_partial(&base, protocol.partial_keep, &mut rng)?;
            let target = make_partial(&apply_transform(&gt, &base), protocol.partial_keep, &mut rng)?;
            (source, target)
        }
    };
    if let Some(n) = protocol.noise {
        if n.both_clouds {
            source = add_noise(&source, n.sigma, n.clip, &mut rng)?;
        }
        target = add_noise(&target, n.sigma, n.clip, &mut rng)?;
    }
    Ok(DatasetSample {
        source,
        target,
        gt,
        shape,
        setting: protocol.setting,
        pairing: protocol.pairing,
    })
}

pub fn make_samples(protocol: &Protocol, shapes: &[ShapeId], seed: u64) -> Result<Vec<DatasetSample>> {
    shapes.par_iter().map(|&s| make_sample(protocol, s, seed)).collect()
}

/// Size and seed of a generated dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub protocol: Protocol,
    pub n_categories: u32,
    pub shapes_per_category: u32,
    /// Caps on the split sizes; ids are taken round-robin over categories.
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl DatasetConfig {
    /// 40 categories, 256 points, 200 training and 50 test pairs.
    pub fn desk(setting: Setting, seed: u64) -> Self {
        DatasetConfig {
            protocol: Protocol::desk(setting),
            n_categories: NUM_CATEGORIES,
            shapes_per_category: 7,
            n_train: 200,
            n_test: 50,
            seed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<DatasetSample>,
    pub test: Vec<DatasetSample>,
}

pub fn build_dataset(config: &DatasetConfig) -> Result<Dataset> {
    let (train, test) = split_dataset(config.protocol.setting, config.n_categories, config.shapes_per_category)?;
    let train = balanced_subset(&train, config.n_train);
    let test = balanced_subset(&test, config.n_test);
    Ok(Dataset {
        train: make_samples(&config.protocol, &train, config.seed)?,
        test: make_samples(&config.protocol, &test, config.seed)?,
    })
}
