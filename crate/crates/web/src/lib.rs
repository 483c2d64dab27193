//! Browser bindings for the static demo page in `www/`.
//!
//! Clouds cross the boundary as flat `[x0, y0, z0, x1, …]` arrays and
//! transforms as the 12 row-major entries of a 3×4 matrix.

use wasm_bindgen::prelude::*;

use upcr::datagen::{make_sample, Pairing, PoseRegime, Protocol, Setting, ShapeId, NUM_CATEGORIES};
use upcr::evalbench::{feature_match_init, icp_with, IcpConfig, MATCH_K};
use upcr::features::{point_descriptors, prepare_cloud, FeatureKind, FeatureSpec};
use upcr::geom::{apply_transform, euler_to_matrix, knn, rotation_angle, Point, PointCloud, RigidTransform};

fn cloud_from_flat(flat: &[f64]) -> Result<PointCloud, String> {
    if flat.is_empty() || flat.len() % 3 != 0 {
        return Err(format!("expected a non-empty multiple of 3 coordinates, got {}", flat.len()));
    }
    let coords: Vec<[f64; 3]> = flat.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
    PointCloud::from_xyz(&coords).map_err(|e| e.to_string())
}

fn transform_from_flat(flat: &[f64]) -> Result<RigidTransform, String> {
    if flat.len() != 12 {
        return Err(format!("expected 12 transform entries, got {}", flat.len()));
    }
    let mut rows = [[0.0; 4]; 3];
    for (i, v) in flat.iter().enumerate() {
        rows[i / 4][i % 4] = *v;
    }
    RigidTransform::from_rows(&rows).map_err(|e| e.to_string())
}

fn flat_transform(t: &RigidTransform) -> Vec<f64> {
    t.to_rows().iter().flatten().copied().collect()
}

/// A generated source/target pair with its ground-truth transform.
#[wasm_bindgen]
pub struct Pair {
    source: Vec<f64>,
    target: Vec<f64>,
    gt: Vec<f64>,
}

#[wasm_bindgen]
impl Pair {
    pub fn source(&self) -> Vec<f64> {
        self.source.clone()
    }

    pub fn target(&self) -> Vec<f64> {
        self.target.clone()
    }

    pub fn gt(&self) -> Vec<f64> {
        self.gt.clone()
    }
}

pub fn generate_pair_impl(category: u32, seed: u32, n_points: usize, regime: &str, partial: bool, noisy: bool) -> Result<Pair, String> {
    let setting = if noisy { Setting::Nd } else { Setting::Upc };
    let protocol = Protocol {
        pairing: if partial { Pairing::Partial } else { Pairing::Consistent },
        pose_regime: regime.parse::<PoseRegime>().map_err(|e| e.to_string())?,
        n_points,
        partial_keep: n_points * 3 / 4,
        ..Protocol::new(setting)
    };
    let shape = ShapeId {
        category: category % NUM_CATEGORIES,
        index: 0,
    };
    let s = make_sample(&protocol, shape, seed as u64).map_err(|e| e.to_string())?;
    Ok(Pair {
        source: s.source.flat(),
        target: s.target.flat(),
        gt: flat_transform(&s.gt),
    })
}

/// Draws a pair of the given category under the `modelnet` or `7scenes`
/// pose regime.
#[wasm_bindgen]
pub fn generate_pair(category: u32, seed: u32, n_points: usize, regime: &str, partial: bool, noisy: bool) -> Result<Pair, JsError> {
    generate_pair_impl(category, seed, n_points, regime, partial, noisy).map_err(|e| JsError::new(&e))
}

pub fn register_impl(source: &[f64], target: &[f64], method: &str) -> Result<Vec<f64>, String> {
    let src = cloud_from_flat(source)?;
    let tgt = cloud_from_flat(target)?;
    let init = match method {
        "icp" => RigidTransform::identity(),
        "icp+pfh" => feature_match_init(&src, &tgt, &FeatureSpec::new(FeatureKind::Pfh)).map_err(|e| e.to_string())?,
        other => return Err(format!("unknown method {other:?}; use icp or icp+pfh")),
    };
    let result = icp_with(&src, &tgt, &init, &IcpConfig::default()).map_err(|e| e.to_string())?;
    Ok(flat_transform(&result.transform))
}

/// Registers `source` onto `target` with identity-initialised ICP (`icp`)
/// or ICP started from PFH feature matches (`icp+pfh`).
#[wasm_bindgen]
pub fn register(source: &[f64], target: &[f64], method: &str) -> Result<Vec<f64>, JsError> {
    register_impl(source, target, method).map_err(|e| JsError::new(&e))
}

pub fn apply_impl(transform: &[f64], cloud: &[f64]) -> Result<Vec<f64>, String> {
    Ok(apply_transform(&transform_from_flat(transform)?, &cloud_from_flat(cloud)?).flat())
}

#[wasm_bindgen]
pub fn apply(transform: &[f64], cloud: &[f64]) -> Result<Vec<f64>, JsError> {
    apply_impl(transform, cloud).map_err(|e| JsError::new(&e))
}

pub fn rotation_error_impl(predicted: &[f64], truth: &[f64]) -> Result<f64, String> {
    let p = transform_from_flat(predicted)?;
    let t = transform_from_flat(truth)?;
    Ok(rotation_angle(&(t.rotation.transpose() * p.rotation)).to_degrees())
}

/// Geodesic angle in degrees between the rotations of two transforms.
#[wasm_bindgen]
pub fn rotation_error_deg(predicted: &[f64], truth: &[f64]) -> Result<f64, JsError> {
    rotation_error_impl(predicted, truth).map_err(|e| JsError::new(&e))
}

pub fn invariance_impl(cloud: &[f64], alpha: f64, beta: f64, gamma: f64, feature: &str) -> Result<Vec<f64>, String> {
    let c = cloud_from_flat(cloud)?;
    let spec = FeatureSpec::new(feature.parse::<FeatureKind>().map_err(|e| e.to_string())?);
    let rotation = euler_to_matrix(alpha.to_radians(), beta.to_radians(), gamma.to_radians());
    let t = RigidTransform::new(rotation, Point::new(0.3, -0.2, 0.1)).map_err(|e| e.to_string())?;
    let moved = apply_transform(&t, &c);
    let k = MATCH_K.min(c.len().saturating_sub(1)).max(1);
    let describe = |p: &PointCloud| -> Result<Vec<Vec<f64>>, String> {
        let p = prepare_cloud(p, &spec, k).map_err(|e| e.to_string())?;
        let table = knn(&p, k).map_err(|e| e.to_string())?;
        point_descriptors(&p, &spec, &table).map_err(|e| e.to_string())
    };
    let (a, b) = (describe(&c)?, describe(&moved)?);
    let feature_diff = a
        .iter()
        .zip(&b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max);
    let coord_diff = c
        .flat()
        .iter()
        .zip(moved.flat())
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max);
    Ok(vec![feature_diff, coord_diff])
}

/// Moves `cloud` by the given Euler angles (degrees) plus a fixed shift and
/// returns `[max descriptor change, max coordinate change]` for the feature
/// kind: descriptors stay put while the coordinates move.
#[wasm_bindgen]
pub fn invariance_check(cloud: &[f64], alpha: f64, beta: f64, gamma: f64, feature: &str) -> Result<Vec<f64>, JsError> {
    invariance_impl(cloud, alpha, beta, gamma, feature).map_err(|e| JsError::new(&e))
}
