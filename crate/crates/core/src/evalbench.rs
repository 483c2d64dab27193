//! Error metrics, the ICP baseline with optional feature-matched
//! initialisation, the outlier sweep and the timing harness.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datagen::{derive_seed, unit_ball_point, CloudPair, DatasetSample};
use crate::features::{point_descriptors, prepare_cloud, FeatureSpec};
use crate::geom::{
    knn, matrix_to_euler, nearest_one, rotation_angle, KdTree, Point, PointCloud, RigidTransform,
};
use crate::separation::{register_pair, Model};
use crate::{Error, Result};

/// How per-sample rotation errors are turned into Euler components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RotationErrorConvention {
    /// Euler angles of `R_gtᵀ·R_pred`.
    #[default]
    RelativeEuler,
    /// Wrapped differences of the predicted and true Euler angles.
    AbsoluteEuler,
}

/// Error summary over a set of predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub tag: String,
    pub samples: usize,
    pub rmse_rot_deg: f64,
    pub mae_rot_deg: f64,
    pub rmse_trans: f64,
    pub mae_trans: f64,
    pub me_t: f64,
}

impl MetricReport {
    pub fn evaluate(tag: impl Into<String>, predictions: &[RigidTransform], truths: &[RigidTransform]) -> Result<Self> {
        let rot_p: Vec<Matrix3<f64>> = predictions.iter().map(|t| t.rotation).collect();
        let rot_g: Vec<Matrix3<f64>> = truths.iter().map(|t| t.rotation).collect();
        let tr_p: Vec<Vector3<f64>> = predictions.iter().map(|t| t.translation).collect();
        let tr_g: Vec<Vector3<f64>> = truths.iter().map(|t| t.translation).collect();
        let (rmse_rot_deg, mae_rot_deg) = rotation_metrics(&rot_p, &rot_g)?;
        let (rmse_trans, mae_trans) = translation_metrics(&tr_p, &tr_g)?;
        Ok(MetricReport {
            tag: tag.into(),
            samples: predictions.len(),
            rmse_rot_deg,
            mae_rot_deg,
            rmse_trans,
            mae_trans,
            me_t: se3_mean_error(predictions, truths)?,
        })
    }

    pub const CSV_HEADER: &'static str = "tag,samples,rmse_rot_deg,mae_rot_deg,rmse_trans,mae_trans,me_t";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.tag, self.samples, self.rmse_rot_deg, self.mae_rot_deg, self.rmse_trans, self.mae_trans, self.me_t
        )
    }
}

pub fn reports_csv(reports: &[MetricReport]) -> String {
    let mut out = format!("{}\n", MetricReport::CSV_HEADER);
    for r in reports {
        writeln!(out, "{}", r.csv_row()).expect("write to string");
    }
    out
}

/// Aligned text table of reports.
pub fn reports_table(reports: &[MetricReport]) -> String {
    let w = reports.iter().map(|r| r.tag.len()).max().unwrap_or(0).max(6);
    let mut out = format!(
        "{:<w$}  {:>7}  {:>10}  {:>10}  {:>10}  {:>10}  {:>10}\n",
        "method", "samples", "RMSE(R)", "MAE(R)", "RMSE(t)", "MAE(t)", "ME(T)"
    );
    for r in reports {
        writeln!(
            out,
            "{:<w$}  {:>7}  {:>10.4}  {:>10.4}  {:>10.4}  {:>10.4}  {:>10.4}",
            r.tag, r.samples, r.rmse_rot_deg, r.mae_rot_deg, r.rmse_trans, r.mae_trans, r.me_t
        )
        .expect("write to string");
    }
    out
}

fn check_pairs(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("{a} predictions for {b} ground truths")));
    }
    if a == 0 {
        return Err(Error::InvalidArgument(format!("{op}: no samples")));
    }
    Ok(())
}

/// RMSE and MAE over a flat list of component errors.
fn rmse_mae(errors: &[f64]) -> (f64, f64) {
    let n = errors.len() as f64;
    let mse = errors.iter().map(|e| e * e).sum::<f64>() / n;
    let mae = errors.iter().map(|e| e.abs()).sum::<f64>() / n;
    (mse.sqrt(), mae)
}

/// Wraps an angle in degrees to `(−180, 180]`.
fn wrap_deg(a: f64) -> f64 {
    let w = (a + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 {
        180.0
    } else {
        w
    }
}

/// `(RMSE, MAE)` in degrees over all `3n` Euler components.
pub fn rotation_metrics(predictions: &[Matrix3<f64>], truths: &[Matrix3<f64>]) -> Result<(f64, f64)> {
    rotation_metrics_with(predictions, truths, RotationErrorConvention::default())
}

pub fn rotation_metrics_with(
    predictions: &[Matrix3<f64>],
    truths: &[Matrix3<f64>],
    convention: RotationErrorConvention,
) -> Result<(f64, f64)> {
    check_pairs("rotation_metrics", predictions.len(), truths.len())?;
    let errors: Vec<f64> = predictions
        .iter()
        .zip(truths)
        .flat_map(|(p, g)| match convention {
            RotationErrorConvention::RelativeEuler => matrix_to_euler(&(g.transpose() * p)).map(f64::to_degrees),
            RotationErrorConvention::AbsoluteEuler => {
                let (ep, eg) = (matrix_to_euler(p), matrix_to_euler(g));
                [0, 1, 2].map(|i| wrap_deg((ep[i] - eg[i]).to_degrees()))
            }
        })
        .collect();
    Ok(rmse_mae(&errors))
}

/// `(RMSE, MAE)` over all `3n` components of `t_pred − t_gt`.
pub fn translation_metrics(predictions: &[Vector3<f64>], truths: &[Vector3<f64>]) -> Result<(f64, f64)> {
    check_pairs("translation_metrics", predictions.len(), truths.len())?;
    let errors: Vec<f64> = predictions
        .iter()
        .zip(truths)
        .flat_map(|(p, g)| (p - g).iter().copied().collect::<Vec<_>>())
        .collect();
    Ok(rmse_mae(&errors))
}

/// Error of one prediction: geodesic angle of `T_gt⁻¹·T_pred` in degrees
/// plus the norm of its translation.
pub fn se3_error(prediction: &RigidTransform, truth: &RigidTransform) -> f64 {
    let delta = truth.inverse().compose(prediction);
    rotation_angle(&delta.rotation).to_degrees() + delta.translation.norm()
}

/// Mean of [`se3_error`] over the samples.
pub fn se3_mean_error(predictions: &[RigidTransform], truths: &[RigidTransform]) -> Result<f64> {
    check_pairs("se3_mean_error", predictions.len(), truths.len())?;
    Ok(predictions.iter().zip(truths).map(|(p, g)| se3_error(p, g)).sum::<f64>() / predictions.len() as f64)
}

/// Least-squares rigid motion taking `src[i]` onto `dst[i]`: SVD of the
/// cross-covariance with a reflection guard.
pub fn kabsch(src: &[Point], dst: &[Point]) -> Result<RigidTransform> {
    if src.len() != dst.len() {
        return Err(Error::shape("kabsch", format!("{} vs {} points", src.len(), dst.len())));
    }
    if src.len() < 3 {
        return Err(Error::InvalidArgument(format!("kabsch needs 3 pairs, got {}", src.len())));
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Point>() / n;
    let cd = dst.iter().sum::<Point>() / n;
    let h: Matrix3<f64> = src
        .iter()
        .zip(dst)
        .map(|(s, d)| (s - cs) * (d - cd).transpose())
        .sum();
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.expect("requested U"), svd.v_t.expect("requested Vᵀ"));
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    RigidTransform::new(r, cd - r * cs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcpConfig {
    pub max_iters: usize,
    /// Stop when the mean correspondence distance changes by less than this.
    pub tol: f64,
    /// Fraction of the farthest correspondences dropped before each fit.
    pub trim: Option<f64>,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            max_iters: 50,
            tol: 1e-8,
            trim: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcpResult {
    pub transform: RigidTransform,
    /// Fits performed.
    pub iterations: usize,
    /// Mean nearest-neighbour distance under `transform`.
    pub mean_distance: f64,
}

/// Nearest target index and distance for every moved source point.
fn correspondences(source: &PointCloud, tree: &KdTree<'_>, target: &PointCloud, t: &RigidTransform) -> (Vec<usize>, Vec<f64>) {
    source
        .points()
        .iter()
        .map(|p| {
            let q = t.apply_point(p);
            let j = nearest_one(tree, &q);
            (j, (target.point(j) - q).norm())
        })
        .unzip()
}

/// Plain point-to-point ICP.
pub fn icp(source: &PointCloud, target: &PointCloud, init: &RigidTransform, max_iters: usize, tol: f64) -> Result<RigidTransform> {
    let cfg = IcpConfig {
        max_iters,
        tol,
        trim: None,
    };
    Ok(icp_with(source, target, init, &cfg)?.transform)
}

/// ICP returning the pose with the lowest mean correspondence distance seen,
/// the initial pose included.
pub fn icp_with(source: &PointCloud, target: &PointCloud, init: &RigidTransform, cfg: &IcpConfig) -> Result<IcpResult> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::InvalidArgument("icp needs nonempty clouds".into()));
    }
    if let Some(f) = cfg.trim {
        if !(0.0..1.0).contains(&f) {
            return Err(Error::InvalidArgument(format!("trim fraction {f} outside [0, 1)")));
        }
    }
    let tree = KdTree::build(target.points());
    let mut current = *init;
    let (mut nn, mut dist) = correspondences(source, &tree, target, &current);
    let mut prev = mean(&dist);
    let mut best = IcpResult {
        transform: current,
        iterations: 0,
        mean_distance: prev,
    };
    for iter in 1..=cfg.max_iters {
        let mut keep: Vec<usize> = (0..source.len()).collect();
        if let Some(f) = cfg.trim {
            keep.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
            keep.truncate(((1.0 - f) * source.len() as f64).ceil() as usize);
        }
        let src: Vec<Point> = keep.iter().map(|&i| *source.point(i)).collect();
        let dst: Vec<Point> = keep.iter().map(|&i| *target.point(nn[i])).collect();
        let Ok(next) = kabsch(&src, &dst) else {
            break;
        };
        current = next;
        (nn, dist) = correspondences(source, &tree, target, &current);
        let d = mean(&dist);
        if d < best.mean_distance {
            best = IcpResult {
                transform: current,
                iterations: iter,
                mean_distance: d,
            };
        }
        if (prev - d).abs() < cfg.tol {
            break;
        }
        prev = d;
    }
    Ok(best)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Neighbourhood size for matching descriptors.
pub const MATCH_K: usize = 16;

/// Pose from mutual nearest neighbours in descriptor space, meant as an ICP
/// initialisation.
pub fn feature_match_init(source: &PointCloud, target: &PointCloud, spec: &FeatureSpec) -> Result<RigidTransform> {
    let describe = |c: &PointCloud| -> Result<(PointCloud, Vec<Vec<f64>>)> {
        let k = MATCH_K.min(c.len().saturating_sub(1));
        if k == 0 {
            return Err(Error::InvalidArgument("feature matching needs at least two points".into()));
        }
        let c = prepare_cloud(c, spec, k)?;
        let table = knn(&c, k)?;
        let d = point_descriptors(&c, spec, &table)?;
        Ok((c, d))
    };
    let (sc, sd) = describe(source)?;
    let (tc, td) = describe(target)?;
    let nearest = |q: &[f64], pool: &[Vec<f64>]| -> usize {
        let mut best = (f64::INFINITY, 0);
        for (j, p) in pool.iter().enumerate() {
            let d: f64 = q.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, j);
            }
        }
        best.1
    };
    let forward: Vec<usize> = sd.par_iter().map(|q| nearest(q, &td)).collect();
    let backward: Vec<usize> = td.par_iter().map(|q| nearest(q, &sd)).collect();
    let (src, dst): (Vec<Point>, Vec<Point>) = forward
        .iter()
        .enumerate()
        .filter(|&(i, &j)| backward[j] == i)
        .map(|(i, &j)| (*sc.point(i), *tc.point(j)))
        .unzip();
    if src.len() < 3 {
        return Err(Error::Degenerate(format!("only {} mutual feature matches", src.len())));
    }
    kabsch(&src, &dst)
}

/// How the ICP baseline is initialised.
#[derive(Clone, Debug, PartialEq)]
pub enum IcpInit {
    Identity,
    Features(FeatureSpec),
}

/// Ground truths of a sample list.
pub fn truths(samples: &[DatasetSample]) -> Vec<RigidTransform> {
    samples.iter().map(|s| s.gt).collect()
}

/// Registers every sample with `model`.
pub fn predict_model(model: &Model, samples: &[DatasetSample]) -> Result<Vec<RigidTransform>> {
    samples
        .par_iter()
        .map(|s| Ok(register_pair(&s.source, &s.target, model)?.transform))
        .collect()
}

/// ICP on every sample.
pub fn predict_icp(samples: &[DatasetSample], init: &IcpInit, cfg: &IcpConfig) -> Result<Vec<RigidTransform>> {
    samples
        .par_iter()
        .map(|s| {
            let start = match init {
                IcpInit::Identity => RigidTransform::identity(),
                IcpInit::Features(spec) => feature_match_init(&s.source, &s.target, spec)?,
            };
            Ok(icp_with(&s.source, &s.target, &start, cfg)?.transform)
        })
        .collect()
}

pub fn evaluate_model(tag: &str, model: &Model, samples: &[DatasetSample]) -> Result<MetricReport> {
    MetricReport::evaluate(tag, &predict_model(model, samples)?, &truths(samples))
}

pub fn evaluate_icp(tag: &str, samples: &[DatasetSample], init: &IcpInit, cfg: &IcpConfig) -> Result<MetricReport> {
    MetricReport::evaluate(tag, &predict_icp(samples, init, cfg)?, &truths(samples))
}

/// Replaces `⌊ratio·N/100⌋` points with uniform samples from the unit ball.
/// For a fixed `rng` seed the corrupted set at a higher ratio contains the
/// one at a lower ratio.
pub fn corrupt_with_outliers(cloud: &PointCloud, ratio: f64, rng: &mut ChaCha8Rng) -> Result<PointCloud> {
    if !(0.0..100.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!("outlier ratio {ratio} outside [0, 100)")));
    }
    let n = cloud.len();
    let count = (ratio * n as f64 / 100.0).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut points = cloud.points().to_vec();
    for &i in &order[..count] {
        points[i] = unit_ball_point(rng);
    }
    if count == 0 {
        return Ok(cloud.clone());
    }
    PointCloud::new(points)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub ratio: f64,
    pub model: MetricReport,
    pub icp: MetricReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// `ratio` then the model and ICP metrics, one row per ratio.
    pub fn csv(&self) -> String {
        let mut out = String::from(
            "ratio,model_rmse_rot_deg,model_mae_rot_deg,model_rmse_trans,model_mae_trans,model_me_t,\
             icp_rmse_rot_deg,icp_mae_rot_deg,icp_rmse_trans,icp_mae_trans,icp_me_t\n",
        );
        for r in &self.rows {
            let m = &r.model;
            let i = &r.icp;
            writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.ratio,
                m.rmse_rot_deg,
                m.mae_rot_deg,
                m.rmse_trans,
                m.mae_trans,
                m.me_t,
                i.rmse_rot_deg,
                i.mae_rot_deg,
                i.rmse_trans,
                i.mae_trans,
                i.me_t
            )
            .expect("write to string");
        }
        out
    }

    /// For each metric column, whether it never decreases as the ratio grows.
    pub fn monotone(&self) -> Vec<(String, bool)> {
        let columns: [(&str, fn(&MetricReport) -> f64); 5] = [
            ("rmse_rot_deg", |r| r.rmse_rot_deg),
            ("mae_rot_deg", |r| r.mae_rot_deg),
            ("rmse_trans", |r| r.rmse_trans),
            ("mae_trans", |r| r.mae_trans),
            ("me_t", |r| r.me_t),
        ];
        let mut out = Vec::new();
        for (who, pick) in [("model", 0), ("icp", 1)] {
            for (name, f) in columns {
                let vals: Vec<f64> = self
                    .rows
                    .iter()
                    .map(|r| f(if pick == 0 { &r.model } else { &r.icp }))
                    .collect();
                out.push((format!("{who}_{name}"), vals.windows(2).all(|w| w[1] >= w[0])));
            }
        }
        out
    }
}

/// Corrupts both clouds of every sample at each ratio and evaluates the
/// model and identity-initialised ICP.
pub fn outlier_sweep(model: &Model, samples: &[DatasetSample], ratios: &[f64], seed: u64) -> Result<SweepTable> {
    let mut rows = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let corrupted: Vec<DatasetSample> = samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut rs = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, i as u64, 0]));
                let mut rt = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, i as u64, 1]));
                Ok(DatasetSample {
                    source: corrupt_with_outliers(&s.source, ratio, &mut rs)?,
                    target: corrupt_with_outliers(&s.target, ratio, &mut rt)?,
                    ..s.clone()
                })
            })
            .collect::<Result<_>>()?;
        rows.push(SweepRow {
            ratio,
            model: evaluate_model(&format!("upcr@{ratio}"), model, &corrupted)?,
            icp: evaluate_icp(&format!("icp@{ratio}"), &corrupted, &IcpInit::Identity, &IcpConfig::default())?,
        });
    }
    Ok(SweepTable { rows })
}

/// Wall-clock statistics in milliseconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Timing {
    pub mean_ms: f64,
    pub std_ms: f64,
    pub repetitions: usize,
}

/// Runs `f` once to warm up, then `repetitions` timed times on a
/// single-thread pool.
pub fn time_it<F>(repetitions: usize, mut f: F) -> Result<Timing>
where
    F: FnMut() -> Result<()> + Send,
{
    if repetitions < 3 {
        return Err(Error::InvalidArgument(format!("timing needs ≥ 3 repetitions, got {repetitions}")));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| {
        f()?;
        let mut ms = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let start = Instant::now();
            f()?;
            ms.push(start.elapsed().as_secs_f64() * 1e3);
        }
        let mean = ms.iter().sum::<f64>() / ms.len() as f64;
        let var = ms.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (ms.len() - 1) as f64;
        Ok(Timing {
            mean_ms: mean,
            std_ms: var.sqrt(),
            repetitions,
        })
    })
}

/// Inference time of `model` on one pair, feature computation included.
pub fn time_model(model: &Model, pair: &CloudPair, repetitions: usize) -> Result<Timing> {
    time_it(repetitions, || register_pair(&pair.source, &pair.target, model).map(|_| ()))
}

/// Identity-initialised ICP time on one pair.
pub fn time_icp(pair: &CloudPair, repetitions: usize) -> Result<Timing> {
    time_it(repetitions, || {
        icp_with(&pair.source, &pair.target, &RigidTransform::identity(), &IcpConfig::default()).map(|_| ())
    })
}
