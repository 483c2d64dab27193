//! Rigid-motion-invariant point descriptors and the invariant point embedding.
//!
//! Four descriptor families are available: the three-distance feature built
//! from the cloud centroid, PPF (point-pair features), SPFH (per-point
//! Darboux-angle histograms) and PFH (joint histograms over all pairs of a
//! neighbourhood). Combined kinds concatenate their parts in the order of
//! their name.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, SymmetricEigen};

use crate::autodiff::{Tape, Tensor, Var};
use crate::geom::{centroid, knn, NeighborTable, Point, PointCloud};
use crate::{Error, Result};

pub const SPFH_BINS: usize = 11;
pub const PFH_BINS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Distance,
    Ppf,
    Spfh,
    Pfh,
    DistancePpf,
    DistanceSpfh,
    DistancePpfSpfh,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 7] = [
        FeatureKind::Distance,
        FeatureKind::Ppf,
        FeatureKind::Spfh,
        FeatureKind::Pfh,
        FeatureKind::DistancePpf,
        FeatureKind::DistanceSpfh,
        FeatureKind::DistancePpfSpfh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Distance => "distance",
            FeatureKind::Ppf => "ppf",
            FeatureKind::Spfh => "spfh",
            FeatureKind::Pfh => "pfh",
            FeatureKind::DistancePpf => "distance+ppf",
            FeatureKind::DistanceSpfh => "distance+spfh",
            FeatureKind::DistancePpfSpfh => "distance+ppf+spfh",
        }
    }

    pub fn code(self) -> u8 {
        Self::ALL.iter().position(|&k| k == self).expect("listed") as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown feature code {code}")))
    }

    fn parts(self) -> &'static [Part] {
        match self {
            FeatureKind::Distance => &[Part::Distance],
            FeatureKind::Ppf => &[Part::Ppf],
            FeatureKind::Spfh => &[Part::Spfh],
            FeatureKind::Pfh => &[Part::Pfh],
            FeatureKind::DistancePpf => &[Part::Distance, Part::Ppf],
            FeatureKind::DistanceSpfh => &[Part::Distance, Part::Spfh],
            FeatureKind::DistancePpfSpfh => &[Part::Distance, Part::Ppf, Part::Spfh],
        }
    }

    pub fn needs_normals(self) -> bool {
        self != FeatureKind::Distance
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown feature kind `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Part {
    Distance,
    Ppf,
    Spfh,
    Pfh,
}

/// Which invariant descriptor feeds the invariant branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FeatureSpec {
    pub kind: FeatureKind,
    /// Bins per angle of the SPFH sub-histograms.
    pub spfh_bins: usize,
    /// Bins per angle of the joint PFH histogram.
    pub pfh_bins: usize,
}

impl FeatureSpec {
    pub fn new(kind: FeatureKind) -> Self {
        FeatureSpec {
            kind,
            spfh_bins: SPFH_BINS,
            pfh_bins: PFH_BINS,
        }
    }

    /// Width of the per-neighbour feature vector.
    pub fn dim(&self) -> usize {
        self.kind
            .parts()
            .iter()
            .map(|p| match p {
                Part::Distance => 3,
                Part::Ppf => 4,
                Part::Spfh => 3 * self.spfh_bins,
                Part::Pfh => self.pfh_bins.pow(3),
            })
            .sum()
    }
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec::new(FeatureKind::Distance)
    }
}

/// `[D(x_ij, o), D(x_ij, x_i), D(o, x_i)]`.
pub fn distance_feature(center: &Point, point: &Point, neighbor: &Point) -> [f64; 3] {
    [
        (neighbor - center).norm(),
        (neighbor - point).norm(),
        (center - point).norm(),
    ]
}

/// Normals plus the indices whose neighbourhood was rank deficient.
#[derive(Clone, Debug)]
pub struct NormalEstimate {
    pub cloud: PointCloud,
    pub degenerate: Vec<usize>,
}

/// PCA normals from each point and its `k` nearest neighbours.
///
/// Normals point away from the cloud centroid. When the centroid direction is
/// orthogonal to the normal the sign is fixed by the first nonzero of the z,
/// y, x components being positive. Degenerate neighbourhoods get `(0, 0, 1)`.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<NormalEstimate> {
    if k < 3 {
        return Err(Error::InvalidArgument(format!(
            "normal estimation needs k >= 3, got {k}"
        )));
    }
    let table = knn(cloud, k)?;
    estimate_normals_with(cloud, &table)
}

pub fn estimate_normals_with(cloud: &PointCloud, table: &NeighborTable) -> Result<NormalEstimate> {
    let c = centroid(cloud);
    let mut normals = Vec::with_capacity(cloud.len());
    let mut degenerate = Vec::new();
    for i in 0..cloud.len() {
        let nbrs = table.row(i);
        let pts = std::iter::once(cloud.point(i)).chain(nbrs.iter().map(|&j| cloud.point(j)));
        let count = (nbrs.len() + 1) as f64;
        let mean = pts.clone().sum::<Point>() / count;
        let cov = pts.fold(Matrix3::zeros(), |acc, p| {
            let d = p - mean;
            acc + d * d.transpose()
        }) / count;
        let eig = SymmetricEigen::new(cov);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let (mid, top) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
        if top <= 0.0 || mid <= 1e-10 * top {
            degenerate.push(i);
            normals.push(Point::z());
            continue;
        }
        let n: Point = eig.eigenvectors.column(order[0]).into_owned().normalize();
        normals.push(orient(n, cloud.point(i) - c));
    }
    let mut out = cloud.clone();
    out.set_normals(normals)?;
    Ok(NormalEstimate {
        cloud: out,
        degenerate,
    })
}

fn orient(n: Point, outward: Point) -> Point {
    let d = n.dot(&outward);
    if d.abs() > 1e-9 * outward.norm() {
        return if d > 0.0 { n } else { -n };
    }
    for axis in [2, 1, 0] {
        if n[axis].abs() > 1e-12 {
            return if n[axis] > 0.0 { n } else { -n };
        }
    }
    n
}

fn angle_between(a: &Point, b: &Point) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// `(∠(n1, d), ∠(n2, d), ∠(n1, n2), ‖d‖)` with `d = p2 − p1`.
pub fn ppf_feature(p1: &Point, n1: &Point, p2: &Point, n2: &Point) -> Result<[f64; 4]> {
    let d = p2 - p1;
    let len = d.norm();
    if len == 0.0 {
        return Err(Error::Degenerate("PPF of coincident points".into()));
    }
    Ok([
        angle_between(n1, &d),
        angle_between(n2, &d),
        angle_between(n1, n2),
        len,
    ])
}

/// Darboux-frame angles `(α, φ, θ)` of a source/target pair, or `None` when
/// the frame is undefined (coincident points or direction along the normal).
fn darboux(ps: &Point, ns: &Point, pt: &Point, nt: &Point) -> Option<(f64, f64, f64)> {
    let d = pt - ps;
    let len = d.norm();
    if len == 0.0 {
        return None;
    }
    let dir = d / len;
    let u = *ns;
    let v = dir.cross(&u);
    let vn = v.norm();
    if vn < 1e-12 {
        return None;
    }
    let v = v / vn;
    let w = u.cross(&v);
    // round-off around exact zeros would otherwise pick a side of θ = ±π
    let snap = |x: f64| if x.abs() < 1e-12 { 0.0 } else { x };
    let alpha = snap(v.dot(nt));
    let phi = snap(u.dot(&dir));
    let theta = snap(w.dot(nt)).atan2(snap(u.dot(nt)));
    Some((alpha, phi, theta))
}

fn bin(value: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let t = ((value - lo) / (hi - lo) * bins as f64).floor();
    (t.max(0.0) as usize).min(bins - 1)
}

fn normals_of(cloud: &PointCloud) -> Result<&[Point]> {
    cloud
        .normals()
        .ok_or_else(|| Error::InvalidArgument("feature needs normals".into()))
}

/// SPFH at point `i` over its neighbour row: three `bins`-bin histograms of
/// `α ∈ [-1, 1]`, `φ ∈ [-1, 1]`, `θ ∈ [-π, π]`, each normalized to sum 1.
pub fn spfh_feature(cloud: &PointCloud, table: &NeighborTable, i: usize, bins: usize) -> Result<Vec<f64>> {
    let normals = normals_of(cloud)?;
    let mut hist = vec![0.0; 3 * bins];
    let mut count = 0usize;
    for &j in table.row(i) {
        let Some((a, f, t)) = darboux(cloud.point(i), &normals[i], cloud.point(j), &normals[j]) else {
            continue;
        };
        hist[bin(a, -1.0, 1.0, bins)] += 1.0;
        hist[bins + bin(f, -1.0, 1.0, bins)] += 1.0;
        hist[2 * bins + bin(t, -std::f64::consts::PI, std::f64::consts::PI, bins)] += 1.0;
        count += 1;
    }
    normalize_blocks(&mut hist, bins, count);
    Ok(hist)
}

/// PFH at point `i`: joint `bins³` histogram over all unordered pairs of
/// `{i} ∪ neighbours(i)`, normalized to sum 1.
pub fn pfh_feature(cloud: &PointCloud, table: &NeighborTable, i: usize, bins: usize) -> Result<Vec<f64>> {
    let normals = normals_of(cloud)?;
    let mut members = vec![i];
    members.extend_from_slice(table.row(i));
    let mut hist = vec![0.0; bins.pow(3)];
    let mut count = 0usize;
    for (x, &a) in members.iter().enumerate() {
        for &b in &members[x + 1..] {
            let Some((al, ph, th)) = pfh_pair(cloud.point(a), &normals[a], cloud.point(b), &normals[b]) else {
                continue;
            };
            let idx = bin(al, -1.0, 1.0, bins) * bins * bins
                + bin(ph, -1.0, 1.0, bins) * bins
                + bin(th, -std::f64::consts::PI, std::f64::consts::PI, bins);
            hist[idx] += 1.0;
            count += 1;
        }
    }
    normalize_blocks(&mut hist, bins.pow(3), count);
    Ok(hist)
}

/// Darboux angles with the source chosen as the point whose normal makes the
/// smaller angle with the pair direction. Near ties keep the given order.
fn pfh_pair(p1: &Point, n1: &Point, p2: &Point, n2: &Point) -> Option<(f64, f64, f64)> {
    let d = p2 - p1;
    let len = d.norm();
    if len == 0.0 {
        return None;
    }
    let a1 = (n1.dot(&d) / len).abs().min(1.0).acos();
    let a2 = (n2.dot(&d) / len).abs().min(1.0).acos();
    if a1 <= a2 + 1e-9 {
        darboux(p1, n1, p2, n2)
    } else {
        darboux(p2, n2, p1, n1)
    }
}

fn normalize_blocks(hist: &mut [f64], block: usize, count: usize) {
    for chunk in hist.chunks_mut(block) {
        if count == 0 {
            // no valid pair: spread the mass uniformly
            chunk.iter_mut().for_each(|v| *v = 1.0 / block as f64);
        } else {
            chunk.iter_mut().for_each(|v| *v /= count as f64);
        }
    }
}

/// Per-neighbour invariant features `φ(x_ij)` stacked as `[n·k × d]`, rows
/// ordered point-major following the neighbour table.
pub fn edge_features(cloud: &PointCloud, spec: &FeatureSpec, table: &NeighborTable) -> Result<Tensor> {
    let parts = spec.kind.parts();
    let n = cloud.len();
    let k = table.k();
    let o = centroid(cloud);
    let spfh: Option<Vec<Vec<f64>>> = if parts.contains(&Part::Spfh) {
        Some(
            (0..n)
                .map(|i| spfh_feature(cloud, table, i, spec.spfh_bins))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };
    let pfh: Option<Vec<Vec<f64>>> = if parts.contains(&Part::Pfh) {
        Some(
            (0..n)
                .map(|i| pfh_feature(cloud, table, i, spec.pfh_bins))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };
    let normals = if spec.kind.needs_normals() {
        Some(normals_of(cloud)?)
    } else {
        None
    };
    let dim = spec.dim();
    let mut out = Vec::with_capacity(n * k * dim);
    for i in 0..n {
        let xi = cloud.point(i);
        for &j in table.row(i) {
            let xj = cloud.point(j);
            for part in parts {
                match part {
                    Part::Distance => out.extend(distance_feature(&o, xi, xj)),
                    Part::Ppf => {
                        let nr = normals.expect("checked above");
                        out.extend(ppf_feature(xi, &nr[i], xj, &nr[j])?);
                    }
                    Part::Spfh => out.extend_from_slice(&spfh.as_ref().expect("computed")[j]),
                    Part::Pfh => out.extend_from_slice(&pfh.as_ref().expect("computed")[j]),
                }
            }
        }
    }
    Tensor::matrix(n * k, dim, out)
}

/// One rigid-invariant descriptor per point, used for feature matching.
/// Histogram parts take the point's own histogram; edge-level parts are
/// averaged over the neighbour row. `cloud` must carry normals when the spec
/// needs them (see [`prepare_cloud`]).
pub fn point_descriptors(cloud: &PointCloud, spec: &FeatureSpec, table: &NeighborTable) -> Result<Vec<Vec<f64>>> {
    let n = cloud.len();
    if table.len() != n {
        return Err(Error::shape(
            "point_descriptors",
            format!("neighbour table has {} rows for {n} points", table.len()),
        ));
    }
    let o = centroid(cloud);
    let normals = if spec.kind.needs_normals() {
        Some(normals_of(cloud)?)
    } else {
        None
    };
    let inv_k = 1.0 / table.k() as f64;
    (0..n)
        .map(|i| {
            let xi = cloud.point(i);
            let mut d = Vec::with_capacity(spec.dim());
            for part in spec.kind.parts() {
                match part {
                    Part::Distance | Part::Ppf => {
                        let width = if *part == Part::Distance { 3 } else { 4 };
                        let mut acc = vec![0.0; width];
                        for &j in table.row(i) {
                            let xj = cloud.point(j);
                            let f: Vec<f64> = if *part == Part::Distance {
                                distance_feature(&o, xi, xj).to_vec()
                            } else {
                                let nr = normals.expect("checked above");
                                ppf_feature(xi, &nr[i], xj, &nr[j])?.to_vec()
                            };
                            acc.iter_mut().zip(f).for_each(|(a, v)| *a += v * inv_k);
                        }
                        d.extend(acc);
                    }
                    Part::Spfh => d.extend(spfh_feature(cloud, table, i, spec.spfh_bins)?),
                    Part::Pfh => d.extend(pfh_feature(cloud, table, i, spec.pfh_bins)?),
                }
            }
            Ok(d)
        })
        .collect()
}

/// Adds estimated normals when the spec needs them and the cloud has none.
pub fn prepare_cloud(cloud: &PointCloud, spec: &FeatureSpec, k: usize) -> Result<PointCloud> {
    if spec.kind.needs_normals() && cloud.normals().is_none() {
        Ok(estimate_normals(cloud, k.max(3).min(cloud.len() - 1))?.cloud)
    } else {
        Ok(cloud.clone())
    }
}

/// `Φ⁰(x_i) = max_j h_α(φ(x_ij))` on the tape, with `h_α` a shared linear
/// layer plus leaky ReLU. Returns `[n × width]`.
pub fn invariant_point_embed(
    tape: &mut Tape,
    cloud: &PointCloud,
    spec: &FeatureSpec,
    table: &NeighborTable,
    weight: Var,
    bias: Var,
    slope: f64,
) -> Result<Var> {
    let feats = edge_features(cloud, spec, table)?;
    embed_edge_features(tape, feats, table.k(), weight, bias, slope)
}

/// [`invariant_point_embed`] from a precomputed [`edge_features`] table.
pub fn embed_edge_features(
    tape: &mut Tape,
    features: Tensor,
    k: usize,
    weight: Var,
    bias: Var,
    slope: f64,
) -> Result<Var> {
    let e = tape.constant(features);
    let h = tape.matmul(e, weight)?;
    let h = tape.add_row(h, bias)?;
    let h = tape.leaky_relu(h, slope)?;
    tape.segment_max(h, k)
}
