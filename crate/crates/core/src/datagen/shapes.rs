//! Procedural shape families standing in for a mesh dataset.
//!
//! A category is a fixed layout of two to four primitives (boxes, cylinders,
//! ellipsoids, tori) with per-category size, offset and orientation ranges
//! derived from the category index alone. Shapes within a category jitter the
//! layout; points are sampled on primitive surfaces with probability
//! proportional to approximate area.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geom::{axis_angle, centroid, Point, PointCloud};
use crate::{Error, Result};

/// Number of distinct generator categories.
pub const NUM_CATEGORIES: u32 = 40;

/// Smallest cloud [`synth_shape`] produces.
pub const MIN_POINTS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Kind {
    Box,
    Cylinder,
    Ellipsoid,
    Torus,
}

#[derive(Clone, Debug)]
struct Primitive {
    kind: Kind,
    /// Box half-extents; cylinder (radius, half-height, _); ellipsoid radii;
    /// torus (major, minor, _).
    dims: Vector3<f64>,
    offset: Vector3<f64>,
    rotation: Matrix3<f64>,
}

impl Primitive {
    fn area(&self) -> f64 {
        let d = self.dims;
        match self.kind {
            Kind::Box => 8.0 * (d.x * d.y + d.y * d.z + d.x * d.z),
            Kind::Cylinder => TAU * d.x * 2.0 * d.y + 2.0 * PI * d.x * d.x,
            Kind::Ellipsoid => {
                // Knud Thomsen's approximation
                let p = 1.6075;
                let s = ((d.x * d.y).powf(p) + (d.x * d.z).powf(p) + (d.y * d.z).powf(p)) / 3.0;
                4.0 * PI * s.powf(1.0 / p)
            }
            Kind::Torus => 4.0 * PI * PI * d.x * d.y,
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> Point {
        let d = self.dims;
        let local = match self.kind {
            Kind::Box => {
                let areas = [d.y * d.z, d.x * d.z, d.x * d.y];
                let mut pick = rng.random_range(0.0..areas.iter().sum::<f64>());
                let mut axis = 2;
                for (i, a) in areas.iter().enumerate() {
                    if pick < *a {
                        axis = i;
                        break;
                    }
                    pick -= a;
                }
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let mut p = Vector3::new(
                    rng.random_range(-d.x..=d.x),
                    rng.random_range(-d.y..=d.y),
                    rng.random_range(-d.z..=d.z),
                );
                p[axis] = sign * d[axis];
                p
            }
            Kind::Cylinder => {
                let (r, h) = (d.x, d.y);
                let side = TAU * r * 2.0 * h;
                let cap = PI * r * r;
                let a = rng.random_range(0.0..TAU);
                if rng.random_range(0.0..side + 2.0 * cap) < side {
                    Vector3::new(r * a.cos(), r * a.sin(), rng.random_range(-h..=h))
                } else {
                    let rr = r * rng.random::<f64>().sqrt();
                    let z = if rng.random_bool(0.5) { h } else { -h };
                    Vector3::new(rr * a.cos(), rr * a.sin(), z)
                }
            }
            Kind::Ellipsoid => {
                let u = unit_vector(rng);
                Vector3::new(u.x * d.x, u.y * d.y, u.z * d.z)
            }
            Kind::Torus => {
                let (big, small) = (d.x, d.y);
                // rejection on the tube angle keeps the density area-uniform
                let phi = loop {
                    let phi = rng.random_range(0.0..TAU);
                    if rng.random_range(0.0..big + small) <= big + small * phi.cos() {
                        break phi;
                    }
                };
                let theta = rng.random_range(0.0..TAU);
                let ring = big + small * phi.cos();
                Vector3::new(ring * theta.cos(), ring * theta.sin(), small * phi.sin())
            }
        };
        self.rotation * local + self.offset
    }
}

fn unit_vector(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v: Vector3<f64> = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm_squared();
        if n > 1e-6 && n <= 1.0 {
            return v / n.sqrt();
        }
    }
}

fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    axis_angle(&unit_vector(rng), rng.random_range(0.0..PI))
}

/// The category layout. Depends on the category index only.
fn template(category: u32) -> Vec<Primitive> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + category as u64);
    let kinds = [Kind::Box, Kind::Cylinder, Kind::Ellipsoid, Kind::Torus];
    // the main body cycles through all kinds so neighbouring categories differ
    let main = kinds[(category % 4) as usize];
    let count = 2 + (category / 4 % 3) as usize;
    let mut parts = Vec::with_capacity(count);
    for i in 0..count {
        let kind = if i == 0 { main } else { kinds[rng.random_range(0..4)] };
        let scale = if i == 0 { 1.0 } else { rng.random_range(0.3..0.7) };
        let dims = match kind {
            Kind::Box | Kind::Ellipsoid => Vector3::new(
                rng.random_range(0.3..1.0),
                rng.random_range(0.2..0.7),
                rng.random_range(0.1..0.5),
            ),
            Kind::Cylinder => Vector3::new(rng.random_range(0.15..0.5), rng.random_range(0.3..1.0), 0.0),
            Kind::Torus => {
                let big = rng.random_range(0.4..0.9);
                Vector3::new(big, big * rng.random_range(0.15..0.4), 0.0)
            }
        } * scale;
        let offset = if i == 0 {
            Vector3::zeros()
        } else {
            unit_vector(&mut rng) * rng.random_range(0.5..1.1)
        };
        parts.push(Primitive {
            kind,
            dims,
            offset,
            rotation: random_rotation(&mut rng),
        });
    }
    parts
}

/// A shape of `category` with `n_points` surface samples, centred on the
/// origin and scaled to unit maximum radius. `rng` drives both the per-shape
/// jitter of the category layout and the surface sampling.
pub fn synth_shape(category: u32, n_points: usize, rng: &mut impl Rng) -> Result<PointCloud> {
    if n_points < MIN_POINTS {
        return Err(Error::InvalidArgument(format!(
            "synth_shape needs at least {MIN_POINTS} points, got {n_points}"
        )));
    }
    let mut parts = template(category);
    for p in &mut parts {
        p.dims.iter_mut().for_each(|d| *d *= rng.random_range(0.85..1.15));
        p.offset += Vector3::new(
            rng.random_range(-0.08..0.08),
            rng.random_range(-0.08..0.08),
            rng.random_range(-0.08..0.08),
        );
        p.rotation = axis_angle(&unit_vector(rng), rng.random_range(0.0..0.15)) * p.rotation;
    }
    let areas: Vec<f64> = parts.iter().map(Primitive::area).collect();
    let total: f64 = areas.iter().sum();
    let points: Vec<Point> = (0..n_points)
        .map(|_| {
            let mut pick = rng.random_range(0.0..total);
            let mut idx = parts.len() - 1;
            for (i, a) in areas.iter().enumerate() {
                if pick < *a {
                    idx = i;
                    break;
                }
                pick -= a;
            }
            parts[idx].sample(rng)
        })
        .collect();
    normalize(PointCloud::new(points)?)
}

/// Zero centroid, unit maximum norm.
pub fn normalize(cloud: PointCloud) -> Result<PointCloud> {
    let c = centroid(&cloud);
    let centered: Vec<Point> = cloud.points().iter().map(|p| p - c).collect();
    let radius = centered.iter().map(|p| p.norm()).fold(0.0, f64::max);
    if radius == 0.0 {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    PointCloud::new(centered.into_iter().map(|p| p / radius).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::chamfer;

    #[test]
    fn deterministic_and_normalized() {
        for category in [0, 7, 39] {
            let a = synth_shape(category, 300, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
            let b = synth_shape(category, 300, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
            assert_eq!(a, b);
            assert!(centroid(&a).norm() < 1e-9);
            let r = a.points().iter().map(|p| p.norm()).fold(0.0, f64::max);
            assert!((r - 1.0).abs() < 1e-9);
        }
        assert!(synth_shape(0, 15, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn categories_are_distinct() {
        let shape = |c| synth_shape(c, 512, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert!(chamfer(&shape(0), &shape(20)).unwrap() > 0.01);
        // every pair of categories differs far more than two shapes of one category
        let shapes: Vec<PointCloud> = (0..NUM_CATEGORIES).map(shape).collect();
        let mut min_between = f64::INFINITY;
        for i in 0..shapes.len() {
            for j in i + 1..shapes.len() {
                min_between = min_between.min(chamfer(&shapes[i], &shapes[j]).unwrap());
            }
        }
        assert!(min_between > 0.01, "{min_between}");
    }

    #[test]
    fn primitive_samples_lie_on_their_surfaces() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dims = Vector3::new(0.6, 0.4, 0.3);
        for kind in [Kind::Box, Kind::Cylinder, Kind::Ellipsoid, Kind::Torus] {
            let p = Primitive {
                kind,
                dims,
                offset: Vector3::zeros(),
                rotation: Matrix3::identity(),
            };
            for _ in 0..200 {
                let q = p.sample(&mut rng);
                let residual = match kind {
                    Kind::Box => (q.x.abs() - dims.x).abs().min((q.y.abs() - dims.y).abs()).min((q.z.abs() - dims.z).abs()),
                    Kind::Cylinder => {
                        let r = (q.x * q.x + q.y * q.y).sqrt();
                        (r - dims.x).abs().min((q.z.abs() - dims.y).abs())
                    }
                    Kind::Ellipsoid => ((q.x / dims.x).powi(2) + (q.y / dims.y).powi(2) + (q.z / dims.z).powi(2) - 1.0).abs(),
                    Kind::Torus => {
                        let r = (q.x * q.x + q.y * q.y).sqrt();
                        ((r - dims.x).powi(2) + q.z * q.z).sqrt() - dims.y
                    }
                };
                assert!(residual.abs() < 1e-12, "{kind:?}: {residual}");
            }
        }
    }
}
