use nalgebra::Vector3;

use crate::autodiff::Tensor;
use crate::{Error, Result};

pub type Point = Vector3<f64>;

/// Ordered set of 3D points with optional unit normals.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
    normals: Option<Vec<Point>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("point cloud is empty".into()));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument(format!("point {i} is not finite")));
        }
        Ok(PointCloud {
            points,
            normals: None,
        })
    }

    pub fn with_normals(points: Vec<Point>, normals: Vec<Point>) -> Result<Self> {
        let mut cloud = PointCloud::new(points)?;
        cloud.set_normals(normals)?;
        Ok(cloud)
    }

    pub fn from_xyz(coords: &[[f64; 3]]) -> Result<Self> {
        PointCloud::new(coords.iter().map(|c| Point::new(c[0], c[1], c[2])).collect())
    }

    pub fn set_normals(&mut self, normals: Vec<Point>) -> Result<()> {
        if normals.len() != self.points.len() {
            return Err(Error::InvalidArgument(format!(
                "{} normals for {} points",
                normals.len(),
                self.points.len()
            )));
        }
        if let Some(i) = normals.iter().position(|n| (n.norm() - 1.0).abs() > 1e-6) {
            return Err(Error::InvalidArgument(format!("normal {i} is not unit length")));
        }
        self.normals = Some(normals);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Point]> {
        self.normals.as_deref()
    }

    pub fn point(&self, i: usize) -> &Point {
        &self.points[i]
    }

    /// Row-major `[n×3]` coordinates.
    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(self.len(), 3, self.flat()).expect("cloud is nonempty")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (n, c) = t.dims2("from_tensor")?;
        if c != 3 {
            return Err(Error::shape("from_tensor", format!("expected [n x 3], got [{n} x {c}]")));
        }
        PointCloud::new(
            t.data()
                .chunks(3)
                .map(|r| Point::new(r[0], r[1], r[2]))
                .collect(),
        )
    }

    /// Cloud made of the points at `indices`, normals carried along.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let mut out = PointCloud::new(points)?;
        if let Some(n) = &self.normals {
            out.normals = Some(indices.iter().map(|&i| n[i]).collect());
        }
        Ok(out)
    }
}

impl PointCloud {
    /// Indices of the first occurrence of every distinct point, in order.
    pub fn unique_indices(&self) -> Vec<usize> {
        let mut seen = std::collections::HashSet::with_capacity(self.len());
        (0..self.len())
            .filter(|&i| {
                let p = self.points[i];
                // +0.0 folds -0.0 onto 0.0
                seen.insert([(p.x + 0.0).to_bits(), (p.y + 0.0).to_bits(), (p.z + 0.0).to_bits()])
            })
            .collect()
    }

    /// The cloud with exact duplicate points removed, first occurrences kept.
    pub fn dedup(&self) -> PointCloud {
        let idx = self.unique_indices();
        if idx.len() == self.len() {
            return self.clone();
        }
        self.select(&idx).expect("indices in range")
    }
}

/// Arithmetic mean of the points.
pub fn centroid(cloud: &PointCloud) -> Point {
    cloud.points.iter().sum::<Point>() / cloud.len() as f64
}
