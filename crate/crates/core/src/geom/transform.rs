use nalgebra::{Matrix3, Vector3};

use super::cloud::{Point, PointCloud};
use super::rotation::is_rotation;
use crate::{Error, Result};

/// Proper rigid motion `p ↦ R·p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    /// Rejects rotations that are not orthonormal with determinant +1 (1e-8).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !is_rotation(&rotation, 1e-8) {
            return Err(Error::InvalidArgument(format!(
                "not a rotation matrix: {rotation}"
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("translation is not finite".into()));
        }
        Ok(RigidTransform {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn apply_point(&self, p: &Point) -> Point {
        self.rotation * p + self.translation
    }

    /// `[R | t]` as three rows of four numbers.
    pub fn to_rows(&self) -> [[f64; 4]; 3] {
        let mut rows = [[0.0; 4]; 3];
        for (i, row) in rows.iter_mut().enumerate() {
            for j in 0..3 {
                row[j] = self.rotation[(i, j)];
            }
            row[3] = self.translation[i];
        }
        rows
    }

    pub fn from_rows(rows: &[[f64; 4]; 3]) -> Result<Self> {
        let rotation = Matrix3::from_fn(|i, j| rows[i][j]);
        let translation = Vector3::new(rows[0][3], rows[1][3], rows[2][3]);
        RigidTransform::new(rotation, translation)
    }
}

/// Maps every point through `T`; normals are rotated.
pub fn apply_transform(t: &RigidTransform, cloud: &PointCloud) -> PointCloud {
    let points = cloud.points().iter().map(|p| t.apply_point(p)).collect();
    let mut out = PointCloud::new(points).expect("nonempty finite input");
    if let Some(n) = cloud.normals() {
        // rotated unit vectors stay unit length
        out.set_normals(n.iter().map(|n| t.rotation * n).collect())
            .expect("rotation preserves normals");
    }
    out
}

/// Undoes `T`: `p ↦ Rᵀ·(p − t)`.
pub fn canonicalize(cloud: &PointCloud, t: &RigidTransform) -> PointCloud {
    let rt = t.rotation.transpose();
    let points = cloud
        .points()
        .iter()
        .map(|p| rt * (p - t.translation))
        .collect();
    let mut out = PointCloud::new(points).expect("nonempty finite input");
    if let Some(n) = cloud.normals() {
        out.set_normals(n.iter().map(|n| rt * n).collect())
            .expect("rotation preserves normals");
    }
    out
}

/// Relative motion taking a cloud posed by `T_X` onto one posed by `T_Y`:
/// `R = R_Y·R_Xᵀ`, `t = t_Y − R·t_X`.
pub fn compose_relative(tx: &RigidTransform, ty: &RigidTransform) -> RigidTransform {
    let rotation = ty.rotation * tx.rotation.transpose();
    RigidTransform {
        rotation,
        translation: ty.translation - rotation * tx.translation,
    }
}
