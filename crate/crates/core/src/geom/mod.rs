//! Point clouds, rigid motions, rotation parameterizations, neighbour search
//! and the Chamfer discrepancy.

mod chamfer;
mod cloud;
mod knn;
pub mod rotation;
mod transform;

pub use chamfer::chamfer;
pub(crate) use chamfer::chamfer_pairs;
pub use cloud::{centroid, Point, PointCloud};
pub use knn::{knn, knn_brute_force, knn_rows, nearest_one, KdTree, NeighborTable, KDTREE_MIN_POINTS};
pub use rotation::{
    axis_angle, decode_rotation, euler_to_matrix, is_rotation, matrix_to_euler, rotation_angle, RotationMode,
    RotationParam,
};
pub use transform::{apply_transform, canonicalize, compose_relative, RigidTransform};
