use super::cloud::PointCloud;
use crate::{Error, Result};

/// Index of the nearest row of `b` for every row of `a` (flat `[n×3]` data),
/// with squared distances. Ties go to the lower index.
pub(crate) fn nearest_rows(a: &[f64], b: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let mut idx = Vec::with_capacity(a.len() / 3);
    let mut dist = Vec::with_capacity(a.len() / 3);
    for p in a.chunks_exact(3) {
        let mut best = (f64::INFINITY, 0usize);
        for (j, q) in b.chunks_exact(3).enumerate() {
            let (dx, dy, dz) = (p[0] - q[0], p[1] - q[1], p[2] - q[2]);
            let d = dx * dx + dy * dy + dz * dz;
            if d < best.0 {
                best = (d, j);
            }
        }
        idx.push(best.1);
        dist.push(best.0);
    }
    (idx, dist)
}

/// Chamfer value plus the nearest-neighbour assignments in both directions.
pub(crate) fn chamfer_pairs(a: &[f64], b: &[f64]) -> (f64, Vec<usize>, Vec<usize>) {
    let (nn_ab, d_ab) = nearest_rows(a, b);
    let (nn_ba, d_ba) = nearest_rows(b, a);
    let term_a = d_ab.iter().sum::<f64>() / d_ab.len() as f64;
    let term_b = d_ba.iter().sum::<f64>() / d_ba.len() as f64;
    (term_a + term_b, nn_ab, nn_ba)
}

/// Symmetric Chamfer discrepancy: mean squared nearest-neighbour distance
/// from `a` to `b` plus the same from `b` to `a`.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("chamfer of an empty cloud".into()));
    }
    Ok(chamfer_pairs(&a.flat(), &b.flat()).0)
}
