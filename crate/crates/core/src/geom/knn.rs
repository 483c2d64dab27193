//! Exact k-nearest-neighbour search.
//!
//! Neighbours are ordered by ascending squared Euclidean distance with ties
//! broken by lower index, and a point is never its own neighbour. Spatial
//! queries use a kd-tree from [`KDTREE_MIN_POINTS`] points upward; both
//! backends produce identical tables.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use super::cloud::{Point, PointCloud};
use crate::{Error, Result};

pub const KDTREE_MIN_POINTS: usize = 64;

/// `n × k` neighbour indices, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborTable {
    k: usize,
    indices: Vec<usize>,
}

impl NeighborTable {
    pub fn new(k: usize, indices: Vec<usize>) -> Result<Self> {
        if k == 0 || indices.len() % k != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} indices do not form rows of {k}",
                indices.len()
            )));
        }
        Ok(NeighborTable { k, indices })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn flat(&self) -> &[usize] {
        &self.indices
    }

    /// Keeps only the first `k` neighbours of each row.
    pub fn truncate(&self, k: usize) -> NeighborTable {
        let k = k.min(self.k);
        let indices = (0..self.len())
            .flat_map(|i| self.row(i)[..k].iter().copied())
            .collect();
        NeighborTable { k, indices }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[inline]
fn sq_dist(a: &Point, b: &Point) -> f64 {
    let d = a - b;
    d.x * d.x + d.y * d.y + d.z * d.z
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} neighbours needs 1 <= k < n = {n}"
        )));
    }
    Ok(())
}

/// Spatial neighbours of every point of the cloud.
pub fn knn(cloud: &PointCloud, k: usize) -> Result<NeighborTable> {
    check_k(cloud.len(), k)?;
    if cloud.len() < KDTREE_MIN_POINTS {
        knn_brute_force(cloud, k)
    } else {
        let tree = KdTree::build(cloud.points());
        let indices = (0..cloud.len())
            .into_par_iter()
            .flat_map_iter(|i| tree.nearest(cloud.point(i), k, Some(i)))
            .collect();
        NeighborTable::new(k, indices)
    }
}

/// `O(n²)` reference scan.
pub fn knn_brute_force(cloud: &PointCloud, k: usize) -> Result<NeighborTable> {
    check_k(cloud.len(), k)?;
    let pts = cloud.points();
    let indices = (0..pts.len())
        .flat_map(|i| {
            let mut cands: Vec<Candidate> = pts
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, q)| Candidate {
                    dist: sq_dist(&pts[i], q),
                    index: j,
                })
                .collect();
            take_smallest(&mut cands, k)
        })
        .collect();
    NeighborTable::new(k, indices)
}

/// Neighbours among the rows of a dense `[n × dim]` feature matrix.
pub fn knn_rows(data: &[f64], dim: usize, k: usize) -> Result<NeighborTable> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::InvalidArgument(format!(
            "{} values do not form rows of width {dim}",
            data.len()
        )));
    }
    let n = data.len() / dim;
    check_k(n, k)?;
    let row_knn = |i: usize| {
        let ri = &data[i * dim..(i + 1) * dim];
        let mut cands: Vec<Candidate> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let rj = &data[j * dim..(j + 1) * dim];
                let dist: f64 = ri.iter().zip(rj).map(|(a, b)| (a - b) * (a - b)).sum();
                Candidate { dist, index: j }
            })
            .collect();
        take_smallest(&mut cands, k)
    };
    let indices: Vec<usize> = if n >= 512 {
        (0..n).into_par_iter().flat_map_iter(row_knn).collect()
    } else {
        (0..n).flat_map(row_knn).collect()
    };
    NeighborTable::new(k, indices)
}

fn take_smallest(cands: &mut [Candidate], k: usize) -> Vec<usize> {
    if k < cands.len() {
        cands.select_nth_unstable(k - 1);
    }
    let head = &mut cands[..k];
    head.sort_unstable();
    head.iter().map(|c| c.index).collect()
}

/// Static 3D kd-tree over a borrowed point slice.
pub struct KdTree<'a> {
    points: &'a [Point],
    nodes: Vec<KdNode>,
    root: Option<usize>,
}

struct KdNode {
    index: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [Point]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = Self::build_rec(points, &mut order, 0, &mut nodes);
        KdTree {
            points,
            nodes,
            root,
        }
    }

    fn build_rec(
        points: &[Point],
        order: &mut [usize],
        depth: usize,
        nodes: &mut Vec<KdNode>,
    ) -> Option<usize> {
        if order.is_empty() {
            return None;
        }
        let axis = depth % 3;
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&a, &b| {
            points[a][axis]
                .total_cmp(&points[b][axis])
                .then(a.cmp(&b))
        });
        let index = order[mid];
        let (lo, rest) = order.split_at_mut(mid);
        let hi = &mut rest[1..];
        let left = Self::build_rec(points, lo, depth + 1, nodes);
        let right = Self::build_rec(points, hi, depth + 1, nodes);
        nodes.push(KdNode {
            index,
            axis,
            left,
            right,
        });
        Some(nodes.len() - 1)
    }

    /// The `k` nearest stored points to `query`, optionally skipping one index.
    pub fn nearest(&self, query: &Point, k: usize, exclude: Option<usize>) -> Vec<usize> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if let Some(root) = self.root {
            self.search(root, query, k, exclude, &mut heap);
        }
        let mut out = heap.into_vec();
        out.sort_unstable();
        out.into_iter().map(|c| c.index).collect()
    }

    fn search(
        &self,
        node: usize,
        query: &Point,
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        let n = &self.nodes[node];
        let p = &self.points[n.index];
        if exclude != Some(n.index) {
            let cand = Candidate {
                dist: sq_dist(query, p),
                index: n.index,
            };
            if heap.len() < k {
                heap.push(cand);
            } else if cand < *heap.peek().expect("heap is full") {
                heap.pop();
                heap.push(cand);
            }
        }
        let diff = query[n.axis] - p[n.axis];
        let (near, far) = if diff < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        if let Some(c) = near {
            self.search(c, query, k, exclude, heap);
        }
        if let Some(c) = far {
            // `<=` keeps equal-distance candidates reachable for the index tie rule
            if heap.len() < k || diff * diff <= heap.peek().expect("nonempty").dist {
                self.search(c, query, k, exclude, heap);
            }
        }
    }
}

/// Index of the nearest stored point, ties to the lower index.
pub fn nearest_one(tree: &KdTree<'_>, query: &Point) -> usize {
    tree.nearest(query, 1, None)[0]
}
