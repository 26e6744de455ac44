//! Normal estimation by k-nearest-neighbour plane fitting.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::{KdTree, VoxelCloud};
use crate::{Error, Result};

/// Neighbour count used when none is configured.
pub const DEFAULT_K: usize = 9;

/// Fallback normal for neighbourhoods that do not span a plane.
pub const FALLBACK_NORMAL: [f64; 3] = [0.0, 0.0, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct NormalEstimate {
    pub normals: Vec<[f64; 3]>,
    /// `true` where the neighbourhood was degenerate and the fallback was used.
    pub degenerate: Vec<bool>,
}

impl NormalEstimate {
    pub fn degenerate_count(&self) -> usize {
        self.degenerate.iter().filter(|&&d| d).count()
    }
}

/// Unit normal per voxel: eigenvector of the smallest eigenvalue of the
/// covariance of its `k` nearest neighbours (itself included), oriented into
/// the +z half-space (ties broken on +y, then +x).
pub fn estimate_normals(vc: &VoxelCloud, k: usize) -> Result<NormalEstimate> {
    if k < 3 || k > vc.len() {
        return Err(Error::contract(format!(
            "normal estimation needs 3 <= k <= {}, got {k}",
            vc.len()
        )));
    }
    estimate_normals_points(&vc.points_f64(), k)
}

/// [`estimate_normals`] over arbitrary real points.
pub fn estimate_normals_points(pts: &[[f64; 3]], k: usize) -> Result<NormalEstimate> {
    if k < 3 || k > pts.len() {
        return Err(Error::contract(format!(
            "normal estimation needs 3 <= k <= {}, got {k}",
            pts.len()
        )));
    }
    let tree = KdTree::new(pts);
    let mut normals = Vec::with_capacity(pts.len());
    let mut degenerate = Vec::with_capacity(pts.len());
    for p in pts {
        let nbrs = tree.knn(p, k);
        let (n, deg) = fit_plane(nbrs.iter().map(|&(i, _)| &pts[i]));
        normals.push(n);
        degenerate.push(deg);
    }
    Ok(NormalEstimate { normals, degenerate })
}

fn fit_plane<'a>(pts: impl Iterator<Item = &'a [f64; 3]> + Clone) -> ([f64; 3], bool) {
    let n = pts.clone().count() as f64;
    let mut mean = Vector3::zeros();
    for p in pts.clone() {
        mean += Vector3::from(*p);
    }
    mean /= n;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = Vector3::from(*p) - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let largest = eig.eigenvalues[idx[2]];
    let middle = eig.eigenvalues[idx[1]];
    // Collinear (or coincident) neighbourhoods leave the plane undefined.
    if largest <= 1e-12 || middle <= 1e-9 * largest {
        return (FALLBACK_NORMAL, true);
    }
    let v = eig.eigenvectors.column(idx[0]).normalize();
    let mut n = [v[0], v[1], v[2]];
    let flip = if n[2] != 0.0 {
        n[2] < 0.0
    } else if n[1] != 0.0 {
        n[1] < 0.0
    } else {
        n[0] < 0.0
    };
    if flip {
        n = n.map(|x| -x);
    }
    (n, false)
}
