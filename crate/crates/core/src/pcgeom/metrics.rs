//! Point-to-point (D1) and point-to-plane (D2) geometry distortion.
//!
//! Peak value follows the MPEG common test conditions: `3 * (2^d - 1)^2` for
//! a `d`-bit cloud, and each PSNR takes the worse (larger) of the two
//! directional mean squared errors.

use super::{estimate_normals, KdTree, VoxelCloud};
use crate::{Error, Result};

/// PSNR reported for identical clouds, and the ceiling for every PSNR.
pub const PSNR_CAP: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionReport {
    pub d1_psnr: f64,
    pub d2_psnr: Option<f64>,
    /// `mse_ab + mse_ba`, in squared coordinate units.
    pub chamfer: f64,
    /// Mean squared distance from each point of `a` to its nearest in `b`.
    pub mse_ab: f64,
    pub mse_ba: f64,
}

/// Where the reference normals for D2 come from.
#[derive(Debug, Clone, Copy)]
pub enum NormalSource<'a> {
    Provided(&'a [[f64; 3]]),
    Estimate { k: usize },
    Unavailable,
}

/// `3 * (2^depth - 1)^2`.
pub fn peak_for_depth(depth: u8) -> f64 {
    let m = ((1u64 << depth) - 1) as f64;
    3.0 * m * m
}

pub fn psnr(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (peak / mse).log10()).min(PSNR_CAP)
}

fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Per-point nearest-neighbour squared distances from `from` into `tree`.
pub fn nn_sq_dists(from: &[[f64; 3]], tree: &KdTree) -> Vec<f64> {
    from.iter().map(|p| tree.nearest(p).1).collect()
}

fn mean(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    v.sum::<f64>() / n as f64
}

/// D1 (and optionally D2) between a reference `a` and a test cloud `b` given
/// as real points. `normals_a` are unit normals of the reference.
pub fn point_distortion(
    a: &[[f64; 3]],
    b: &[[f64; 3]],
    peak: f64,
    normals_a: Option<&[[f64; 3]]>,
) -> Result<DistortionReport> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::contract("distortion needs two nonempty clouds"));
    }
    if let Some(n) = normals_a {
        if n.len() != a.len() {
            return Err(Error::contract("normal count does not match reference"));
        }
    }
    let tree_a = KdTree::new(a);
    let tree_b = KdTree::new(b);
    let nn_ab: Vec<(usize, f64)> = a.iter().map(|p| tree_b.nearest(p)).collect();
    let nn_ba: Vec<(usize, f64)> = b.iter().map(|p| tree_a.nearest(p)).collect();
    let mse_ab = mean(nn_ab.iter().map(|x| x.1), a.len());
    let mse_ba = mean(nn_ba.iter().map(|x| x.1), b.len());

    let d2_psnr = normals_a.map(|n| {
        let e_ab = mean(
            nn_ab.iter().enumerate().map(|(i, &(j, _))| {
                let proj = dot(&sub(&b[j], &a[i]), &n[i]);
                proj * proj
            }),
            a.len(),
        );
        let e_ba = mean(
            nn_ba.iter().enumerate().map(|(j, &(i, _))| {
                let proj = dot(&sub(&b[j], &a[i]), &n[i]);
                proj * proj
            }),
            b.len(),
        );
        psnr(e_ab.max(e_ba), peak)
    });

    Ok(DistortionReport {
        d1_psnr: psnr(mse_ab.max(mse_ba), peak),
        d2_psnr,
        chamfer: mse_ab + mse_ba,
        mse_ab,
        mse_ba,
    })
}

fn check_depths(a: &VoxelCloud, b: &VoxelCloud) -> Result<()> {
    if a.depth() != b.depth() {
        return Err(Error::contract(format!(
            "depth mismatch: {} vs {}",
            a.depth(),
            b.depth()
        )));
    }
    Ok(())
}

/// Point-to-point PSNR between two voxel clouds of the same depth.
pub fn d1_psnr(a: &VoxelCloud, b: &VoxelCloud) -> Result<DistortionReport> {
    check_depths(a, b)?;
    point_distortion(&a.points_f64(), &b.points_f64(), peak_for_depth(a.depth()), None)
}

/// Point-to-plane PSNR of `b` against the reference `a`.
pub fn d2_psnr(a: &VoxelCloud, b: &VoxelCloud, normals: NormalSource<'_>) -> Result<f64> {
    check_depths(a, b)?;
    let owned;
    let n: &[[f64; 3]] = match normals {
        NormalSource::Provided(n) => n,
        NormalSource::Estimate { k } => {
            owned = estimate_normals(a, k)?.normals;
            &owned
        }
        NormalSource::Unavailable => {
            return Err(Error::Config(
                "D2 requires reference normals and estimation is disabled".into(),
            ))
        }
    };
    let report = point_distortion(&a.points_f64(), &b.points_f64(), peak_for_depth(a.depth()), Some(n))?;
    Ok(report.d2_psnr.expect("normals supplied"))
}
