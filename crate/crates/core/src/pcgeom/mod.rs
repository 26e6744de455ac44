//! Point clouds, voxel clouds and the operations between them.

mod knn;
pub mod metrics;
pub mod morton;
pub mod normals;
mod octree;
pub mod ply;

pub use knn::KdTree;
pub use metrics::{d1_psnr, d2_psnr, DistortionReport, NormalSource};
pub use morton::morton_code;
pub use normals::{estimate_normals, estimate_normals_points, NormalEstimate};
pub use octree::{build_octree, flatten_octree, OctreeLevel, OctreeLevels};
pub use ply::{read_ply, write_ply, PlyFormat};

use crate::{Error, Result, Scalar};

/// Real-valued point cloud, optionally with unit normals.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T: Scalar> {
    points: Vec<[T; 3]>,
    normals: Option<Vec<[T; 3]>>,
}

const NORMAL_TOL: f64 = 1e-6;

impl<T: Scalar> PointCloud<T> {
    pub fn new(points: Vec<[T; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::contract("point cloud needs at least one point"));
        }
        Ok(Self { points, normals: None })
    }

    /// Attaches normals. They must be unit length (within 1e-6) and match the
    /// point count.
    pub fn with_normals(mut self, normals: Vec<[T; 3]>) -> Result<Self> {
        if normals.len() != self.points.len() {
            return Err(Error::contract(format!(
                "{} normals for {} points",
                normals.len(),
                self.points.len()
            )));
        }
        for (i, n) in normals.iter().enumerate() {
            let len = n.iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt();
            if (len - 1.0).abs() > NORMAL_TOL {
                return Err(Error::contract(format!("normal {i} has norm {len}")));
            }
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn points(&self) -> &[[T; 3]] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[[T; 3]]> {
        self.normals.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points widened to `f64`.
    pub fn points_f64(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|p| p.map(|v| v.f64())).collect()
    }

    pub fn cast<U: Scalar>(&self) -> PointCloud<U> {
        let conv = |p: &[T; 3]| p.map(|v| U::of(v.f64()));
        PointCloud {
            points: self.points.iter().map(conv).collect(),
            normals: self.normals.as_ref().map(|n| n.iter().map(conv).collect()),
        }
    }
}

/// Deduplicated integer voxel coordinates at a fixed bit depth, sorted in
/// Morton order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VoxelCloud {
    depth: u8,
    coords: Vec<[u32; 3]>,
}

impl VoxelCloud {
    /// Validates, sorts and deduplicates `coords`.
    pub fn new(depth: u8, coords: Vec<[u32; 3]>) -> Result<Self> {
        if !(1..=morton::MAX_DEPTH).contains(&depth) {
            return Err(Error::contract(format!("depth {depth} outside 1..=16")));
        }
        let limit = 1u32 << depth;
        if let Some(c) = coords.iter().find(|c| c.iter().any(|&v| v >= limit)) {
            return Err(Error::contract(format!(
                "voxel {c:?} out of range for depth {depth}"
            )));
        }
        let mut keyed: Vec<u64> = coords.into_iter().map(morton::encode).collect();
        keyed.sort_unstable();
        keyed.dedup();
        Ok(Self {
            depth,
            coords: keyed.into_iter().map(morton::decode).collect(),
        })
    }

    /// Builds from coordinates that are already unique, in range and
    /// Morton-sorted.
    pub(crate) fn from_sorted(depth: u8, coords: Vec<[u32; 3]>) -> Self {
        debug_assert!(coords
            .windows(2)
            .all(|w| morton::encode(w[0]) < morton::encode(w[1])));
        Self { depth, coords }
    }

    pub fn depth(&self) -> u8 {
        self.depth
    }

    pub fn coords(&self) -> &[[u32; 3]] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn contains(&self, c: [u32; 3]) -> bool {
        let key = morton::encode(c);
        self.coords
            .binary_search_by_key(&key, |&v| morton::encode(v))
            .is_ok()
    }

    /// Voxel coordinates as real points (no dequantization).
    pub fn points_f64(&self) -> Vec<[f64; 3]> {
        self.coords.iter().map(|c| c.map(|v| v as f64)).collect()
    }

    /// Real points `coord / scale`, the inverse of [`quantize`].
    pub fn dequantize(&self, scale: f64) -> Vec<[f64; 3]> {
        self.coords.iter().map(|c| c.map(|v| v as f64 / scale)).collect()
    }

    pub fn to_point_cloud<T: Scalar>(&self) -> PointCloud<T> {
        PointCloud {
            points: self.coords.iter().map(|c| c.map(|v| T::of(v as f64))).collect(),
            normals: None,
        }
    }

    /// Voxel coordinates shifted down by one level (`c >> 1`), deduplicated.
    pub fn parents(&self) -> Vec<[u32; 3]> {
        let mut out: Vec<[u32; 3]> = Vec::with_capacity(self.coords.len() / 2 + 1);
        for c in &self.coords {
            let p = c.map(|v| v >> 1);
            if out.last() != Some(&p) {
                out.push(p);
            }
        }
        out
    }
}

/// Traditional voxelization: `round(p * scale)` per axis (half away from
/// zero), clamped to `[0, 2^depth - 1]`, duplicates merged.
pub fn quantize<T: Scalar>(pc: &PointCloud<T>, scale: f64, depth: u8) -> Result<VoxelCloud> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::contract(format!("scale must be positive, got {scale}")));
    }
    if !(1..=morton::MAX_DEPTH).contains(&depth) {
        return Err(Error::contract(format!("depth {depth} outside 1..=16")));
    }
    let max = ((1u32 << depth) - 1) as f64;
    let coords = pc
        .points()
        .iter()
        .map(|p| p.map(|v| (v.f64() * scale).round().clamp(0.0, max) as u32))
        .collect();
    VoxelCloud::new(depth, coords)
}
