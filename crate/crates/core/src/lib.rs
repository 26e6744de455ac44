//! Geometry primitives and lossless octree coding for voxelized point clouds.
//!
//! * [`pcgeom`]: point/voxel clouds, PLY I/O, quantization, Morton order,
//!   octree construction and D1/D2 distortion metrics.
//! * [`bitcodec`]: a 32-bit binary range coder with 16-bit fixed point
//!   probabilities and the `PVX1` bitstream container.
//! * [`octcodec`]: the context-modelled baseline octree occupancy codec.

pub mod bitcodec;
mod error;
pub mod octcodec;
pub mod pcgeom;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use pcgeom::{OctreeLevels, PointCloud, VoxelCloud};

/// Real-valued point cloud as loaded from disk.
pub type PointCloudF64 = PointCloud<f64>;
/// Single precision point cloud, matching the on-disk PLY float layout.
pub type PointCloudF32 = PointCloud<f32>;
