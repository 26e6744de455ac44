//! Learned components: the surrogate entropy model (a rate estimator and a
//! standalone lossless codec) and the voxelization network trained against it.

pub mod surrogate;
pub mod voxnet;

pub use surrogate::{occupancy_bits, LevelInput, PreparedCloud, SurrogateConfig, SurrogateModel, INPUT_CHANNELS};
pub use voxnet::{prune_region_report, EditReport, Stage, Upsampling, VoxInput, VoxNet, VoxNetConfig, Voxelized};

pub type SurrogateModelF32 = SurrogateModel<f32>;
pub type SurrogateModelF64 = SurrogateModel<f64>;
pub type VoxNetF32 = VoxNet<f32>;
pub type VoxNetF64 = VoxNet<f64>;
