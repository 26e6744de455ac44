//! A small sparse-voxel neural network engine.
//!
//! Values live on Morton-sorted coordinate sets ([`CoordSet`]); convolutions
//! gather through precomputed [`KernelMap`]s. A [`Graph`] records the forward
//! pass and replays it in reverse to produce `f64` gradients, which [`Adam`]
//! applies to a [`ParamStore`]. Everything is generic over the scalar type so
//! the same layers train in `f32` and are checked against finite differences
//! in `f64`.

pub mod blocks;
pub mod flops;
pub mod gradcheck;
pub mod graph;
pub mod kmap;
pub mod optim;
pub mod params;
pub mod tensor;

pub use blocks::{BatchNorm, Conv, Maps, SConvBlock, SInceptionResNet};
pub use flops::count_flops;
pub use graph::{bce, commit_bn_stats, sum_gradients, BnMode, ConvTrace, Gradients, Graph, PRef, StoreId, Var};
pub use kmap::{KernelMap, MapKind};
pub use optim::{Adam, StepDecay};
pub use params::{checkpoint_hash, ParamId, ParamStore};
pub use tensor::{CoordSet, SparseTensor};

pub type SparseTensorF32 = SparseTensor<f32>;
pub type SparseTensorF64 = SparseTensor<f64>;
pub type ParamStoreF32 = ParamStore<f32>;
pub type ParamStoreF64 = ParamStore<f64>;
pub type GraphF32<'a> = Graph<'a, f32>;
pub type GraphF64<'a> = Graph<'a, f64>;
