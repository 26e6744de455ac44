//! Voxelization network: quantize, downsample by two, extract features,
//! upsample back with one transposed convolution and classify each of the
//! eight candidate children of every parent.

use std::collections::HashSet;
use std::sync::Arc;

use pcvox_core::pcgeom::quantize;
use pcvox_core::{Error, PointCloud, Result, Scalar, VoxelCloud};
use pcvox_nn::{
    count_flops, sum_gradients, Adam, BnMode, Conv, CoordSet, Graph, KernelMap, ParamStore, SConvBlock,
    SparseTensor, StoreId, Var,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::surrogate::{LevelInput, SurrogateModel};

/// Where the transposed convolution sits in the feature chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Upsampling {
    /// All extraction blocks at parent resolution, transposed conv last.
    BackLoaded,
    /// Transposed conv after the first half of the blocks.
    Mid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoxNetConfig {
    pub channels: usize,
    /// Extraction blocks between the downsample and the head.
    pub blocks: usize,
    pub upsampling: Upsampling,
    pub seed: u64,
}

impl Default for VoxNetConfig {
    fn default() -> Self {
        Self { channels: 32, blocks: 2, upsampling: Upsampling::BackLoaded, seed: 0 }
    }
}

impl VoxNetConfig {
    pub fn arch(&self) -> String {
        let up = match self.upsampling {
            Upsampling::BackLoaded => "back",
            Upsampling::Mid => "mid",
        };
        format!("voxnet c={} blocks={} up={up}", self.channels, self.blocks)
    }

    pub fn parse_arch(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("not a voxnet architecture: {s:?}"));
        let mut it = s.split_whitespace();
        if it.next() != Some("voxnet") {
            return Err(bad());
        }
        let mut cfg = Self::default();
        for kv in it {
            let (k, v) = kv.split_once('=').ok_or_else(bad)?;
            match (k, v) {
                ("c", v) => cfg.channels = v.parse().map_err(|_| bad())?,
                ("blocks", v) => cfg.blocks = v.parse().map_err(|_| bad())?,
                ("up", "back") => cfg.upsampling = Upsampling::BackLoaded,
                ("up", "mid") => cfg.upsampling = Upsampling::Mid,
                _ => return Err(bad()),
            }
        }
        Ok(cfg)
    }

    /// Number of extraction blocks that run at parent resolution.
    fn parent_blocks(&self) -> usize {
        match self.upsampling {
            Upsampling::BackLoaded => self.blocks,
            Upsampling::Mid => self.blocks / 2,
        }
    }
}

/// One layer of the network in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Downsample,
    ParentBlock,
    Upsample,
    ChildBlock,
    Head,
}

/// A scaled cloud with every coordinate set and kernel map the network and
/// the surrogate rate term need.
#[derive(Debug, Clone)]
pub struct VoxInput<T> {
    pub scaled: VoxelCloud,
    pub input: SparseTensor<T>,
    pub down: Arc<KernelMap>,
    /// Parent level, shared with the surrogate's leaf-level rate term.
    pub parents: LevelInput<T>,
    pub up: Arc<KernelMap>,
    /// Candidate children: row `8p + i` is child `i` of parent row `p`.
    pub children: Arc<CoordSet>,
    pub child_k1: Arc<KernelMap>,
    pub child_k3: Option<Arc<KernelMap>>,
    /// 1 where the candidate is in the scaled cloud.
    pub targets: Vec<T>,
}

impl<T: Scalar> VoxInput<T> {
    pub fn new(scaled: VoxelCloud, child_k3: bool) -> Result<Self> {
        if scaled.is_empty() {
            return Err(Error::contract("voxelization needs a nonempty cloud"));
        }
        let coords = Arc::new(CoordSet::new(scaled.coords().to_vec()));
        let input = SparseTensor::filled(coords.clone(), 1, T::one());
        let down = Arc::new(KernelMap::downsample(&coords));
        let parents = LevelInput::new(down.output.coords());
        let up = Arc::new(KernelMap::upsample(&parents.coords));
        let children = up.output.clone();
        let child_k1 = Arc::new(KernelMap::submanifold(&children, 1));
        let child_k3 = child_k3.then(|| Arc::new(KernelMap::submanifold(&children, 3)));
        let targets = children
            .coords()
            .iter()
            .map(|&c| if coords.row(c).is_some() { T::one() } else { T::zero() })
            .collect();
        Ok(Self { scaled, input, down, parents, up, children, child_k1, child_k3, targets })
    }

    pub fn from_points<S: Scalar>(pc: &PointCloud<S>, scale: f64, depth: u8, child_k3: bool) -> Result<Self> {
        Self::new(quantize(pc, scale, depth)?, child_k3)
    }

    pub fn candidates(&self) -> usize {
        self.children.len()
    }
}

/// Result of [`VoxNet::voxelize`].
#[derive(Debug, Clone)]
pub struct Voxelized {
    pub cloud: VoxelCloud,
    /// Every candidate classified empty; `cloud` is the scaled input.
    pub fallback: bool,
}

#[derive(Debug, Clone)]
struct Net {
    down: SConvBlock,
    blocks: Vec<SConvBlock>,
    up: SConvBlock,
    head: Conv,
}

#[derive(Debug, Clone)]
pub struct VoxNet<T> {
    pub config: VoxNetConfig,
    pub store: ParamStore<T>,
    net: Net,
}

impl<T: Scalar> VoxNet<T> {
    pub fn new(config: VoxNetConfig) -> Result<Self> {
        if config.channels == 0 || config.blocks == 0 {
            return Err(Error::Config("voxnet needs at least one channel and one block".into()));
        }
        let c = config.channels;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let down = SConvBlock::new(&mut store, "down", 8, 1, c, &mut rng);
        let blocks = (0..config.blocks)
            .map(|i| SConvBlock::new(&mut store, &format!("block.{i}"), 27, c, c, &mut rng))
            .collect();
        let up = SConvBlock::new(&mut store, "up", 8, c, c, &mut rng);
        let head = Conv::new(&mut store, "head", 1, c, 1, true, &mut rng);
        Ok(Self { config, store, net: Net { down, blocks, up, head } })
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let (arch, _) = ParamStore::<T>::from_checkpoint(bytes)?;
        let mut m = Self::new(VoxNetConfig::parse_arch(&arch)?)?;
        m.store.load_checkpoint(bytes, &arch)?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_checkpoint(&std::fs::read(path)?)
    }

    pub fn checkpoint(&self) -> Vec<u8> {
        self.store.to_checkpoint(&self.config.arch())
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.checkpoint())?;
        Ok(())
    }

    pub fn set_head_bias(&mut self, b: f64) {
        let id = self.net.head.b.expect("head has a bias");
        self.store.data_mut(id)[0] = T::of(b);
    }

    pub fn stages(&self) -> Vec<Stage> {
        let k = self.config.parent_blocks();
        let mut s = vec![Stage::Downsample];
        s.extend(std::iter::repeat_n(Stage::ParentBlock, k));
        s.push(Stage::Upsample);
        s.extend(std::iter::repeat_n(Stage::ChildBlock, self.config.blocks - k));
        s.push(Stage::Head);
        s
    }

    fn needs_child_k3(&self) -> bool {
        self.config.parent_blocks() < self.config.blocks
    }

    pub fn prepare(&self, scaled: VoxelCloud) -> Result<VoxInput<T>> {
        VoxInput::new(scaled, self.needs_child_k3())
    }

    /// Candidate probabilities `p^c` (`8 N_p x 1`, rows as in
    /// [`VoxInput::children`]).
    pub fn forward(&self, g: &mut Graph<'_, T>, s: StoreId, x: &VoxInput<T>) -> Var {
        let k = self.config.parent_blocks();
        let h = g.input(&x.input);
        let mut h = self.net.down.forward(g, s, h, &x.down);
        for b in &self.net.blocks[..k] {
            h = b.forward(g, s, h, &x.parents.maps.k3);
        }
        h = self.net.up.forward(g, s, h, &x.up);
        if k < self.config.blocks {
            let k3 = x.child_k3.as_ref().expect("input prepared without child maps");
            for b in &self.net.blocks[k..] {
                h = b.forward(g, s, h, k3);
            }
        }
        let logit = self.net.head.forward(g, s, h, &x.child_k1);
        g.sigmoid(logit)
    }

    /// Multiply-accumulate count of one forward pass.
    pub fn flops(&self, x: &VoxInput<T>) -> u64 {
        let mut g = Graph::new(BnMode::Batch);
        let s = g.bind(&self.store);
        self.forward(&mut g, s, x);
        count_flops(g.conv_trace())
    }

    /// Classifies every candidate; a candidate is kept iff `p^c >= 0.5`.
    pub fn voxelize_prepared(&self, x: &VoxInput<T>) -> Result<Voxelized> {
        let mut g = Graph::new(BnMode::Batch);
        let s = g.bind(&self.store);
        let p = self.forward(&mut g, s, x);
        let keep: Vec<[u32; 3]> = g
            .value(p)
            .iter()
            .zip(x.children.coords())
            .filter(|(v, _)| v.f64() >= 0.5)
            .map(|(_, &c)| c)
            .collect();
        if keep.is_empty() {
            log::warn!("every candidate classified empty; falling back to the scaled cloud");
            return Ok(Voxelized { cloud: x.scaled.clone(), fallback: true });
        }
        Ok(Voxelized { cloud: VoxelCloud::new(x.scaled.depth(), keep)?, fallback: false })
    }

    pub fn voxelize<S: Scalar>(&self, pc: &PointCloud<S>, scale: f64, depth: u8) -> Result<Voxelized> {
        self.voxelize_prepared(&self.prepare(quantize(pc, scale, depth)?)?)
    }

    /// `L = D + lambda * R`: `D` is the cross-entropy between the scaled
    /// cloud's occupancy and `p^c`, `R` the surrogate's leaf-level rate (nats)
    /// of the rounded output on the same parents. Returns `(L, D, R)`.
    pub fn joint_loss(
        &self,
        g: &mut Graph<'_, T>,
        s: StoreId,
        surrogate: Option<(&SurrogateModel<T>, StoreId)>,
        x: &VoxInput<T>,
        lambda: f64,
    ) -> (Var, Var, Option<Var>) {
        let p = self.forward(g, s, x);
        let t = g.constant(x.candidates(), 1, x.targets.clone(), Some(x.children.clone()));
        let d = g.bce_sum(p, t);
        let Some((sm, ss)) = surrogate.filter(|_| lambda > 0.0) else {
            return (d, d, None);
        };
        let bits = g.ste_round(p);
        let bits = g.reshape(bits, x.parents.len(), 8, Some(x.parents.coords.clone()));
        let r = sm.level_rate_nats(g, ss, &x.parents, bits);
        let lr = g.scale(r, lambda);
        (g.add(d, lr), d, Some(r))
    }

    /// One optimizer step with the surrogate frozen. Returns the summed
    /// `(L, D, R)` over the batch, `R` in nats.
    pub fn joint_train_step(
        &mut self,
        adam: &mut Adam,
        surrogate: &SurrogateModel<T>,
        batch: &[&VoxInput<T>],
        lambda: f64,
    ) -> Result<(f64, f64, f64)> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        let mut grads = Vec::new();
        let (mut lt, mut dt, mut rt) = (0.0, 0.0, 0.0);
        for x in batch {
            let mut g = Graph::new(BnMode::Batch);
            let s = g.bind(&self.store);
            let ss = g.bind_frozen(&surrogate.store, BnMode::Batch);
            let (l, d, r) = self.joint_loss(&mut g, s, Some((surrogate, ss)), x, lambda);
            let gr = g.backward(l)?;
            lt += g.scalar(l);
            dt += g.scalar(d);
            rt += r.map_or(0.0, |r| g.scalar(r));
            sum_gradients(&mut grads, gr.for_store(s));
        }
        adam.step(&mut self.store, &grads)?;
        Ok((lt, dt, rt))
    }
}

/// Point edits between two clouds of the same depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditReport {
    pub added: usize,
    pub removed: usize,
    /// Parents of `before` with no child left in `after`.
    pub pruned_parents: usize,
}

pub fn prune_region_report(before: &VoxelCloud, after: &VoxelCloud) -> Result<EditReport> {
    if before.depth() != after.depth() {
        return Err(Error::contract(format!("depths differ: {} vs {}", before.depth(), after.depth())));
    }
    let a: HashSet<_> = before.coords().iter().collect();
    let b: HashSet<_> = after.coords().iter().collect();
    let pa: HashSet<_> = before.parents().into_iter().collect();
    let pb: HashSet<_> = after.parents().into_iter().collect();
    Ok(EditReport {
        added: b.difference(&a).count(),
        removed: a.difference(&b).count(),
        pruned_parents: pa.difference(&pb).count(),
    })
}
