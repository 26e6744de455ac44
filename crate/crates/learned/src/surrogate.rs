//! Autoregressive occupancy model over the octree.
//!
//! Each level is processed as a whole: parent features `f_N` are extracted
//! once, then eight passes predict child `i` of every parent from `f_N` and
//! the bits of children `0..i` (undecided bits are fed as `-1`). Coding order
//! is therefore level, then child index, then Morton order of the parent.
//!
//! Parent input features (12 channels): a constant 1, the occupancy byte of
//! the parent's own parent as 8 binary channels, and the three low bits of
//! the parent coordinate. All of them follow from the set of parents alone.

use std::sync::Arc;

use pcvox_core::bitcodec::{
    quantize_probability, Bitstream, CodecId, Header, RangeDecoder, RangeEncoder, SurrogateExt,
};
use pcvox_core::octcodec::{decode_coarse_levels, encode_coarse_levels};
use pcvox_core::pcgeom::{build_octree, morton};
use pcvox_core::{Error, OctreeLevels, Result, Scalar, VoxelCloud};
use pcvox_nn::{
    bce, checkpoint_hash, sum_gradients, Adam, BatchNorm, BnMode, Conv, CoordSet, Graph, Maps, ParamStore,
    SConvBlock, SInceptionResNet, SparseTensor, StoreId, Var,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const INPUT_CHANNELS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SurrogateConfig {
    /// Feature width `C` of every block.
    pub channels: usize,
    /// Levels coded with the context-modelled octree coder instead of the
    /// network.
    pub coarse_levels: u8,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self { channels: 32, coarse_levels: 2, seed: 0 }
    }
}

impl SurrogateConfig {
    /// Architecture descriptor stored in checkpoints.
    pub fn arch(&self) -> String {
        format!("surrogate c={} coarse={}", self.channels, self.coarse_levels)
    }

    pub fn parse_arch(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("not a surrogate architecture: {s:?}"));
        let mut it = s.split_whitespace();
        if it.next() != Some("surrogate") {
            return Err(bad());
        }
        let mut cfg = Self::default();
        for kv in it {
            let (k, v) = kv.split_once('=').ok_or_else(bad)?;
            match k {
                "c" => cfg.channels = v.parse().map_err(|_| bad())?,
                "coarse" => cfg.coarse_levels = v.parse().map_err(|_| bad())?,
                _ => return Err(bad()),
            }
        }
        Ok(cfg)
    }
}

/// One octree level's parents with their kernel maps and input features.
#[derive(Debug, Clone)]
pub struct LevelInput<T> {
    pub coords: Arc<CoordSet>,
    pub maps: Maps,
    pub features: SparseTensor<T>,
}

impl<T: Scalar> LevelInput<T> {
    pub fn new(parents: &[[u32; 3]]) -> Self {
        let coords = Arc::new(CoordSet::new(parents.to_vec()));
        let mut feats = Vec::with_capacity(coords.len() * INPUT_CHANNELS);
        for &p in coords.coords() {
            let gp = p.map(|v| v >> 1);
            feats.push(T::one());
            for k in 0..8u8 {
                let present = coords.row(morton::child_of(gp, k)).is_some();
                feats.push(if present { T::one() } else { T::zero() });
            }
            for v in p {
                feats.push(T::of((v & 1) as f64));
            }
        }
        let maps = Maps::new(&coords);
        let features = SparseTensor { coords: coords.clone(), channels: INPUT_CHANNELS, feats };
        Self { coords, maps, features }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Occupancy bytes expanded to an `n x 8` matrix of 0/1 values.
pub fn occupancy_bits<T: Scalar>(bytes: &[u8]) -> Vec<T> {
    bytes
        .iter()
        .flat_map(|&b| (0..8).map(move |i| if b >> i & 1 == 1 { T::one() } else { T::zero() }))
        .collect()
}

/// A cloud's octree levels with inputs and targets precomputed for training.
#[derive(Debug, Clone)]
pub struct PreparedCloud<T> {
    pub levels: Vec<(LevelInput<T>, Vec<T>)>,
}

impl<T: Scalar> PreparedCloud<T> {
    pub fn new(vc: &VoxelCloud) -> Self {
        let oct = build_octree(vc);
        let levels = oct
            .levels
            .iter()
            .map(|l| (LevelInput::new(&l.parents), occupancy_bits(&l.occupancy)))
            .collect();
        Self { levels }
    }

    pub fn slots(&self) -> usize {
        self.levels.iter().map(|(_, b)| b.len()).sum()
    }
}

#[derive(Debug, Clone)]
struct Net {
    ex1: SConvBlock,
    ex2: SConvBlock,
    ex3: SInceptionResNet,
    agg_f: Conv,
    agg_b: Conv,
    agg_bn: BatchNorm,
    agg2: SConvBlock,
    head: Conv,
}

impl Net {
    fn new<T: Scalar>(store: &mut ParamStore<T>, c: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        Self {
            ex1: SConvBlock::new(store, "extract.0", 27, INPUT_CHANNELS, c, rng),
            ex2: SConvBlock::new(store, "extract.1", 27, c, c, rng),
            ex3: SInceptionResNet::new(store, "extract.2", c, rng),
            // The first aggregation block acts on concat(f_N, bits); its
            // kernel is split so the f_N half is computed once per level.
            agg_f: Conv::new(store, "aggregate.0.conv_f", 27, c, c, false, rng),
            agg_b: Conv::new(store, "aggregate.0.conv_b", 27, 8, c, false, rng),
            agg_bn: BatchNorm::new(store, "aggregate.0.bn", c),
            agg2: SConvBlock::new(store, "aggregate.1", 27, c, c, rng),
            head: Conv::new(store, "head", 1, c, 1, true, rng),
        }
    }
}

/// The surrogate entropy model and its parameters.
#[derive(Debug, Clone)]
pub struct SurrogateModel<T> {
    pub config: SurrogateConfig,
    pub store: ParamStore<T>,
    net: Net,
}

impl<T: Scalar> SurrogateModel<T> {
    pub fn new(config: SurrogateConfig) -> Result<Self> {
        if config.channels < 2 || config.channels % 2 != 0 {
            return Err(Error::Config(format!("channel width must be even and >= 2, got {}", config.channels)));
        }
        let mut store = ParamStore::new();
        let net = Net::new(&mut store, config.channels, config.seed);
        Ok(Self { config, store, net })
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let (arch, _) = ParamStore::<T>::from_checkpoint(bytes)?;
        let mut m = Self::new(SurrogateConfig::parse_arch(&arch)?)?;
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

    /// 64-bit hash of the checkpoint bytes.
    pub fn hash(&self) -> u64 {
        checkpoint_hash(&self.checkpoint())
    }

    /// Zeros every convolution kernel, leaving biases and batch-norm affine
    /// parameters untouched.
    pub fn zero_weights(&mut self) {
        let ids: Vec<_> = self.store.iter().filter(|(_, p)| p.name.ends_with(".w")).map(|(id, _)| id).collect();
        for id in ids {
            self.store.data_mut(id).iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn set_head_bias(&mut self, b: f64) {
        let id = self.net.head.b.expect("head has a bias");
        self.store.data_mut(id)[0] = T::of(b);
    }

    /// `f_N`: `C` channels per parent.
    pub fn parent_features(&self, g: &mut Graph<'_, T>, s: StoreId, input: &LevelInput<T>) -> Var {
        let x = g.input(&input.features);
        let h = self.net.ex1.forward(g, s, x, &input.maps.k3);
        let h = self.net.ex2.forward(g, s, h, &input.maps.k3);
        self.net.ex3.forward(g, s, h, &input.maps)
    }

    fn aggregate_base(&self, g: &mut Graph<'_, T>, s: StoreId, input: &LevelInput<T>, f: Var) -> Var {
        self.net.agg_f.forward(g, s, f, &input.maps.k3)
    }

    /// Probability (`n x 1`) that child `i` of each parent is occupied.
    fn step_probs(&self, g: &mut Graph<'_, T>, s: StoreId, input: &LevelInput<T>, base: Var, bits: Var, i: usize) -> Var {
        let masked = g.mask_undecided(bits, i);
        let b = self.net.agg_b.forward(g, s, masked, &input.maps.k3);
        let h = g.add(base, b);
        let h = self.net.agg_bn.forward(g, s, h);
        let h = g.relu(h);
        let h = self.net.agg2.forward(g, s, h, &input.maps.k3);
        let logit = self.net.head.forward(g, s, h, &input.maps.k1);
        g.sigmoid(logit)
    }

    /// All eight child probabilities (`n x 8`) given the level's bits
    /// (`n x 8`); column `i` only sees columns `< i` of `bits`.
    pub fn level_probs(&self, g: &mut Graph<'_, T>, s: StoreId, input: &LevelInput<T>, bits: Var) -> Var {
        let f = self.parent_features(g, s, input);
        let base = self.aggregate_base(g, s, input, f);
        let mut p = self.step_probs(g, s, input, base, bits, 0);
        for i in 1..8 {
            let pi = self.step_probs(g, s, input, base, bits, i);
            p = g.concat(p, pi);
        }
        p
    }

    /// Cross-entropy of the level's bits in nats; `bits` may carry gradient.
    pub fn level_rate_nats(&self, g: &mut Graph<'_, T>, s: StoreId, input: &LevelInput<T>, bits: Var) -> Var {
        let p = self.level_probs(g, s, input, bits);
        g.bce_sum(p, bits)
    }

    /// Training loss of one cloud: cross-entropy over every level in nats.
    pub fn cloud_loss(&self, g: &mut Graph<'_, T>, s: StoreId, cloud: &PreparedCloud<T>) -> Var {
        let mut total: Option<Var> = None;
        for (input, bits) in &cloud.levels {
            let b = g.constant(input.len(), 8, bits.clone(), Some(input.coords.clone()));
            let l = self.level_rate_nats(g, s, input, b);
            total = Some(match total {
                Some(t) => g.add(t, l),
                None => l,
            });
        }
        total.expect("an octree has at least one level")
    }

    /// Child probabilities of every parent in `input`, Morton order; `bits`
    /// is the `n x 8` matrix of decided bits (only causal entries are read).
    pub fn predict_child_probs(&self, input: &LevelInput<T>, bits: &[T]) -> Vec<[f64; 8]> {
        let mut g = Graph::new(BnMode::Batch);
        let s = g.bind(&self.store);
        let b = g.constant(input.len(), 8, bits.to_vec(), Some(input.coords.clone()));
        let p = self.level_probs(&mut g, s, input, b);
        g.value(p).chunks_exact(8).map(|r| std::array::from_fn(|i| r[i].f64())).collect()
    }

    /// Ideal code length of `vc` in bits under the model, over all levels.
    pub fn estimate_rate(&self, vc: &VoxelCloud) -> f64 {
        self.estimate_rate_prepared(&PreparedCloud::new(vc))
    }

    pub fn estimate_rate_prepared(&self, cloud: &PreparedCloud<T>) -> f64 {
        let mut nats = 0.0;
        for (input, bits) in &cloud.levels {
            for (p, t) in self.predict_child_probs(input, bits).iter().flatten().zip(bits) {
                nats += bce(t.f64(), *p);
            }
        }
        nats / std::f64::consts::LN_2
    }

    /// One optimizer step over `batch`. Each cloud gets its own graph (batch
    /// norm statistics never mix clouds); gradients are summed in batch
    /// order. Returns the summed loss in nats.
    pub fn pretrain_step(&mut self, adam: &mut Adam, batch: &[&PreparedCloud<T>]) -> Result<f64> {
        let mut grads = Vec::new();
        let mut loss = 0.0;
        for cloud in batch {
            let mut g = Graph::new(BnMode::Batch);
            let s = g.bind(&self.store);
            let l = self.cloud_loss(&mut g, s, cloud);
            let gr = g.backward(l)?;
            loss += g.scalar(l);
            sum_gradients(&mut grads, gr.for_store(s));
        }
        adam.step(&mut self.store, &grads)?;
        Ok(loss)
    }

    /// Runs the eight passes of one level. `bit` is called once per slot in
    /// coding order with `(row, child index, quantized probability)` and
    /// returns the slot's bit. Encoder and decoder share this function, so
    /// both see bitwise identical probabilities.
    fn code_level(&self, parents: &[[u32; 3]], mut bit: impl FnMut(usize, usize, u16) -> Result<bool>) -> Result<Vec<u8>> {
        let input = LevelInput::<T>::new(parents);
        let n = input.len();
        let mut g = Graph::new(BnMode::Batch);
        let s = g.bind(&self.store);
        let f = self.parent_features(&mut g, s, &input);
        let base = self.aggregate_base(&mut g, s, &input, f);
        let mut bits = vec![T::zero(); n * 8];
        let mut bytes = vec![0u8; n];
        for i in 0..8 {
            let b = g.constant(n, 8, bits.clone(), Some(input.coords.clone()));
            let p = self.step_probs(&mut g, s, &input, base, b, i);
            let probs: Vec<u16> = g.value(p).iter().map(|v| quantize_probability(v.f64())).collect();
            for (r, &q) in probs.iter().enumerate() {
                if bit(r, i, q)? {
                    bits[r * 8 + i] = T::one();
                    bytes[r] |= 1 << i;
                }
            }
        }
        Ok(bytes)
    }

    pub fn lossless_encode(&self, vc: &VoxelCloud, scale: f32) -> Result<Bitstream> {
        self.lossless_encode_traced(vc, scale, None)
    }

    /// As [`Self::lossless_encode`], also recording every quantized
    /// probability handed to the range coder.
    pub fn lossless_encode_traced(&self, vc: &VoxelCloud, scale: f32, mut trace: Option<&mut Vec<u16>>) -> Result<Bitstream> {
        let oct: OctreeLevels = build_octree(vc);
        let depth = vc.depth() as usize;
        let coarse = (self.config.coarse_levels as usize).min(depth);
        let mut enc = RangeEncoder::new();
        encode_coarse_levels(&mut enc, &oct, coarse);
        for level in &oct.levels[coarse..] {
            let bytes = self.code_level(&level.parents, |r, i, q| {
                let b = level.occupancy[r] >> i & 1 == 1;
                if let Some(t) = trace.as_deref_mut() {
                    t.push(q);
                }
                enc.encode_bit_static(q, b);
                Ok(b)
            })?;
            debug_assert_eq!(bytes, level.occupancy);
        }
        Ok(Bitstream {
            header: Header {
                codec: CodecId::Surrogate,
                depth: vc.depth(),
                scale,
                point_count: vc.len() as u64,
                surrogate: Some(SurrogateExt { checkpoint_hash: self.hash(), coarse_levels: coarse as u8 }),
            },
            payload: enc.finish(),
        })
    }

    pub fn lossless_decode(&self, bs: &Bitstream) -> Result<VoxelCloud> {
        self.lossless_decode_traced(bs, None)
    }

    pub fn lossless_decode_traced(&self, bs: &Bitstream, mut trace: Option<&mut Vec<u16>>) -> Result<VoxelCloud> {
        let h = &bs.header;
        if h.codec != CodecId::Surrogate {
            return Err(Error::Header("not a surrogate-codec stream".into()));
        }
        let ext = h.surrogate.ok_or_else(|| Error::Header("missing surrogate header extension".into()))?;
        let mine = self.hash();
        if ext.checkpoint_hash != mine {
            return Err(Error::integrity(format!(
                "stream was coded with checkpoint {:016x}, decoder holds {mine:016x}",
                ext.checkpoint_hash
            )));
        }
        let depth = h.depth as usize;
        let coarse = ext.coarse_levels as usize;
        if coarse > depth {
            return Err(Error::Header(format!("{coarse} coarse levels exceed depth {depth}")));
        }
        let limit = usize::try_from(h.point_count).unwrap_or(usize::MAX);
        let mut dec = RangeDecoder::new(&bs.payload)?;
        let mut nodes = decode_coarse_levels(&mut dec, coarse, limit)?;
        for _ in coarse..depth {
            let bytes = self.code_level(&nodes, |_, _, q| {
                if let Some(t) = trace.as_deref_mut() {
                    t.push(q);
                }
                dec.decode_bit_static(q)
            })?;
            let mut next = Vec::new();
            for (p, b) in nodes.iter().zip(bytes) {
                if b == 0 {
                    return Err(Error::integrity("decoded an empty occupancy byte"));
                }
                next.extend((0..8u8).filter(|i| b >> i & 1 == 1).map(|i| morton::child_of(*p, i)));
            }
            if next.len() > limit {
                return Err(Error::integrity(format!("level holds {} nodes, more than {limit} points", next.len())));
            }
            nodes = next;
        }
        if nodes.len() as u64 != h.point_count {
            return Err(Error::integrity(format!(
                "decoded {} points, header declares {}",
                nodes.len(),
                h.point_count
            )));
        }
        VoxelCloud::new(h.depth, nodes)
    }
}
