//! Lossless octree occupancy codec with neighbour-pattern contexts.
//!
//! Coding order is level by level from the root, parents in Morton order and
//! each occupancy byte as eight binary decisions `b_0..b_7`. The context of
//! `b_i` combines the six face neighbours of the parent (fully known once the
//! previous level is decoded), the already coded siblings `b_0..b_{i-1}` and
//! `i` itself, and selects one of `2^14` adaptive models.

mod baseline;

use std::collections::HashSet;

pub use baseline::{context_free_decode, context_free_encode};

use crate::bitcodec::{
    estimate_bits, AdaptiveBinModel, Bitstream, CodecId, Header, RangeDecoder, RangeEncoder,
};
use crate::pcgeom::{build_octree, morton, OctreeLevels, VoxelCloud};
use crate::{Error, Result};

pub const CONTEXT_BITS: u32 = 14;
pub const CONTEXT_COUNT: usize = 1 << CONTEXT_BITS;

/// Causal context of one occupancy bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NeighbourPattern {
    /// Occupancy of the parent's face neighbours: bit 0 `-x`, 1 `+x`,
    /// 2 `-y`, 3 `+y`, 4 `-z`, 5 `+z`.
    pub parent6: u8,
    /// Already coded siblings; only bits below `child_idx` may be set.
    pub sibling_mask: u8,
    pub child_idx: u8,
}

/// Membership index over the nodes of one octree level.
#[derive(Debug, Clone, Default)]
pub struct LevelIndex {
    resolution: u32,
    nodes: HashSet<u64>,
}

impl LevelIndex {
    /// `bits` is the coordinate resolution of the nodes.
    pub fn new(bits: u32, nodes: &[[u32; 3]]) -> Self {
        Self { resolution: bits, nodes: nodes.iter().map(|&c| morton::encode(c)).collect() }
    }

    pub fn contains(&self, c: [i64; 3]) -> bool {
        let limit = 1i64 << self.resolution;
        if c.iter().any(|&v| v < 0 || v >= limit) {
            return false;
        }
        self.nodes.contains(&morton::encode(c.map(|v| v as u32)))
    }
}

const FACE_OFFSETS: [[i64; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

/// Pattern for child `child_idx` of `parent`, whose level is indexed by
/// `level`. Bits of `coded_siblings` at or above `child_idx` are ignored.
pub fn compute_neighbour_pattern(
    level: &LevelIndex,
    parent: [u32; 3],
    child_idx: u8,
    coded_siblings: u8,
) -> NeighbourPattern {
    debug_assert!(child_idx < 8);
    let p = parent.map(|v| v as i64);
    let mut parent6 = 0u8;
    for (k, o) in FACE_OFFSETS.iter().enumerate() {
        if level.contains([p[0] + o[0], p[1] + o[1], p[2] + o[2]]) {
            parent6 |= 1 << k;
        }
    }
    let causal = ((1u16 << child_idx) - 1) as u8;
    NeighbourPattern { parent6, sibling_mask: coded_siblings & causal, child_idx }
}

/// Folds a pattern into the model table. Child `i` has `2^i` sibling states,
/// so the 64 x 255 valid patterns pack without collisions into `2^14` slots.
pub fn context_index(pat: &NeighbourPattern) -> usize {
    let i = pat.child_idx as usize;
    let causal = (1usize << i) - 1;
    let sib = (pat.sibling_mask as usize) & causal;
    let idx = (pat.parent6 as usize & 0x3f) * 255 + causal + sib;
    debug_assert!(idx < CONTEXT_COUNT);
    idx
}

/// Adaptive models for every context plus the root byte's dedicated models.
#[derive(Debug, Clone)]
pub struct ContextTable {
    models: Vec<AdaptiveBinModel>,
    root: [AdaptiveBinModel; 8],
}

impl Default for ContextTable {
    fn default() -> Self {
        Self::new()
    }
}

impl ContextTable {
    pub fn new() -> Self {
        Self {
            models: vec![AdaptiveBinModel::uniform(); CONTEXT_COUNT],
            root: [AdaptiveBinModel::uniform(); 8],
        }
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

/// One side of the coder; lets encoder and decoder share the traversal.
pub(crate) trait BinaryCoder {
    /// Encoders code `bit` and return it; decoders ignore it and return the
    /// decoded bit.
    fn code(&mut self, model: &mut AdaptiveBinModel, bit: bool) -> Result<bool>;
}

pub(crate) struct Enc<'a> {
    pub enc: &'a mut RangeEncoder,
    pub ideal_bits: f64,
}

impl BinaryCoder for Enc<'_> {
    fn code(&mut self, model: &mut AdaptiveBinModel, bit: bool) -> Result<bool> {
        self.ideal_bits += estimate_bits(model.probability(), bit);
        self.enc.encode_bit(model, bit);
        Ok(bit)
    }
}

pub(crate) struct Dec<'a, 'b> {
    pub dec: &'a mut RangeDecoder<'b>,
}

impl BinaryCoder for Dec<'_, '_> {
    fn code(&mut self, model: &mut AdaptiveBinModel, _bit: bool) -> Result<bool> {
        self.dec.decode_bit(model)
    }
}

/// Codes the occupancy bytes of level `level_idx`. On encode `bytes` holds
/// the true bytes; on decode it is overwritten.
fn code_level<C: BinaryCoder>(
    coder: &mut C,
    table: &mut ContextTable,
    level_idx: usize,
    parents: &[[u32; 3]],
    bytes: &mut [u8],
    mut trace: Option<&mut Vec<NeighbourPattern>>,
) -> Result<()> {
    let index = LevelIndex::new(level_idx as u32, parents);
    for (parent, byte) in parents.iter().zip(bytes.iter_mut()) {
        let mut mask = 0u8;
        for i in 0..8u8 {
            // A byte is never empty, so b_7 is implied when b_0..b_6 are zero.
            if i == 7 && mask == 0 {
                mask |= 1 << 7;
                break;
            }
            let truth = (*byte >> i) & 1 == 1;
            let bit = if level_idx == 0 {
                coder.code(&mut table.root[i as usize], truth)?
            } else {
                let pat = compute_neighbour_pattern(&index, *parent, i, mask);
                if let Some(t) = trace.as_deref_mut() {
                    t.push(pat);
                }
                coder.code(&mut table.models[context_index(&pat)], truth)?
            };
            mask |= (bit as u8) << i;
        }
        *byte = mask;
    }
    Ok(())
}

/// Codes levels `range` of an octree whose level `range.start` parents are
/// `parents`; returns the parents of level `range.end`.
pub(crate) fn code_levels<C: BinaryCoder>(
    coder: &mut C,
    table: &mut ContextTable,
    range: std::ops::Range<usize>,
    mut parents: Vec<[u32; 3]>,
    truth: Option<&OctreeLevels>,
    max_nodes: usize,
    mut trace: Option<&mut Vec<NeighbourPattern>>,
) -> Result<Vec<[u32; 3]>> {
    for l in range {
        let mut bytes = match truth {
            Some(oct) => oct.levels[l].occupancy.clone(),
            None => vec![0u8; parents.len()],
        };
        code_level(coder, table, l, &parents, &mut bytes, trace.as_deref_mut())?;
        let total: usize = bytes.iter().map(|b| b.count_ones() as usize).sum();
        if total > max_nodes {
            return Err(Error::integrity(format!(
                "level {l} expands to {total} nodes, more than the {max_nodes} leaves declared"
            )));
        }
        let mut next = Vec::with_capacity(total);
        for (p, &b) in parents.iter().zip(&bytes) {
            for i in 0..8u8 {
                if b >> i & 1 == 1 {
                    next.push(morton::child_of(*p, i));
                }
            }
        }
        parents = next;
    }
    Ok(parents)
}

/// Codes the first `levels` octree levels of `oct` with a fresh context
/// table; returns the ideal code length in bits.
pub fn encode_coarse_levels(enc: &mut RangeEncoder, oct: &OctreeLevels, levels: usize) -> f64 {
    let mut coder = Enc { enc, ideal_bits: 0.0 };
    code_levels(&mut coder, &mut ContextTable::new(), 0..levels, vec![[0, 0, 0]], Some(oct), usize::MAX, None)
        .expect("encoding cannot fail");
    coder.ideal_bits
}

/// Inverse of [`encode_coarse_levels`]: the nodes at `levels`-bit resolution.
pub fn decode_coarse_levels(dec: &mut RangeDecoder<'_>, levels: usize, max_nodes: usize) -> Result<Vec<[u32; 3]>> {
    code_levels(&mut Dec { dec }, &mut ContextTable::new(), 0..levels, vec![[0, 0, 0]], None, max_nodes, None)
}

/// Coding statistics from [`encode_with_stats`].
#[derive(Debug, Clone, Default)]
pub struct EncodeStats {
    /// Sum of ideal code lengths under the pre-update model probabilities.
    pub ideal_bits: f64,
    pub patterns: Vec<NeighbourPattern>,
}

pub fn encode(vc: &VoxelCloud, scale: f32) -> Bitstream {
    encode_with_stats(vc, scale, false).0
}

pub fn encode_with_stats(vc: &VoxelCloud, scale: f32, trace: bool) -> (Bitstream, EncodeStats) {
    let oct = build_octree(vc);
    let mut enc = RangeEncoder::new();
    let mut table = ContextTable::new();
    let mut patterns = Vec::new();
    let mut coder = Enc { enc: &mut enc, ideal_bits: 0.0 };
    code_levels(
        &mut coder,
        &mut table,
        0..vc.depth() as usize,
        vec![[0, 0, 0]],
        Some(&oct),
        usize::MAX,
        trace.then_some(&mut patterns),
    )
    .expect("encoding cannot fail");
    let ideal_bits = coder.ideal_bits;
    let bs = Bitstream {
        header: Header {
            codec: CodecId::Octree,
            depth: vc.depth(),
            scale,
            point_count: vc.len() as u64,
            surrogate: None,
        },
        payload: enc.finish(),
    };
    (bs, EncodeStats { ideal_bits, patterns })
}

pub fn decode(bs: &Bitstream) -> Result<VoxelCloud> {
    decode_traced(bs, None)
}

pub fn decode_traced(bs: &Bitstream, trace: Option<&mut Vec<NeighbourPattern>>) -> Result<VoxelCloud> {
    let h = &bs.header;
    if h.codec != CodecId::Octree {
        return Err(Error::Header("not an octree-codec stream".into()));
    }
    let mut dec = RangeDecoder::new(&bs.payload)?;
    let mut table = ContextTable::new();
    let leaves = code_levels(
        &mut Dec { dec: &mut dec },
        &mut table,
        0..h.depth as usize,
        vec![[0, 0, 0]],
        None,
        h.point_count as usize,
        trace,
    )?;
    if leaves.len() as u64 != h.point_count {
        return Err(Error::integrity(format!(
            "decoded {} points, header declares {}",
            leaves.len(),
            h.point_count
        )));
    }
    Ok(VoxelCloud::from_sorted(h.depth, leaves))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, depth: u8, n: usize) -> VoxelCloud {
        let max = 1u32 << depth;
        let c = (0..n).map(|_| [0; 3].map(|_: i32| rng.random_range(0..max))).collect();
        VoxelCloud::new(depth, c).unwrap()
    }

    fn full_cube(depth: u8) -> VoxelCloud {
        let n = 1u32 << depth;
        let mut c = Vec::new();
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    c.push([x, y, z]);
                }
            }
        }
        VoxelCloud::new(depth, c).unwrap()
    }

    #[test]
    fn isolated_parent_pattern() {
        let idx = LevelIndex::new(3, &[[2, 2, 2]]);
        let pat = compute_neighbour_pattern(&idx, [2, 2, 2], 0, 0xff);
        assert_eq!(pat, NeighbourPattern { parent6: 0, sibling_mask: 0, child_idx: 0 });
        let pat = compute_neighbour_pattern(&idx, [2, 2, 2], 3, 0xff);
        assert_eq!(pat.sibling_mask, 0b111);
    }

    #[test]
    fn full_cube_interior_pattern() {
        let oct = build_octree(&full_cube(3));
        let level = &oct.levels[2];
        let idx = LevelIndex::new(2, &level.parents);
        let pat = compute_neighbour_pattern(&idx, [1, 2, 1], 5, 0);
        assert_eq!(pat.parent6, 63);
        let corner = compute_neighbour_pattern(&idx, [0, 0, 0], 0, 0);
        assert_eq!(corner.parent6, 0b101010);
    }

    #[test]
    fn context_index_is_deterministic_and_bounded() {
        let zero = NeighbourPattern { parent6: 0, sibling_mask: 0, child_idx: 0 };
        assert_eq!(context_index(&zero), 0);
        let mut seen = HashSet::new();
        for parent6 in 0..64u8 {
            for child_idx in 0..8u8 {
                for mask in 0..(1u16 << child_idx) {
                    let pat = NeighbourPattern { parent6, sibling_mask: mask as u8, child_idx };
                    let i = context_index(&pat);
                    assert!(i < CONTEXT_COUNT);
                    assert_eq!(i, context_index(&pat));
                    assert!(seen.insert(i), "collision at {pat:?}");
                }
            }
        }
    }

    #[test]
    fn random_patterns_spread_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut load = vec![0u32; CONTEXT_COUNT];
        let n = 100_000;
        for _ in 0..n {
            // Uniform over valid (child_idx, sibling_mask) pairs.
            let r = rng.random_range(1..256u32);
            let child_idx = 31 - r.leading_zeros();
            let pat = NeighbourPattern {
                parent6: rng.random_range(0..64),
                sibling_mask: (r - (1 << child_idx)) as u8,
                child_idx: child_idx as u8,
            };
            load[context_index(&pat)] += 1;
        }
        let used = load.iter().filter(|&&l| l > 0).count();
        let mean = n as f64 / used as f64;
        let max = *load.iter().max().unwrap() as f64;
        assert!(max < 4.0 * mean, "max {max} mean {mean}");
    }

    #[test]
    fn single_voxel_round_trip() {
        let vc = VoxelCloud::new(3, vec![[0, 0, 0]]).unwrap();
        let bs = encode(&vc, 1.0);
        assert!(bs.payload.len() <= 8, "{} bytes", bs.payload.len());
        assert_eq!(decode(&bs).unwrap(), vc);
    }

    #[test]
    fn full_cube_is_cheap() {
        let vc = full_cube(4);
        let bs = encode(&vc, 1.0);
        assert_eq!(decode(&bs).unwrap(), vc);
        let bpp = bs.payload_bits() as f64 / vc.len() as f64;
        assert!(bpp < 0.6, "bpp {bpp}");
    }

    fn sphere_shell(depth: u8, r: f64) -> VoxelCloud {
        let n = 1u32 << depth;
        let c = n as f64 / 2.0;
        let mut coords = Vec::new();
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    let d = [x, y, z].map(|v| v as f64 - c);
                    if ((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() - r).abs() <= 0.5 {
                        coords.push([x, y, z]);
                    }
                }
            }
        }
        VoxelCloud::new(depth, coords).unwrap()
    }

    #[test]
    fn beats_context_free_on_surfaces() {
        for (depth, r) in [(6u8, 24.0), (7, 50.0)] {
            let vc = sphere_shell(depth, r);
            let bs = encode(&vc, 1.0);
            assert_eq!(decode(&bs).unwrap(), vc);
            let ours = bs.payload_bits() as f64 / vc.len() as f64;
            let free = context_free_encode(&vc).len() as f64 * 8.0 / vc.len() as f64;
            assert!(ours < free, "depth {depth}: {ours:.3} vs {free:.3} bpp");
        }
    }

    #[test]
    fn random_round_trips_and_entropy_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in 0..60 {
            let depth = 2 + (t % 6) as u8;
            let n = rng.random_range(1..400);
            let vc = random_cloud(&mut rng, depth, n);
            let (bs, stats) = encode_with_stats(&vc, 1.0, false);
            assert_eq!(decode(&bs).unwrap(), vc);
            assert!(bs.payload_bits() as f64 <= 1.02 * stats.ideal_bits + 32.0);
        }
    }

    #[test]
    fn lockstep_patterns() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vc = random_cloud(&mut rng, 6, 700);
        let (bs, stats) = encode_with_stats(&vc, 1.0, true);
        let mut dec_patterns = Vec::new();
        decode_traced(&bs, Some(&mut dec_patterns)).unwrap();
        assert!(!stats.patterns.is_empty());
        assert_eq!(stats.patterns, dec_patterns);
        assert!(stats.patterns.iter().all(|p| p.sibling_mask >> p.child_idx == 0));
    }

    #[test]
    fn corrupted_payload_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vc = random_cloud(&mut rng, 7, 500);
        let bs = encode(&vc, 1.0);
        let mut rejected = 0;
        for k in 0..20 {
            let mut bad = bs.clone();
            let pos = (k * 7919) % bad.payload.len();
            bad.payload[pos] ^= 0x5a;
            match decode(&bad) {
                Ok(out) => assert_ne!(out, vc),
                Err(_) => rejected += 1,
            }
        }
        assert!(rejected > 0);
        let mut short = bs.clone();
        short.payload.truncate(bs.payload.len() / 2);
        assert!(decode(&short).is_err());
    }
}
