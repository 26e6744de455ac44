//! Context-free reference coder: every occupancy bit through one adaptive model.

use crate::bitcodec::{AdaptiveBinModel, RangeDecoder, RangeEncoder};
use crate::pcgeom::{build_octree, morton, VoxelCloud};
use crate::{Error, Result};

/// Payload of the context-free coder.
pub fn context_free_encode(vc: &VoxelCloud) -> Vec<u8> {
    let oct = build_octree(vc);
    let mut enc = RangeEncoder::new();
    let mut model = AdaptiveBinModel::uniform();
    for level in &oct.levels {
        for &byte in &level.occupancy {
            for i in 0..8 {
                enc.encode_bit(&mut model, byte >> i & 1 == 1);
            }
        }
    }
    enc.finish()
}

pub fn context_free_decode(payload: &[u8], depth: u8, point_count: u64) -> Result<VoxelCloud> {
    let mut dec = RangeDecoder::new(payload)?;
    let mut model = AdaptiveBinModel::uniform();
    let mut parents = vec![[0u32; 3]];
    for _ in 0..depth {
        let mut next = Vec::new();
        for p in &parents {
            let mut byte = 0u8;
            for i in 0..8 {
                byte |= (dec.decode_bit(&mut model)? as u8) << i;
            }
            if byte == 0 {
                return Err(Error::integrity("empty occupancy byte"));
            }
            for i in 0..8u8 {
                if byte >> i & 1 == 1 {
                    next.push(morton::child_of(*p, i));
                }
            }
            if next.len() as u64 > point_count {
                return Err(Error::integrity("more nodes than declared points"));
            }
        }
        parents = next;
    }
    if parents.len() as u64 != point_count {
        return Err(Error::integrity(format!(
            "decoded {} points, expected {point_count}",
            parents.len()
        )));
    }
    Ok(VoxelCloud::from_sorted(depth, parents))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for depth in 1..7u8 {
            let max = 1u32 << depth;
            let c = (0..200).map(|_| [0; 3].map(|_: u8| rng.random_range(0..max))).collect();
            let vc = VoxelCloud::new(depth, c).unwrap();
            let payload = context_free_encode(&vc);
            assert_eq!(context_free_decode(&payload, depth, vc.len() as u64).unwrap(), vc);
        }
    }
}
