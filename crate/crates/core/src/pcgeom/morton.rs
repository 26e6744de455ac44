//! Morton (Z-order) codes for 3D voxel coordinates.
//!
//! Bits are interleaved so that every level contributes a 3-bit child index
//! `(x_bit << 2) | (y_bit << 1) | z_bit`, most significant level first. The
//! code of a parent is therefore `code >> 3` and its child index `code & 7`.

/// Largest supported bit depth per axis.
pub const MAX_DEPTH: u8 = 16;

/// Spread the low 16 bits of `v` so that bit `i` lands on bit `3 * i`.
#[inline]
fn spread(v: u32) -> u64 {
    let mut x = (v & 0xffff) as u64;
    x = (x | (x << 16)) & 0x0000_ff00_00ff;
    x = (x | (x << 8)) & 0x00f0_0f00_f00f;
    x = (x | (x << 4)) & 0x0c30_c30c_30c3;
    x = (x | (x << 2)) & 0x2492_4924_9249;
    x
}

#[inline]
fn compact(code: u64) -> u32 {
    let mut x = code & 0x2492_4924_9249;
    x = (x | (x >> 2)) & 0x0c30_c30c_30c3;
    x = (x | (x >> 4)) & 0x00f0_0f00_f00f;
    x = (x | (x >> 8)) & 0x0000_ff00_00ff;
    x = (x | (x >> 16)) & 0xffff;
    x as u32
}

/// Morton code without range checking. Components must be below 2^16.
#[inline]
pub fn encode(c: [u32; 3]) -> u64 {
    (spread(c[0]) << 2) | (spread(c[1]) << 1) | spread(c[2])
}

/// Inverse of [`encode`].
#[inline]
pub fn decode(code: u64) -> [u32; 3] {
    [compact(code >> 2), compact(code >> 1), compact(code)]
}

/// Morton code of `coord` at `depth` bits per axis.
///
/// Panics if a component does not fit in `depth` bits.
pub fn morton_code(coord: [u32; 3], depth: u8) -> u64 {
    assert!(
        (1..=MAX_DEPTH).contains(&depth),
        "depth {depth} outside 1..={MAX_DEPTH}"
    );
    let limit = 1u32 << depth;
    assert!(
        coord.iter().all(|&v| v < limit),
        "coordinate {coord:?} out of range for depth {depth}"
    );
    encode(coord)
}

/// Child index of `coord` inside its parent octant.
#[inline]
pub fn child_index(coord: [u32; 3]) -> u8 {
    (((coord[0] & 1) << 2) | ((coord[1] & 1) << 1) | (coord[2] & 1)) as u8
}

/// Offset of child `idx` within its parent, as `(dx, dy, dz)` in {0,1}.
#[inline]
pub fn child_offset(idx: u8) -> [u32; 3] {
    [((idx >> 2) & 1) as u32, ((idx >> 1) & 1) as u32, (idx & 1) as u32]
}

/// Coordinate of child `idx` of `parent`.
#[inline]
pub fn child_of(parent: [u32; 3], idx: u8) -> [u32; 3] {
    let o = child_offset(idx);
    [parent[0] * 2 + o[0], parent[1] * 2 + o[1], parent[2] * 2 + o[2]]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn interleave_oracle(c: [u32; 3], depth: u8) -> u64 {
        let mut code = 0u64;
        for b in (0..depth).rev() {
            let x = (c[0] >> b) & 1;
            let y = (c[1] >> b) & 1;
            let z = (c[2] >> b) & 1;
            code = (code << 3) | ((x << 2) | (y << 1) | z) as u64;
        }
        code
    }

    #[test]
    fn known_codes() {
        assert_eq!(morton_code([0, 0, 0], 5), 0);
        assert_eq!(morton_code([1, 0, 0], 1), 4);
        assert_eq!(morton_code([1, 2, 3], 2), 29);
        assert_eq!(interleave_oracle([1, 2, 3], 2), 29);
    }

    #[test]
    fn matches_bitwise_oracle() {
        let mut s = 0x9e37_79b9_7f4a_7c15u64;
        for _ in 0..2000 {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            let c = [(s & 0xffff) as u32, ((s >> 16) & 0xffff) as u32, ((s >> 32) & 0xffff) as u32];
            let code = morton_code(c, 16);
            assert_eq!(code, interleave_oracle(c, 16));
            assert_eq!(decode(code), c);
        }
    }

    #[test]
    fn parent_child_relation() {
        let c = [13, 6, 9];
        let code = encode(c);
        assert_eq!(code >> 3, encode([6, 3, 4]));
        assert_eq!((code & 7) as u8, child_index(c));
        assert_eq!(child_of([6, 3, 4], child_index(c)), c);
    }

    #[test]
    #[should_panic]
    fn out_of_range_panics() {
        morton_code([4, 0, 0], 2);
    }
}
