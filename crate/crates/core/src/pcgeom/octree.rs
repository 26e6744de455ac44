use super::{morton, VoxelCloud};
use crate::{Error, Result};

/// One octree level: parent nodes in Morton order and their occupancy bytes.
///
/// Level `l` holds parents with `l`-bit coordinates; bit `i` of a byte is set
/// iff child index `i` (see [`morton::child_index`]) is occupied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OctreeLevel {
    pub parents: Vec<[u32; 3]>,
    pub occupancy: Vec<u8>,
}

impl OctreeLevel {
    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    /// Children of every parent, in Morton order.
    pub fn children(&self) -> Vec<[u32; 3]> {
        let mut out = Vec::with_capacity(self.parents.len() * 4);
        for (p, &byte) in self.parents.iter().zip(&self.occupancy) {
            for i in 0..8u8 {
                if byte >> i & 1 == 1 {
                    out.push(morton::child_of(*p, i));
                }
            }
        }
        out
    }
}

/// Octree of a [`VoxelCloud`]: `depth` levels from the root (level 0, a single
/// parent at the origin) down to the parents of the leaves (level `depth-1`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OctreeLevels {
    pub depth: u8,
    pub levels: Vec<OctreeLevel>,
}

impl OctreeLevels {
    pub fn level(&self, l: usize) -> &OctreeLevel {
        &self.levels[l]
    }

    /// Number of occupancy bits (8 per parent) over all levels.
    pub fn total_slots(&self) -> usize {
        self.levels.iter().map(|l| 8 * l.len()).sum()
    }
}

/// Builds the octree bottom-up from Morton-sorted leaves.
pub fn build_octree(vc: &VoxelCloud) -> OctreeLevels {
    let depth = vc.depth();
    let mut levels = Vec::with_capacity(depth as usize);
    let mut current: Vec<[u32; 3]> = vc.coords().to_vec();
    for _ in 0..depth {
        let mut parents: Vec<[u32; 3]> = Vec::with_capacity(current.len() / 2 + 1);
        let mut occupancy: Vec<u8> = Vec::with_capacity(current.len() / 2 + 1);
        for c in &current {
            let p = c.map(|v| v >> 1);
            let bit = 1u8 << morton::child_index(*c);
            if parents.last() == Some(&p) {
                *occupancy.last_mut().unwrap() |= bit;
            } else {
                parents.push(p);
                occupancy.push(bit);
            }
        }
        levels.push(OctreeLevel { parents: parents.clone(), occupancy });
        current = parents;
    }
    levels.reverse();
    OctreeLevels { depth, levels }
}

/// Expands the levels back to leaf coordinates, checking that each level's
/// children are exactly the next level's parents.
pub fn flatten_octree(levels: &OctreeLevels) -> Result<VoxelCloud> {
    let depth = levels.depth;
    if levels.levels.len() != depth as usize || depth == 0 {
        return Err(Error::integrity(format!(
            "{} levels for depth {depth}",
            levels.levels.len()
        )));
    }
    let root = &levels.levels[0];
    if root.parents != [[0, 0, 0]] {
        return Err(Error::integrity("root level must hold exactly the origin"));
    }
    for (l, level) in levels.levels.iter().enumerate() {
        if level.parents.len() != level.occupancy.len() {
            return Err(Error::integrity(format!("level {l}: parent/byte count mismatch")));
        }
        if level.occupancy.contains(&0) {
            return Err(Error::integrity(format!("level {l}: empty occupancy byte")));
        }
        if let Some(next) = levels.levels.get(l + 1) {
            if level.children() != next.parents {
                return Err(Error::integrity(format!(
                    "children of level {l} do not match parents of level {}",
                    l + 1
                )));
            }
        }
    }
    let leaves = levels.levels[depth as usize - 1].children();
    Ok(VoxelCloud::from_sorted(depth, leaves))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_voxel() {
        let vc = VoxelCloud::new(3, vec![[0, 0, 0]]).unwrap();
        let oct = build_octree(&vc);
        assert_eq!(oct.levels.len(), 3);
        for l in &oct.levels {
            assert_eq!(l.parents, vec![[0, 0, 0]]);
            assert_eq!(l.occupancy, vec![0x01]);
        }
        assert_eq!(flatten_octree(&oct).unwrap(), vc);
    }

    #[test]
    fn full_cube_all_ff() {
        let mut coords = Vec::new();
        for x in 0..4 {
            for y in 0..4 {
                for z in 0..4 {
                    coords.push([x, y, z]);
                }
            }
        }
        let vc = VoxelCloud::new(2, coords).unwrap();
        let oct = build_octree(&vc);
        assert!(oct.levels.iter().all(|l| l.occupancy.iter().all(|&b| b == 0xff)));
        assert_eq!(oct.levels[1].len(), 8);
        assert_eq!(flatten_octree(&oct).unwrap(), vc);
    }

    #[test]
    fn child_index_convention() {
        let vc = VoxelCloud::new(1, vec![[1, 0, 0]]).unwrap();
        assert_eq!(build_octree(&vc).levels[0].occupancy, vec![1 << 4]);
    }

    #[test]
    fn detects_inconsistency() {
        let vc = VoxelCloud::new(3, vec![[0, 0, 0], [7, 7, 7]]).unwrap();
        let mut oct = build_octree(&vc);
        oct.levels[1].occupancy[0] = 0x03;
        assert!(matches!(flatten_octree(&oct), Err(Error::Integrity(_))));
        let mut oct = build_octree(&vc);
        oct.levels[2].occupancy[1] = 0;
        assert!(flatten_octree(&oct).is_err());
    }

    fn cloud_strategy() -> impl Strategy<Value = VoxelCloud> {
        (2u8..=8).prop_flat_map(|d| {
            let max = 1u32 << d;
            prop::collection::vec([0..max, 0..max, 0..max], 1..300)
                .prop_map(move |c| VoxelCloud::new(d, c).unwrap())
        })
    }

    proptest! {
        #[test]
        fn flatten_inverts_build(vc in cloud_strategy()) {
            let oct = build_octree(&vc);
            prop_assert_eq!(flatten_octree(&oct).unwrap(), vc.clone());
            let counts: Vec<usize> = oct.levels.iter().map(|l| l.len()).collect();
            prop_assert!(counts.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(counts.last().copied().unwrap() <= vc.len());
            prop_assert!(oct.levels.iter().all(|l| !l.occupancy.contains(&0)));
        }
    }
}
