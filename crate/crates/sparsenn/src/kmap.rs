//! Input/output row pairings for sparse convolutions.

use std::sync::Arc;

use crate::tensor::CoordSet;

/// Which kind of convolution a map realizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapKind {
    /// Stride 1, output coordinates equal input coordinates.
    Submanifold { k: usize },
    /// `K = 2`, stride 2: children gathered into their parent.
    Downsample,
    /// Transposed `K = 2`, stride 2: every parent emits its eight children.
    Upsample,
}

/// For each kernel offset, the `(input row, output row)` pairs it connects.
#[derive(Debug, Clone)]
pub struct KernelMap {
    pub kind: MapKind,
    pub input: Arc<CoordSet>,
    pub output: Arc<CoordSet>,
    pub pairs: Vec<Vec<(u32, u32)>>,
}

impl KernelMap {
    pub fn kernel_volume(&self) -> usize {
        self.pairs.len()
    }

    /// Stride-1 map with a `k`-wide cube (`k` odd), offsets in `x`-major order.
    pub fn submanifold(coords: &Arc<CoordSet>, k: usize) -> Self {
        assert!(k % 2 == 1, "submanifold kernels must have odd width");
        let r = (k / 2) as i32;
        let mut offsets = Vec::new();
        for dx in -r..=r {
            for dy in -r..=r {
                for dz in -r..=r {
                    offsets.push([dx, dy, dz]);
                }
            }
        }
        let pairs = offsets
            .iter()
            .map(|&d| {
                coords
                    .coords()
                    .iter()
                    .enumerate()
                    .filter_map(|(o, &c)| coords.row_offset(c, d).map(|i| (i as u32, o as u32)))
                    .collect()
            })
            .collect();
        Self { kind: MapKind::Submanifold { k }, input: coords.clone(), output: coords.clone(), pairs }
    }

    /// Offset `i` connects each child with child index `i` to its parent.
    pub fn downsample(coords: &Arc<CoordSet>) -> Self {
        let output = Arc::new(coords.parents());
        let mut pairs = vec![Vec::new(); 8];
        for (i, &c) in coords.coords().iter().enumerate() {
            let idx = pcvox_core::pcgeom::morton::child_index(c) as usize;
            let o = output.row(c.map(|v| v >> 1)).expect("parent present");
            pairs[idx].push((i as u32, o as u32));
        }
        Self { kind: MapKind::Downsample, input: coords.clone(), output, pairs }
    }

    /// Parent row `p` feeds output row `8p + i` through offset `i`.
    pub fn upsample(coords: &Arc<CoordSet>) -> Self {
        let output = Arc::new(coords.children());
        let pairs = (0..8u32)
            .map(|i| (0..coords.len() as u32).map(|p| (p, 8 * p + i)).collect())
            .collect();
        Self { kind: MapKind::Upsample, input: coords.clone(), output, pairs }
    }
}
