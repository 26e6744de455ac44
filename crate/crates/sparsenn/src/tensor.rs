use std::collections::HashMap;
use std::sync::Arc;

use pcvox_core::pcgeom::morton;
use pcvox_core::{Error, Result, Scalar};

/// Morton-sorted, duplicate-free voxel coordinates with a row lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoordSet {
    coords: Vec<[u32; 3]>,
    rows: HashMap<[u32; 3], u32>,
}

impl CoordSet {
    /// Sorts and deduplicates `coords`.
    pub fn new(mut coords: Vec<[u32; 3]>) -> Self {
        coords.sort_unstable_by_key(|&c| morton::encode(c));
        coords.dedup();
        Self::from_sorted(coords)
    }

    /// `coords` must already be Morton-sorted and unique.
    pub fn from_sorted(coords: Vec<[u32; 3]>) -> Self {
        debug_assert!(coords.windows(2).all(|w| morton::encode(w[0]) < morton::encode(w[1])));
        let rows = coords.iter().enumerate().map(|(i, &c)| (c, i as u32)).collect();
        Self { coords, rows }
    }

    pub fn coords(&self) -> &[[u32; 3]] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn row(&self, c: [u32; 3]) -> Option<usize> {
        self.rows.get(&c).map(|&r| r as usize)
    }

    /// Row of `c + d`, if that coordinate is present.
    pub fn row_offset(&self, c: [u32; 3], d: [i32; 3]) -> Option<usize> {
        let mut n = [0u32; 3];
        for k in 0..3 {
            n[k] = c[k].checked_add_signed(d[k])?;
        }
        self.row(n)
    }

    /// Parent coordinates (`c >> 1`), Morton-sorted.
    pub fn parents(&self) -> CoordSet {
        let mut p: Vec<[u32; 3]> = self.coords.iter().map(|c| c.map(|v| v >> 1)).collect();
        p.dedup();
        CoordSet::from_sorted(p)
    }

    /// All eight children of every coordinate, Morton-sorted.
    pub fn children(&self) -> CoordSet {
        let c = self
            .coords
            .iter()
            .flat_map(|&p| (0..8u8).map(move |i| morton::child_of(p, i)))
            .collect();
        CoordSet::from_sorted(c)
    }
}

/// Feature rows attached to a coordinate set; row-major, `channels` wide.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor<T> {
    pub coords: Arc<CoordSet>,
    pub channels: usize,
    pub feats: Vec<T>,
}

impl<T: Scalar> SparseTensor<T> {
    pub fn new(coords: Arc<CoordSet>, channels: usize, feats: Vec<T>) -> Result<Self> {
        if feats.len() != coords.len() * channels {
            return Err(Error::contract(format!(
                "{} feature values for {} rows of {channels} channels",
                feats.len(),
                coords.len()
            )));
        }
        Ok(Self { coords, channels, feats })
    }

    pub fn filled(coords: Arc<CoordSet>, channels: usize, v: T) -> Self {
        let n = coords.len() * channels;
        Self { coords, channels, feats: vec![v; n] }
    }

    pub fn rows(&self) -> usize {
        self.coords.len()
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.feats[r * self.channels..(r + 1) * self.channels]
    }
}
