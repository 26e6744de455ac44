//! Reusable layers: plain convolutions, batch norm, `SConvBlock` and
//! `SInceptionResNet`.

use std::sync::Arc;

use pcvox_core::Scalar;
use rand::Rng;

use crate::graph::{Graph, StoreId, Var};
use crate::kmap::KernelMap;
use crate::params::{ParamId, ParamStore};
use crate::tensor::CoordSet;

/// The `1 x 1 x 1` and `3 x 3 x 3` stride-1 maps of one coordinate set.
#[derive(Debug, Clone)]
pub struct Maps {
    pub k1: Arc<KernelMap>,
    pub k3: Arc<KernelMap>,
}

impl Maps {
    pub fn new(coords: &Arc<CoordSet>) -> Self {
        Self {
            k1: Arc::new(KernelMap::submanifold(coords, 1)),
            k3: Arc::new(KernelMap::submanifold(coords, 3)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub kvol: usize,
    pub c_in: usize,
    pub c_out: usize,
}

impl Conv {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        kvol: usize,
        c_in: usize,
        c_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = store.add_he_uniform(format!("{name}.w"), &[kvol, c_in, c_out], kvol * c_in, rng);
        let b = bias.then(|| store.add(format!("{name}.b"), &[c_out], vec![T::zero(); c_out], false));
        Self { w, b, kvol, c_in, c_out }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, s: StoreId, x: Var, kmap: &Arc<KernelMap>) -> Var {
        debug_assert_eq!(kmap.kernel_volume(), self.kvol);
        g.conv(x, kmap, s.p(self.w), self.b.map(|b| s.p(b)))
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, c: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), &[c], vec![T::one(); c], false),
            beta: store.add(format!("{name}.beta"), &[c], vec![T::zero(); c], false),
            running_mean: store.add(format!("{name}.running_mean"), &[c], vec![T::zero(); c], true),
            running_var: store.add(format!("{name}.running_var"), &[c], vec![T::one(); c], true),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, s: StoreId, x: Var) -> Var {
        g.batch_norm(x, s.p(self.gamma), s.p(self.beta), s.p(self.running_mean), s.p(self.running_var))
    }
}

/// Convolution, batch norm, ReLU.
#[derive(Debug, Clone)]
pub struct SConvBlock {
    pub conv: Conv,
    pub bn: BatchNorm,
}

impl SConvBlock {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, kvol: usize, c_in: usize, c_out: usize, rng: &mut R) -> Self {
        Self {
            conv: Conv::new(store, &format!("{name}.conv"), kvol, c_in, c_out, false, rng),
            bn: BatchNorm::new(store, &format!("{name}.bn"), c_out),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, s: StoreId, x: Var, kmap: &Arc<KernelMap>) -> Var {
        let y = self.conv.forward(g, s, x, kmap);
        let y = self.bn.forward(g, s, y);
        g.relu(y)
    }
}

/// Two parallel branches (one and two `K = 3` blocks, `C/2` channels each),
/// concatenated, fused by a `1 x 1 x 1` convolution and added to the input.
#[derive(Debug, Clone)]
pub struct SInceptionResNet {
    pub branch_a: SConvBlock,
    pub branch_b1: SConvBlock,
    pub branch_b2: SConvBlock,
    pub fuse: Conv,
}

impl SInceptionResNet {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, c: usize, rng: &mut R) -> Self {
        assert!(c >= 2 && c % 2 == 0, "SInceptionResNet needs an even channel count");
        let h = c / 2;
        Self {
            branch_a: SConvBlock::new(store, &format!("{name}.a"), 27, c, h, rng),
            branch_b1: SConvBlock::new(store, &format!("{name}.b1"), 27, c, h, rng),
            branch_b2: SConvBlock::new(store, &format!("{name}.b2"), 27, h, h, rng),
            fuse: Conv::new(store, &format!("{name}.fuse"), 1, c, c, true, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, s: StoreId, x: Var, maps: &Maps) -> Var {
        let a = self.branch_a.forward(g, s, x, &maps.k3);
        let b = self.branch_b1.forward(g, s, x, &maps.k3);
        let b = self.branch_b2.forward(g, s, b, &maps.k3);
        let cat = g.concat(a, b);
        let f = self.fuse.forward(g, s, cat, &maps.k1);
        let r = g.add(x, f);
        g.relu(r)
    }
}
