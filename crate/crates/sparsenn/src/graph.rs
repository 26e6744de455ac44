//! Tape-based reverse-mode differentiation over sparse feature matrices.
//!
//! Every value is a row-major `rows x cols` matrix, optionally tied to the
//! coordinate set its rows live on. Forward values are kept in `T`; gradients
//! are accumulated in `f64`.

use std::sync::Arc;

use pcvox_core::{Error, Result, Scalar};

use crate::kmap::KernelMap;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{CoordSet, SparseTensor};

/// Probability clamp applied inside [`Graph::bce_sum`].
pub const BCE_EPS: f64 = 1e-7;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StoreId(usize);

/// A parameter of a bound store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PRef {
    pub store: StoreId,
    pub id: ParamId,
}

impl StoreId {
    pub fn p(self, id: ParamId) -> PRef {
        PRef { store: self, id }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with the statistics of the current rows.
    Batch,
    /// Normalize with the stored running statistics.
    Running,
}

/// One convolution as seen by the FLOP counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvTrace {
    /// Activated input coordinates.
    pub n_a: usize,
    pub c_in: usize,
    pub c_out: usize,
}

/// Batch statistics observed by one batch-norm call.
#[derive(Debug, Clone)]
pub struct BnObservation {
    pub running_mean: PRef,
    pub running_var: PRef,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

enum Op {
    Leaf,
    Conv { x: Var, kmap: Arc<KernelMap>, w: PRef, b: Option<PRef> },
    BatchNorm { x: Var, gamma: PRef, beta: PRef, xhat: Vec<f64>, inv_std: Vec<f64>, batch: bool },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Concat(Var, Var),
    MaskUndecided { bits: Var, step: usize },
    Column { x: Var, j: usize },
    SteRound(Var),
    Reshape(Var),
    BceSum { p: Var, t: Var },
    Sum(Var),
    Scale(Var, f64),
}

struct Node<T> {
    rows: usize,
    cols: usize,
    value: Vec<T>,
    coords: Option<Arc<CoordSet>>,
    op: Op,
    requires_grad: bool,
}

struct Bound<'a, T> {
    store: &'a ParamStore<T>,
    frozen: bool,
    bn_mode: BnMode,
}

pub struct Graph<'a, T> {
    stores: Vec<Bound<'a, T>>,
    nodes: Vec<Node<T>>,
    bn_mode: BnMode,
    convs: Vec<ConvTrace>,
    bn_obs: Vec<BnObservation>,
}

/// Result of [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    params: Vec<Vec<Option<Vec<f64>>>>,
    nodes: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn param(&self, p: PRef) -> Option<&[f64]> {
        self.params[p.store.0][p.id.0 as usize].as_deref()
    }

    /// Per-parameter gradients of one store, indexed by [`ParamId`].
    pub fn for_store(&self, s: StoreId) -> &[Option<Vec<f64>>] {
        &self.params[s.0]
    }

    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].as_deref()
    }
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new(bn_mode: BnMode) -> Self {
        Self { stores: Vec::new(), nodes: Vec::new(), bn_mode, convs: Vec::new(), bn_obs: Vec::new() }
    }

    /// Makes a store's parameters trainable in this graph; its batch norms
    /// use the graph's default mode.
    pub fn bind(&mut self, store: &'a ParamStore<T>) -> StoreId {
        self.stores.push(Bound { store, frozen: false, bn_mode: self.bn_mode });
        StoreId(self.stores.len() - 1)
    }

    /// Binds a store whose parameters receive no gradient. Gradients still
    /// flow through its operations to upstream inputs.
    pub fn bind_frozen(&mut self, store: &'a ParamStore<T>, bn_mode: BnMode) -> StoreId {
        self.stores.push(Bound { store, frozen: true, bn_mode });
        StoreId(self.stores.len() - 1)
    }

    pub fn bn_mode(&self, s: StoreId) -> BnMode {
        self.stores[s.0].bn_mode
    }

    fn pdata(&self, p: PRef) -> &'a [T] {
        self.stores[p.store.0].store.data(p.id)
    }

    fn trainable(&self, p: PRef) -> bool {
        let b = &self.stores[p.store.0];
        !b.frozen && !b.store.get(p.id).buffer
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<T>, coords: Option<Arc<CoordSet>>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { rows, cols, value, coords, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<T>, coords: Option<Arc<CoordSet>>) -> Var {
        assert_eq!(value.len(), rows * cols, "constant shape");
        self.push(rows, cols, value, coords, Op::Leaf, false)
    }

    pub fn input(&mut self, st: &SparseTensor<T>) -> Var {
        self.push(st.rows(), st.channels, st.feats.clone(), Some(st.coords.clone()), Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input_with_grad(&mut self, st: &SparseTensor<T>) -> Var {
        self.push(st.rows(), st.channels, st.feats.clone(), Some(st.coords.clone()), Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        (self.nodes[v.0].rows, self.nodes[v.0].cols)
    }

    pub fn coords(&self, v: Var) -> Option<&Arc<CoordSet>> {
        self.nodes[v.0].coords.as_ref()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        assert_eq!(self.shape(v), (1, 1), "not a scalar");
        self.nodes[v.0].value[0].f64()
    }

    pub fn tensor(&self, v: Var) -> SparseTensor<T> {
        let n = &self.nodes[v.0];
        SparseTensor {
            coords: n.coords.clone().expect("value has no coordinates"),
            channels: n.cols,
            feats: n.value.clone(),
        }
    }

    pub fn conv_trace(&self) -> &[ConvTrace] {
        &self.convs
    }

    pub fn bn_observations(&self) -> &[BnObservation] {
        &self.bn_obs
    }

    /// Side of the kink for every ReLU input and STE input, in node order.
    /// The loss is smooth along any path on which this does not change.
    pub fn kink_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for n in &self.nodes {
            let (x, at) = match n.op {
                Op::Relu(x) => (x, 0.0),
                Op::SteRound(x) => (x, 0.5),
                _ => continue,
            };
            sig.extend(self.nodes[x.0].value.iter().map(|v| v.f64() > at));
        }
        sig
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Sparse convolution; `w` has shape `[kernel volume, c_in, c_out]`.
    pub fn conv(&mut self, x: Var, kmap: &Arc<KernelMap>, w: PRef, b: Option<PRef>) -> Var {
        let (rows, cin) = self.shape(x);
        assert_eq!(rows, kmap.input.len(), "conv input rows do not match the kernel map");
        let wd = self.pdata(w);
        let kvol = kmap.kernel_volume();
        assert_eq!(wd.len() % (kvol * cin), 0, "conv weight does not match c_in {cin}");
        let cout = wd.len() / (kvol * cin);
        let n_out = kmap.output.len();
        let mut out = vec![T::zero(); n_out * cout];
        if let Some(b) = b {
            let bd = self.pdata(b);
            assert_eq!(bd.len(), cout, "bias width");
            for row in out.chunks_exact_mut(cout) {
                row.copy_from_slice(bd);
            }
        }
        let xv = &self.nodes[x.0].value;
        for (k, pairs) in kmap.pairs.iter().enumerate() {
            let wk = &wd[k * cin * cout..(k + 1) * cin * cout];
            for &(i, o) in pairs {
                let xi = &xv[i as usize * cin..(i as usize + 1) * cin];
                let oo = &mut out[o as usize * cout..(o as usize + 1) * cout];
                for (ci, &a) in xi.iter().enumerate() {
                    if a == T::zero() {
                        continue;
                    }
                    let wr = &wk[ci * cout..(ci + 1) * cout];
                    for (acc, &wv) in oo.iter_mut().zip(wr) {
                        *acc += a * wv;
                    }
                }
            }
        }
        self.convs.push(ConvTrace { n_a: rows, c_in: cin, c_out: cout });
        let rg = self.rg(x) || self.trainable(w) || b.is_some_and(|b| self.trainable(b));
        self.push(n_out, cout, out, Some(kmap.output.clone()), Op::Conv { x, kmap: kmap.clone(), w, b }, rg)
    }

    /// Per-channel normalization over all rows, then `gamma * xhat + beta`.
    pub fn batch_norm(&mut self, x: Var, gamma: PRef, beta: PRef, running_mean: PRef, running_var: PRef) -> Var {
        let (rows, c) = self.shape(x);
        let xv = &self.nodes[x.0].value;
        let batch = self.stores[gamma.store.0].bn_mode == BnMode::Batch;
        let (mean, var) = if batch {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for row in xv.chunks_exact(c) {
                for (m, &v) in mean.iter_mut().zip(row) {
                    *m += v.f64();
                }
            }
            mean.iter_mut().for_each(|m| *m /= rows.max(1) as f64);
            for row in xv.chunks_exact(c) {
                for ((s, &v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v.f64() - m).powi(2);
                }
            }
            var.iter_mut().for_each(|s| *s /= rows.max(1) as f64);
            (mean, var)
        } else {
            let m = self.pdata(running_mean).iter().map(|v| v.f64()).collect();
            let v = self.pdata(running_var).iter().map(|v| v.f64()).collect();
            (m, v)
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let g = self.pdata(gamma);
        let bt = self.pdata(beta);
        let mut xhat = vec![0.0; rows * c];
        let mut out = vec![T::zero(); rows * c];
        for r in 0..rows {
            for k in 0..c {
                let h = (xv[r * c + k].f64() - mean[k]) * inv_std[k];
                xhat[r * c + k] = h;
                out[r * c + k] = T::of(g[k].f64() * h + bt[k].f64());
            }
        }
        if batch {
            self.bn_obs.push(BnObservation { running_mean, running_var, mean, var });
        }
        let rg = self.rg(x) || self.trainable(gamma) || self.trainable(beta);
        let coords = self.nodes[x.0].coords.clone();
        self.push(rows, c, out, coords, Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch }, rg)
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op) -> Var {
        let n = &self.nodes[x.0];
        let (rows, cols, coords, rg) = (n.rows, n.cols, n.coords.clone(), n.requires_grad);
        let out = n.value.iter().map(|&v| f(v)).collect();
        self.push(rows, cols, out, coords, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| T::one() / (T::one() + (-v).exp()), Op::Sigmoid(x))
    }

    /// Forward `1` iff `p >= 0.5`; backward passes gradients unchanged.
    pub fn ste_round(&mut self, p: Var) -> Var {
        let half = T::of(0.5);
        self.unary(p, |v| if v >= half { T::one() } else { T::zero() }, Op::SteRound(p))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let cc = T::of(c);
        self.unary(x, |v| v * cc, Op::Scale(x, c))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let out = self.nodes[a.0].value.iter().zip(&self.nodes[b.0].value).map(|(&x, &y)| x + y).collect();
        let (rows, cols) = self.shape(a);
        let coords = self.nodes[a.0].coords.clone();
        let rg = self.rg(a) || self.rg(b);
        self.push(rows, cols, out, coords, Op::Add(a, b), rg)
    }

    /// Channel-wise concatenation.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        assert_eq!(ra, rb, "concat row mismatch");
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            out.extend_from_slice(&self.nodes[a.0].value[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&self.nodes[b.0].value[r * cb..(r + 1) * cb]);
        }
        let coords = self.nodes[a.0].coords.clone();
        let rg = self.rg(a) || self.rg(b);
        self.push(ra, ca + cb, out, coords, Op::Concat(a, b), rg)
    }

    /// Keeps channels `< step` of an `n x 8` bit matrix and sets the rest
    /// to `-1` (undecided).
    pub fn mask_undecided(&mut self, bits: Var, step: usize) -> Var {
        let (rows, cols) = self.shape(bits);
        let out = self.nodes[bits.0]
            .value
            .iter()
            .enumerate()
            .map(|(i, &v)| if i % cols < step { v } else { -T::one() })
            .collect();
        let coords = self.nodes[bits.0].coords.clone();
        let rg = self.rg(bits) && step > 0;
        self.push(rows, cols, out, coords, Op::MaskUndecided { bits, step }, rg)
    }

    pub fn column(&mut self, x: Var, j: usize) -> Var {
        let (rows, cols) = self.shape(x);
        assert!(j < cols);
        let out = (0..rows).map(|r| self.nodes[x.0].value[r * cols + j]).collect();
        let coords = self.nodes[x.0].coords.clone();
        let rg = self.rg(x);
        self.push(rows, 1, out, coords, Op::Column { x, j }, rg)
    }

    /// Reinterprets the row-major data with a new shape and row coordinates.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize, coords: Option<Arc<CoordSet>>) -> Var {
        assert_eq!(rows * cols, self.nodes[x.0].value.len(), "reshape size");
        if let Some(c) = &coords {
            assert_eq!(c.len(), rows, "reshape coordinates");
        }
        let out = self.nodes[x.0].value.clone();
        let rg = self.rg(x);
        self.push(rows, cols, out, coords, Op::Reshape(x), rg)
    }

    /// `sum(-t ln p - (1 - t) ln(1 - p))` with `p` clamped to
    /// `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn bce_sum(&mut self, p: Var, t: Var) -> Var {
        assert_eq!(self.shape(p), self.shape(t), "bce shape mismatch");
        let total: f64 = self.nodes[p.0]
            .value
            .iter()
            .zip(&self.nodes[t.0].value)
            .map(|(&p, &t)| bce(t.f64(), p.f64()))
            .sum();
        let rg = self.rg(p) || self.rg(t);
        self.push(1, 1, vec![T::of(total)], None, Op::BceSum { p, t }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.nodes[x.0].value.iter().map(|v| v.f64()).sum();
        let rg = self.rg(x);
        self.push(1, 1, vec![T::of(total)], None, Op::Sum(x), rg)
    }

    /// Reverse pass from a `1 x 1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        assert_eq!(self.shape(loss), (1, 1), "loss must be a scalar");
        let lv = self.scalar(loss);
        if !lv.is_finite() {
            return Err(Error::Numerical(format!("loss is {lv}")));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut pgrads: Vec<Vec<Option<Vec<f64>>>> = self.stores.iter().map(|b| vec![None; b.store.len()]).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Conv { x, kmap, w, b } => {
                    let xn = &self.nodes[x.0];
                    let cin = xn.cols;
                    let cout = node.cols;
                    let wd: Vec<f64> = self.pdata(*w).iter().map(|v| v.f64()).collect();
                    let need_x = self.rg(*x);
                    let need_w = self.trainable(*w);
                    let mut gx = need_x.then(|| vec![0.0; xn.rows * cin]);
                    let mut gw = need_w.then(|| vec![0.0; wd.len()]);
                    for (k, pairs) in kmap.pairs.iter().enumerate() {
                        let wk = &wd[k * cin * cout..(k + 1) * cin * cout];
                        for &(i, o) in pairs {
                            let (i, o) = (i as usize, o as usize);
                            let go = &g[o * cout..(o + 1) * cout];
                            if let Some(gx) = gx.as_mut() {
                                let gxi = &mut gx[i * cin..(i + 1) * cin];
                                for (ci, acc) in gxi.iter_mut().enumerate() {
                                    let wr = &wk[ci * cout..(ci + 1) * cout];
                                    *acc += wr.iter().zip(go).map(|(a, b)| a * b).sum::<f64>();
                                }
                            }
                            if let Some(gw) = gw.as_mut() {
                                let gwk = &mut gw[k * cin * cout..(k + 1) * cin * cout];
                                for ci in 0..cin {
                                    let a = xn.value[i * cin + ci].f64();
                                    if a == 0.0 {
                                        continue;
                                    }
                                    for (acc, &gv) in gwk[ci * cout..(ci + 1) * cout].iter_mut().zip(go) {
                                        *acc += a * gv;
                                    }
                                }
                            }
                        }
                    }
                    if let Some(gw) = gw {
                        accumulate(&mut pgrads, *w, gw);
                    }
                    if let Some(b) = b.filter(|b| self.trainable(*b)) {
                        let mut gb = vec![0.0; cout];
                        for row in g.chunks_exact(cout) {
                            for (acc, v) in gb.iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                        accumulate(&mut pgrads, b, gb);
                    }
                    if let Some(gx) = gx {
                        add_into(&mut grads[x.0], gx);
                    }
                }
                Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch } => {
                    let (rows, c) = (node.rows, node.cols);
                    let gm: Vec<f64> = self.pdata(*gamma).iter().map(|v| v.f64()).collect();
                    let mut sum_g = vec![0.0; c];
                    let mut sum_gx = vec![0.0; c];
                    for r in 0..rows {
                        for k in 0..c {
                            sum_g[k] += g[r * c + k];
                            sum_gx[k] += g[r * c + k] * xhat[r * c + k];
                        }
                    }
                    if self.trainable(*gamma) {
                        accumulate(&mut pgrads, *gamma, sum_gx.clone());
                    }
                    if self.trainable(*beta) {
                        accumulate(&mut pgrads, *beta, sum_g.clone());
                    }
                    if self.rg(*x) {
                        let n = rows as f64;
                        let mut gx = vec![0.0; rows * c];
                        for r in 0..rows {
                            for k in 0..c {
                                let i = r * c + k;
                                gx[i] = if *batch {
                                    gm[k] * inv_std[k] / n * (n * g[i] - sum_g[k] - xhat[i] * sum_gx[k])
                                } else {
                                    gm[k] * inv_std[k] * g[i]
                                };
                            }
                        }
                        add_into(&mut grads[x.0], gx);
                    }
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[x.0].value;
                    let gx = g.iter().zip(xv).map(|(&g, &v)| if v > T::zero() { g } else { 0.0 }).collect();
                    add_into(&mut grads[x.0], gx);
                }
                Op::Sigmoid(x) => {
                    let gx = g.iter().zip(&node.value).map(|(&g, &s)| g * s.f64() * (1.0 - s.f64())).collect();
                    add_into(&mut grads[x.0], gx);
                }
                Op::SteRound(x) | Op::Reshape(x) => add_into(&mut grads[x.0], g),
                Op::Scale(x, c) => add_into(&mut grads[x.0], g.iter().map(|v| v * c).collect()),
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        add_into(&mut grads[a.0], g.clone());
                    }
                    if self.rg(*b) {
                        add_into(&mut grads[b.0], g);
                    }
                }
                Op::Concat(a, b) => {
                    let ca = self.nodes[a.0].cols;
                    let cb = self.nodes[b.0].cols;
                    if self.rg(*a) {
                        let ga = g.chunks_exact(ca + cb).flat_map(|r| r[..ca].iter().copied()).collect();
                        add_into(&mut grads[a.0], ga);
                    }
                    if self.rg(*b) {
                        let gb = g.chunks_exact(ca + cb).flat_map(|r| r[ca..].iter().copied()).collect();
                        add_into(&mut grads[b.0], gb);
                    }
                }
                Op::MaskUndecided { bits, step } => {
                    let cols = node.cols;
                    let gx = g.iter().enumerate().map(|(i, &v)| if i % cols < *step { v } else { 0.0 }).collect();
                    add_into(&mut grads[bits.0], gx);
                }
                Op::Column { x, j } => {
                    let cols = self.nodes[x.0].cols;
                    let mut gx = vec![0.0; self.nodes[x.0].value.len()];
                    for (r, &v) in g.iter().enumerate() {
                        gx[r * cols + j] = v;
                    }
                    add_into(&mut grads[x.0], gx);
                }
                Op::BceSum { p, t } => {
                    let up = g[0];
                    let pv = &self.nodes[p.0].value;
                    let tv = &self.nodes[t.0].value;
                    if self.rg(*p) {
                        let gp = pv
                            .iter()
                            .zip(tv)
                            .map(|(&p, &t)| {
                                let (p, t) = (p.f64(), t.f64());
                                if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
                                    0.0
                                } else {
                                    up * (-t / p + (1.0 - t) / (1.0 - p))
                                }
                            })
                            .collect();
                        add_into(&mut grads[p.0], gp);
                    }
                    if self.rg(*t) {
                        let gt = pv
                            .iter()
                            .map(|&p| {
                                let p = p.f64().clamp(BCE_EPS, 1.0 - BCE_EPS);
                                up * ((1.0 - p).ln() - p.ln())
                            })
                            .collect();
                        add_into(&mut grads[t.0], gt);
                    }
                }
                Op::Sum(x) => {
                    let n = self.nodes[x.0].value.len();
                    add_into(&mut grads[x.0], vec![g[0]; n]);
                }
            }
        }

        for (s, store_grads) in pgrads.iter().enumerate() {
            for (i, g) in store_grads.iter().enumerate() {
                if let Some(g) = g {
                    if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
                        let name = &self.stores[s].store.get(ParamId(i as u32)).name;
                        return Err(Error::Numerical(format!(
                            "non-finite gradient {} in parameter {name}[{bad}]",
                            g[bad]
                        )));
                    }
                }
            }
        }
        // Only leaves keep their gradient.
        for (i, n) in self.nodes.iter().enumerate() {
            if !matches!(n.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        Ok(Gradients { params: pgrads, nodes: grads })
    }
}

/// Binary cross-entropy in nats with the probability clamped.
pub fn bce(t: f64, p: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -t * p.ln() - (1.0 - t) * (1.0 - p).ln()
}

fn add_into(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

fn accumulate(pgrads: &mut [Vec<Option<Vec<f64>>>], p: PRef, g: Vec<f64>) {
    add_into(&mut pgrads[p.store.0][p.id.0 as usize], g);
}

/// Adds `src` into `dst` parameter by parameter (fixed order batch reduction).
pub fn sum_gradients(dst: &mut Vec<Option<Vec<f64>>>, src: &[Option<Vec<f64>>]) {
    if dst.len() < src.len() {
        dst.resize(src.len(), None);
    }
    for (d, s) in dst.iter_mut().zip(src) {
        if let Some(s) = s {
            add_into(d, s.clone());
        }
    }
}

/// Folds batch statistics into the running buffers of `store`:
/// `running = (1 - momentum) * running + momentum * batch`.
pub fn commit_bn_stats<T: Scalar>(store: &mut ParamStore<T>, sid: StoreId, obs: &[BnObservation], momentum: f64) {
    for o in obs.iter().filter(|o| o.running_mean.store == sid) {
        for (id, stats) in [(o.running_mean.id, &o.mean), (o.running_var.id, &o.var)] {
            for (r, &s) in store.data_mut(id).iter_mut().zip(stats.iter()) {
                *r = T::of((1.0 - momentum) * r.f64() + momentum * s);
            }
        }
    }
}
