//! Central finite-difference checks of every differentiable operation.
//!
//! Each check builds a small random `f64` graph, reads analytic gradients for
//! all inputs and trainable parameters, and compares them with
//! `(L(x + h) - L(x - h)) / 2h`. The error of an instance is
//! `|analytic - numeric| / max(|analytic|, |numeric|)` over the whole
//! gradient vector. Instances where a perturbation moves any ReLU input
//! across its kink are redrawn, since the difference quotient then measures
//! a different linear piece. Graphs containing batch norm use at least 16 rows:
//! with fewer, the curvature of the normalization makes the `O(h^2)`
//! truncation error of the difference quotient exceed the tolerance.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{BatchNorm, Conv, Maps, SConvBlock, SInceptionResNet};
use crate::graph::{BnMode, Graph, StoreId, Var};
use crate::kmap::KernelMap;
use crate::params::ParamStore;
use crate::tensor::{CoordSet, SparseTensor};

pub const FD_STEP: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-4;

/// Outcome of one operation's check.
#[derive(Debug, Clone)]
pub struct OpCheck {
    pub op: &'static str,
    pub instances: usize,
    pub worst_rel_err: f64,
}

impl OpCheck {
    pub fn passed(&self, min_instances: usize) -> bool {
        self.instances >= min_instances && self.worst_rel_err < REL_TOL
    }
}

type Build<'b> = dyn for<'g> Fn(&mut Graph<'g, f64>, StoreId, &[Var]) -> Var + 'b;

fn loss_of(inputs: &[SparseTensor<f64>], store: &ParamStore<f64>, mode: BnMode, build: &Build<'_>) -> (f64, Vec<bool>) {
    let mut g = Graph::new(mode);
    let sid = g.bind(store);
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t)).collect();
    let loss = build(&mut g, sid, &vars);
    (g.scalar(loss), g.kink_signature())
}

/// Relative gradient error of one instance, or `None` when the instance sits
/// too close to a non-differentiable point.
pub fn check_instance(
    inputs: &[SparseTensor<f64>],
    store: &ParamStore<f64>,
    mode: BnMode,
    build: &Build<'_>,
) -> Option<f64> {
    check_instance_with_step(inputs, store, mode, build, FD_STEP)
}

fn check_instance_with_step(
    inputs: &[SparseTensor<f64>],
    store: &ParamStore<f64>,
    mode: BnMode,
    build: &Build<'_>,
    h: f64,
) -> Option<f64> {
    let mut g = Graph::new(mode);
    let sid = g.bind(store);
    let vars: Vec<Var> = inputs.iter().map(|t| g.input_with_grad(t)).collect();
    let loss = build(&mut g, sid, &vars);
    let sig = g.kink_signature();
    let grads = g.backward(loss).expect("finite gradients");

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (i, (t, v)) in inputs.iter().zip(&vars).enumerate() {
        let a = grads.wrt(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.feats.len()]);
        for k in 0..t.feats.len() {
            let mut plus = inputs.to_vec();
            plus[i].feats[k] += h;
            let mut minus = inputs.to_vec();
            minus[i].feats[k] -= h;
            let n = difference(loss_of(&plus, store, mode, build), loss_of(&minus, store, mode, build), &sig, h)?;
            analytic.push(a[k]);
            numeric.push(n);
        }
    }
    for (id, p) in store.iter() {
        if p.buffer {
            continue;
        }
        let a = grads.param(sid.p(id)).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.data.len()]);
        for k in 0..p.data.len() {
            let mut plus = store.clone();
            plus.data_mut(id)[k] += h;
            let mut minus = store.clone();
            minus.data_mut(id)[k] -= h;
            let n = difference(loss_of(inputs, &plus, mode, build), loss_of(inputs, &minus, mode, build), &sig, h)?;
            analytic.push(a[k]);
            numeric.push(n);
        }
    }
    Some(rel_err(&analytic, &numeric))
}

fn difference(plus: (f64, Vec<bool>), minus: (f64, Vec<bool>), sig: &[bool], h: f64) -> Option<f64> {
    (plus.1 == sig && minus.1 == sig).then(|| (plus.0 - minus.0) / (2.0 * h))
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        return 0.0;
    }
    norm(&diff) / scale
}

fn random_coords(rng: &mut ChaCha8Rng, extent: u32, max: usize) -> Arc<CoordSet> {
    random_coords_min(rng, extent, 3, max)
}

fn random_coords_min(rng: &mut ChaCha8Rng, extent: u32, min: usize, max: usize) -> Arc<CoordSet> {
    loop {
        let n = rng.random_range(min..=max);
        let c = (0..n).map(|_| [0; 3].map(|_: u8| rng.random_range(0..extent))).collect();
        let set = CoordSet::new(c);
        if set.len() >= min {
            return Arc::new(set);
        }
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, coords: &Arc<CoordSet>, c: usize, lo: f64, hi: f64) -> SparseTensor<f64> {
    let feats = (0..coords.len() * c).map(|_| rng.random_range(lo..hi)).collect();
    SparseTensor::new(coords.clone(), c, feats).unwrap()
}

/// Random-target BCE on a learned one-channel projection of `x`, so that
/// every element of `x` influences the loss.
struct Probe {
    conv: Conv,
    targets: Vec<f64>,
}

impl Probe {
    fn new(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng, c: usize, rows: usize) -> Self {
        let conv = Conv::new(store, "probe", 1, c, 1, true, rng);
        let targets = (0..rows).map(|_| rng.random_range(0.0..1.0)).collect();
        Self { conv, targets }
    }

    fn loss(&self, g: &mut Graph<'_, f64>, s: StoreId, x: Var) -> Var {
        let coords = g.coords(x).expect("probe input has coordinates").clone();
        let k1 = Arc::new(KernelMap::submanifold(&coords, 1));
        let z = self.conv.forward(g, s, x, &k1);
        let p = g.sigmoid(z);
        let t = g.constant(self.targets.len(), 1, self.targets.clone(), Some(coords));
        g.bce_sum(p, t)
    }
}

struct Instance {
    inputs: Vec<SparseTensor<f64>>,
    store: ParamStore<f64>,
    mode: BnMode,
    build: Box<Build<'static>>,
}

fn make_instance(op: &str, rng: &mut ChaCha8Rng) -> Instance {
    let mut store = ParamStore::new();
    let cin = rng.random_range(1..=3);
    let cout = rng.random_range(1..=3);
    match op {
        "conv_k3" => {
            let coords = random_coords(rng, 4, 10);
            let x = random_tensor(rng, &coords, cin, -1.0, 1.0);
            let conv = Conv::new(&mut store, "c", 27, cin, cout, true, rng);
            let probe = Probe::new(&mut store, rng, cout, coords.len());
            let k3 = Arc::new(KernelMap::submanifold(&coords, 3));
            Instance {
                inputs: vec![x],
                store,
                mode: BnMode::Batch,
                build: Box::new(move |g, s, v| {
                    let y = conv.forward(g, s, v[0], &k3);
                    probe.loss(g, s, y)
                }),
            }
        }
        "conv_downsample" | "conv_transposed" => {
            let coords = random_coords(rng, 6, 12);
            let x = random_tensor(rng, &coords, cin, -1.0, 1.0);
            let conv = Conv::new(&mut store, "c", 8, cin, cout, true, rng);
            let map = Arc::new(if op == "conv_downsample" {
                KernelMap::downsample(&coords)
            } else {
                KernelMap::upsample(&coords)
            });
            let probe = Probe::new(&mut store, rng, cout, map.output.len());
            Instance {
                inputs: vec![x],
                store,
                mode: BnMode::Batch,
                build: Box::new(move |g, s, v| {
                    let y = conv.forward(g, s, v[0], &map);
                    probe.loss(g, s, y)
                }),
            }
        }
        "batch_norm_batch" | "batch_norm_running" => {
            let coords = random_coords_min(rng, 5, 16, 40);
            let x = random_tensor(rng, &coords, cin, -2.0, 2.0);
            let bn = BatchNorm::new(&mut store, "bn", cin);
            for id in [bn.gamma, bn.beta, bn.running_mean] {
                store.data_mut(id).iter_mut().for_each(|v| *v = rng.random_range(-1.5..1.5));
            }
            store.data_mut(bn.running_var).iter_mut().for_each(|v| *v = rng.random_range(0.2..2.0));
            let probe = Probe::new(&mut store, rng, cin, coords.len());
            let mode = if op == "batch_norm_batch" { BnMode::Batch } else { BnMode::Running };
            Instance {
                inputs: vec![x],
                store,
                mode,
                build: Box::new(move |g, s, v| {
                    let y = bn.forward(g, s, v[0]);
                    probe.loss(g, s, y)
                }),
            }
        }
        "relu" | "sigmoid" | "scale_sum" => {
            let coords = random_coords(rng, 4, 10);
            let x = random_tensor(rng, &coords, cin, -2.0, 2.0);
            let probe = Probe::new(&mut store, rng, cin, coords.len());
            let c = rng.random_range(-2.0..2.0);
            let op = op.to_string();
            Instance {
                inputs: vec![x],
                store,
                mode: BnMode::Batch,
                build: Box::new(move |g, s, v| match op.as_str() {
                    "relu" => {
                        let y = g.relu(v[0]);
                        probe.loss(g, s, y)
                    }
                    "sigmoid" => {
                        let y = g.sigmoid(v[0]);
                        probe.loss(g, s, y)
                    }
                    _ => {
                        let y = g.sigmoid(v[0]);
                        let y = g.sum(y);
                        let l = probe.loss(g, s, v[0]);
                        let y = g.scale(y, c);
                        g.add(y, l)
                    }
                }),
            }
        }
        "add" | "concat" => {
            let coords = random_coords(rng, 4, 10);
            let a = random_tensor(rng, &coords, cin, -1.0, 1.0);
            let cb = if op == "add" { cin } else { cout };
            let b = random_tensor(rng, &coords, cb, -1.0, 1.0);
            let probe = Probe::new(&mut store, rng, cin + if op == "add" { 0 } else { cb }, coords.len());
            let is_add = op == "add";
            Instance {
                inputs: vec![a, b],
                store,
                mode: BnMode::Batch,
                build: Box::new(move |g, s, v| {
                    let y = if is_add { g.add(v[0], v[1]) } else { g.concat(v[0], v[1]) };
                    probe.loss(g, s, y)
                }),
            }
        }
        "mask_undecided" | "column" | "reshape" => {
            let coords = random_coords(rng, 4, 8);
            let x = random_tensor(rng, &coords, 8, -1.0, 1.0);
            let step = rng.random_range(1..=8);
            let j = rng.random_range(0..8);
            let children = Arc::new(coords.children());
            let out_c = match op {
                "mask_undecided" => 8,
                _ => 1,
            };
            let rows = if op == "reshape" { children.len() } else { coords.len() };
            let probe = Probe::new(&mut store, rng, out_c, rows);
            let op = op.to_string();
            Instance {
                inputs: vec![x],
                store,
                mode: BnMode::Batch,
                build: Box::new(move |g, s, v| {
                    let y = match op.as_str() {
                        "mask_undecided" => g.mask_undecided(v[0], step),
                        "column" => g.column(v[0], j),
                        _ => g.reshape(v[0], children.len(), 1, Some(children.clone())),
                    };
                    probe.loss(g, s, y)
                }),
            }
        }
        "bce" => {
            let coords = random_coords(rng, 4, 10);
            let p = random_tensor(rng, &coords, cin, 0.05, 0.95);
            let t = random_tensor(rng, &coords, cin, 0.0, 1.0);
            Instance {
                inputs: vec![p, t],
                store,
                mode: BnMode::Batch,
                build: Box::new(|g, _, v| g.bce_sum(v[0], v[1])),
            }
        }
        "sconv_inception_net" => {
            let coords = random_coords_min(rng, 5, 16, 40);
            let maps = Maps::new(&coords);
            let x = random_tensor(rng, &coords, cin, -1.0, 1.0);
            let block = SConvBlock::new(&mut store, "block", 27, cin, 4, rng);
            let inc = SInceptionResNet::new(&mut store, "inc", 4, rng);
            let probe = Probe::new(&mut store, rng, 4, coords.len());
            Instance {
                inputs: vec![x],
                store,
                mode: BnMode::Batch,
                build: Box::new(move |g, s, v| {
                    let y = block.forward(g, s, v[0], &maps.k3);
                    let y = inc.forward(g, s, y, &maps);
                    probe.loss(g, s, y)
                }),
            }
        }
        other => panic!("no gradient check for {other}"),
    }
}

/// Every operation covered by [`check_all_ops`].
pub const CHECKED_OPS: &[&str] = &[
    "conv_k3",
    "conv_downsample",
    "conv_transposed",
    "batch_norm_batch",
    "batch_norm_running",
    "relu",
    "sigmoid",
    "scale_sum",
    "add",
    "concat",
    "mask_undecided",
    "column",
    "reshape",
    "bce",
    "sconv_inception_net",
];

/// Runs `instances` valid random instances of one operation.
pub fn check_op(op: &'static str, instances: usize, seed: u64) -> OpCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut done = 0;
    let mut worst: f64 = 0.0;
    let mut attempts = 0;
    // ln p has third derivative 2/p^3, so at p = 0.05 the default step leaves
    // a truncation error of about h^2 / 3p^2 = 1.3e-4 relative.
    let step = if op == "bce" { 1e-4 } else { FD_STEP };
    while done < instances && attempts < instances * 50 {
        attempts += 1;
        let inst = make_instance(op, &mut rng);
        if let Some(e) = check_instance_with_step(&inst.inputs, &inst.store, inst.mode, &*inst.build, step) {
            worst = worst.max(e);
            done += 1;
        }
    }
    OpCheck { op, instances: done, worst_rel_err: worst }
}

pub fn check_all_ops(instances: usize, seed: u64) -> Vec<OpCheck> {
    CHECKED_OPS
        .iter()
        .enumerate()
        .map(|(i, op)| check_op(op, instances, seed.wrapping_add(i as u64)))
        .collect()
}

/// STERound inside a composite loss: the gradient reaching `p` through the
/// rounding equals the gradient the loss has with respect to the rounded
/// value, and the latter matches finite differences.
pub fn check_ste_identity(instances: usize, seed: u64) -> OpCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < instances {
        let coords = random_coords(&mut rng, 4, 10);
        let c = rng.random_range(1..=3);
        let p = {
            let feats = (0..coords.len() * c)
                .map(|_| {
                    let v: f64 = rng.random_range(0.05..0.45);
                    if rng.random() { 0.5 + v } else { 0.5 - v }
                })
                .collect();
            SparseTensor::new(coords.clone(), c, feats).unwrap()
        };
        let mut rounded = p.clone();
        rounded.feats.iter_mut().for_each(|v| *v = if *v >= 0.5 { 1.0 } else { 0.0 });
        let mut store = ParamStore::new();
        let maps = Maps::new(&coords);
        let conv = Conv::new(&mut store, "c", 27, c, 2, true, &mut rng);
        let probe = Probe::new(&mut store, &mut rng, 2, coords.len());
        let tail = move |g: &mut Graph<'_, f64>, s: StoreId, x: Var| {
            let y = conv.forward(g, s, x, &maps.k3);
            let y = g.sigmoid(y);
            probe.loss(g, s, y)
        };

        let mut ga = Graph::new(BnMode::Batch);
        let sa = ga.bind(&store);
        let pv = ga.input_with_grad(&p);
        let sv = ga.ste_round(pv);
        let la = tail(&mut ga, sa, sv);
        let grad_p = ga.backward(la).unwrap().wrt(pv).unwrap().to_vec();

        let mut gb = Graph::new(BnMode::Batch);
        let sb = gb.bind(&store);
        let rv = gb.input_with_grad(&rounded);
        let lb = tail(&mut gb, sb, rv);
        let grad_s = gb.backward(lb).unwrap().wrt(rv).unwrap().to_vec();
        assert_eq!(ga.scalar(la), gb.scalar(lb), "STE forward must equal the hard threshold");

        let identity = rel_err(&grad_p, &grad_s);
        let fd = check_instance(std::slice::from_ref(&rounded), &store, BnMode::Batch, &|g, s, v| tail(g, s, v[0]))
            .unwrap_or(0.0);
        worst = worst.max(identity).max(fd);
        done += 1;
    }
    OpCheck { op: "ste_round", instances: done, worst_rel_err: worst }
}
