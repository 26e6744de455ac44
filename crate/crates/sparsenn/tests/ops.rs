use std::sync::Arc;

use pcvox_nn::{
    commit_bn_stats, count_flops, BatchNorm, BnMode, Conv, ConvTrace, CoordSet, Graph, KernelMap, ParamStore,
    SparseTensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tensor(coords: &Arc<CoordSet>, c: usize, rng: &mut ChaCha8Rng) -> SparseTensor<f64> {
    let f = (0..coords.len() * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    SparseTensor::new(coords.clone(), c, f).unwrap()
}

#[test]
fn identity_center_kernel() {
    let coords = Arc::new(CoordSet::new(vec![[3, 3, 3]]));
    let mut store = ParamStore::<f64>::new();
    let mut w = vec![0.0; 27 * 2 * 2];
    // offset 13 is (0,0,0)
    w[13 * 4] = 1.0;
    w[13 * 4 + 3] = 1.0;
    let wid = store.add("w", &[27, 2, 2], w, false);
    let k3 = Arc::new(KernelMap::submanifold(&coords, 3));
    let x = SparseTensor::new(coords, 2, vec![0.25, -4.0]).unwrap();
    let mut g = Graph::new(BnMode::Batch);
    let s = g.bind(&store);
    let xv = g.input(&x);
    let y = g.conv(xv, &k3, s.p(wid), None);
    assert_eq!(g.value(y), &[0.25, -4.0]);
}

fn dense_oracle(coords: &CoordSet, x: &SparseTensor<f64>, w: &[f64], cin: usize, cout: usize, n: u32) -> Vec<f64> {
    let idx = |c: [i64; 3]| -> Option<usize> {
        if c.iter().any(|&v| v < 0 || v >= n as i64) {
            return None;
        }
        Some(((c[0] * n as i64 + c[1]) * n as i64 + c[2]) as usize)
    };
    let mut grid = vec![0.0; (n * n * n) as usize * cin];
    for (r, c) in coords.coords().iter().enumerate() {
        let i = idx(c.map(|v| v as i64)).unwrap();
        grid[i * cin..(i + 1) * cin].copy_from_slice(x.row(r));
    }
    let mut out = Vec::new();
    for c in coords.coords() {
        let mut acc = vec![0.0; cout];
        let mut k = 0;
        for dx in -1..=1i64 {
            for dy in -1..=1i64 {
                for dz in -1..=1i64 {
                    if let Some(i) = idx([c[0] as i64 + dx, c[1] as i64 + dy, c[2] as i64 + dz]) {
                        for ci in 0..cin {
                            for (co, a) in acc.iter_mut().enumerate() {
                                *a += w[(k * cin + ci) * cout + co] * grid[i * cin + ci];
                            }
                        }
                    }
                    k += 1;
                }
            }
        }
        out.extend(acc);
    }
    out
}

#[test]
fn stride_one_matches_dense_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cases: Vec<(u32, Vec<[u32; 3]>)> = Vec::new();
    let mut dense = Vec::new();
    for x in 0..4 {
        for y in 0..4 {
            for z in 0..4 {
                dense.push([x, y, z]);
            }
        }
    }
    cases.push((4, dense));
    for _ in 0..5 {
        let c = (0..120).map(|_| [0; 3].map(|_: u8| rng.random_range(0..8u32))).collect();
        cases.push((8, c));
    }
    for (n, c) in cases {
        let coords = Arc::new(CoordSet::new(c));
        let (cin, cout) = (3, 2);
        let x = tensor(&coords, cin, &mut rng);
        let mut store = ParamStore::<f64>::new();
        let conv = Conv::new(&mut store, "c", 27, cin, cout, false, &mut rng);
        let k3 = Arc::new(KernelMap::submanifold(&coords, 3));
        let mut g = Graph::new(BnMode::Batch);
        let s = g.bind(&store);
        let xv = g.input(&x);
        let y = conv.forward(&mut g, s, xv, &k3);
        let oracle = dense_oracle(&coords, &x, store.data(conv.w), cin, cout, n);
        for (a, b) in g.value(y).iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn stride_two_and_transposed_shapes() {
    let cube: Vec<[u32; 3]> = (0..8u8).map(|i| pcvox_core::pcgeom::morton::child_of([0, 0, 0], i)).collect();
    let coords = Arc::new(CoordSet::new(cube));
    let down = KernelMap::downsample(&coords);
    assert_eq!(down.output.coords(), &[[0, 0, 0]]);

    let one = Arc::new(CoordSet::new(vec![[2, 5, 1]]));
    let up = KernelMap::upsample(&one);
    assert_eq!(up.output.len(), 8);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let many = Arc::new(CoordSet::new((0..50).map(|_| [0; 3].map(|_: u8| rng.random_range(0..16u32))).collect()));
    let up = KernelMap::upsample(&many);
    assert_eq!(up.output.len(), 8 * many.len());
    assert_eq!(up.output.parents(), *many);
}

#[test]
fn elementwise_values() {
    let coords = Arc::new(CoordSet::new(vec![[0, 0, 0], [1, 0, 0], [2, 0, 0]]));
    let x = SparseTensor::new(coords, 1, vec![-1.0f32, 2.0, 0.0]).unwrap();
    let mut g = Graph::<f32>::new(BnMode::Batch);
    let xv = g.input(&x);
    let r = g.relu(xv);
    assert_eq!(g.value(r), &[0.0, 2.0, 0.0]);
    let s = g.sigmoid(xv);
    assert_eq!(g.value(s)[2], 0.5);

    let p = SparseTensor::new(x.coords.clone(), 1, vec![0.5f32, 0.49, 0.51]).unwrap();
    let pv = g.input(&p);
    let st = g.ste_round(pv);
    assert_eq!(g.value(st), &[1.0, 0.0, 1.0]);
}

#[test]
fn batch_norm_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let coords = Arc::new(CoordSet::new((0..300).map(|_| [0; 3].map(|_: u8| rng.random_range(0..32u32))).collect()));
    let c = 4;
    let feats = (0..coords.len() * c).map(|i| rng.random_range(-3.0..5.0) * (1 + i % c) as f64).collect();
    let x = SparseTensor::new(coords.clone(), c, feats).unwrap();
    let mut store = ParamStore::<f64>::new();
    let bn = BatchNorm::new(&mut store, "bn", c);
    let mut g = Graph::new(BnMode::Batch);
    let s = g.bind(&store);
    let xv = g.input(&x);
    let y = bn.forward(&mut g, s, xv);
    let n = coords.len() as f64;
    for k in 0..c {
        let col: Vec<f64> = g.value(y).iter().skip(k).step_by(c).copied().collect();
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-5);
        assert!((var - 1.0).abs() < 1e-4, "{var}");
    }
    let obs = g.bn_observations().to_vec();
    let mut updated = store.clone();
    commit_bn_stats(&mut updated, s, &obs, 1.0);
    assert!((updated.data(bn.running_mean)[0] - obs[0].mean[0]).abs() < 1e-12);
}

#[test]
fn bce_values_and_gradient() {
    assert!((pcvox_nn::bce(1.0, 0.5) - 0.693147).abs() < 1e-6);
    assert!((pcvox_nn::bce(0.0, 0.9) - 2.302585).abs() < 1e-6);
    let coords = Arc::new(CoordSet::new(vec![[0, 0, 0]]));
    let p = SparseTensor::new(coords.clone(), 1, vec![0.5f64]).unwrap();
    let t = SparseTensor::new(coords, 1, vec![1.0f64]).unwrap();
    let mut g = Graph::new(BnMode::Batch);
    let pv = g.input_with_grad(&p);
    let tv = g.input(&t);
    let l = g.bce_sum(pv, tv);
    let grads = g.backward(l).unwrap();
    assert!((grads.wrt(pv).unwrap()[0] + 2.0).abs() < 1e-12);
}

#[test]
fn flops_hand_computed() {
    let configs = [
        (1000, 32, 64),
        (1, 1, 1),
        (517, 12, 32),
        (8000, 32, 1),
        (250, 32, 32),
        (3, 8, 16),
        (4096, 16, 16),
        (77, 1, 32),
        (12345, 2, 3),
        (640, 64, 128),
    ];
    for (n_a, c_in, c_out) in configs {
        let t = ConvTrace { n_a, c_in, c_out };
        assert_eq!(count_flops(&[t]), 2 * n_a as u64 * c_in as u64 * c_out as u64);
    }
    // Recorded by an actual forward pass.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let coords = Arc::new(CoordSet::new((0..200).map(|_| [0; 3].map(|_: u8| rng.random_range(0..16u32))).collect()));
    let x = tensor(&coords, 3, &mut rng).feats.iter().map(|&v| v as f32).collect();
    let x = SparseTensor::new(coords.clone(), 3, x).unwrap();
    let mut store = ParamStore::<f32>::new();
    let a = Conv::new(&mut store, "a", 27, 3, 5, true, &mut rng);
    let b = Conv::new(&mut store, "b", 27, 5, 5, true, &mut rng);
    let k3 = Arc::new(KernelMap::submanifold(&coords, 3));
    let mut g = Graph::new(BnMode::Batch);
    let s = g.bind(&store);
    let xv = g.input(&x);
    let y = a.forward(&mut g, s, xv, &k3);
    let single = count_flops(g.conv_trace());
    assert_eq!(single, 2 * coords.len() as u64 * 3 * 5);
    let z = b.forward(&mut g, s, y, &k3);
    let _ = b.forward(&mut g, s, z, &k3);
    assert_eq!(count_flops(&g.conv_trace()[1..]), 2 * (2 * coords.len() as u64 * 5 * 5));
}

#[test]
fn frozen_store_passes_gradients_without_updating() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let coords = Arc::new(CoordSet::new((0..30).map(|_| [0; 3].map(|_: u8| rng.random_range(0..6u32))).collect()));
    let x = tensor(&coords, 2, &mut rng);
    let mut store = ParamStore::<f64>::new();
    let conv = Conv::new(&mut store, "c", 27, 2, 1, true, &mut rng);
    let k3 = Arc::new(KernelMap::submanifold(&coords, 3));
    let mut g = Graph::new(BnMode::Batch);
    let s = g.bind_frozen(&store, BnMode::Batch);
    let xv = g.input_with_grad(&x);
    let y = conv.forward(&mut g, s, xv, &k3);
    let l = g.sum(y);
    let grads = g.backward(l).unwrap();
    assert!(grads.for_store(s).iter().all(Option::is_none));
    assert!(grads.wrt(xv).unwrap().iter().any(|v| *v != 0.0));
}

#[test]
fn non_finite_loss_aborts() {
    let coords = Arc::new(CoordSet::new(vec![[0, 0, 0]]));
    let x = SparseTensor::new(coords, 1, vec![f32::NAN]).unwrap();
    let mut g = Graph::new(BnMode::Batch);
    let xv = g.input_with_grad(&x);
    let l = g.sum(xv);
    assert!(g.backward(l).is_err());
}

#[test]
fn two_layer_net_trains() {
    use pcvox_nn::{Adam, SConvBlock};
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let coords = Arc::new(CoordSet::new((0..60).map(|_| [0; 3].map(|_: u8| rng.random_range(0..6u32))).collect()));
    let x: SparseTensor<f32> = SparseTensor::new(
        coords.clone(),
        2,
        (0..coords.len() * 2).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let targets: Vec<f32> = coords.coords().iter().map(|c| ((c[0] + c[1]) % 2) as f32).collect();
    let mut store = ParamStore::<f32>::new();
    let block = SConvBlock::new(&mut store, "b", 27, 2, 8, &mut rng);
    let head = Conv::new(&mut store, "h", 27, 8, 1, true, &mut rng);
    let k3 = Arc::new(KernelMap::submanifold(&coords, 3));
    let mut adam = Adam::new(1e-2);
    let mut losses = Vec::new();
    for _ in 0..60 {
        let (loss, grads) = {
            let mut g = Graph::new(BnMode::Batch);
            let s = g.bind(&store);
            let xv = g.input(&x);
            let h = block.forward(&mut g, s, xv, &k3);
            let z = head.forward(&mut g, s, h, &k3);
            let p = g.sigmoid(z);
            let t = g.constant(targets.len(), 1, targets.clone(), None);
            let l = g.bce_sum(p, t);
            let grads = g.backward(l).unwrap();
            (g.scalar(l), grads.for_store(s).to_vec())
        };
        losses.push(loss);
        adam.step(&mut store, &grads).unwrap();
    }
    assert!(losses[59] < 0.5 * losses[0], "{} -> {}", losses[0], losses[59]);
}
