use pcvox_core::bitcodec::Bitstream;
use pcvox_core::octcodec::{context_free_decode, context_free_encode, decode, encode};
use pcvox_core::VoxelCloud;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_voxels(rng: &mut ChaCha8Rng, depth: u8, n: usize) -> VoxelCloud {
    let max = 1u32 << depth;
    let c = (0..n).map(|_| [0; 3].map(|_: u8| rng.random_range(0..max))).collect();
    VoxelCloud::new(depth, c).unwrap()
}

#[test]
fn thousand_cloud_fuzz() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..1000 {
        let depth = rng.random_range(1..=6u8);
        let n = rng.random_range(1..300);
        let vc = random_voxels(&mut rng, depth, n);
        let bytes = encode(&vc, 1.0).to_bytes().unwrap();
        let back = decode(&Bitstream::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, vc);
    }
}

#[test]
fn deep_clouds_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for depth in 2..=10u8 {
        let vc = random_voxels(&mut rng, depth, 2000);
        assert_eq!(decode(&encode(&vc, 0.5)).unwrap(), vc);
        let cf = context_free_encode(&vc);
        assert_eq!(context_free_decode(&cf, depth, vc.len() as u64).unwrap(), vc);
    }
}

#[test]
fn header_mismatch_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let vc = random_voxels(&mut rng, 6, 300);
    let mut bs = encode(&vc, 1.0);
    bs.header.point_count += 1;
    assert!(decode(&bs).is_err());
}
