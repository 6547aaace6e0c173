//! Property tests over the structural invariants.

use proptest::prelude::*;
use pixssr_core::data::{read_cube, write_cube, HsiCube};
use pixssr_core::objectives::{sam, ssim_band};
use pixssr_core::rng::Rng;
use pixssr_core::ssm::{flatten_2d, unflatten_2d, ScanDirection};
use pixssr_core::tensor::broadcast_shape;
use pixssr_core::Tensor;

fn seeded_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut rng = Rng::from_seed(seed);
    Tensor::from_fn(shape, |_| lo + (hi - lo) * rng.uniform())
}

proptest! {
    #[test]
    fn flatten_round_trips_bitwise(c in 1usize..5, h in 1usize..9, w in 1usize..9, seed in 0u64..1000) {
        let f = seeded_tensor(&[c, h, w], seed, -1.0, 1.0);
        for dir in ScanDirection::ALL {
            let back = unflatten_2d(&flatten_2d(&f, dir), dir, h, w);
            prop_assert_eq!(&f, &back);
        }
    }

    #[test]
    fn cube_files_round_trip_bitwise(b in 1usize..6, h in 1usize..12, w in 1usize..12, seed in 0u64..1000) {
        let mut rng = Rng::from_seed(seed);
        // f32-representable values in [0,1]
        let v = Tensor::from_fn(&[b, h, w], |_| rng.uniform() as f32 as f64);
        let cube = HsiCube::new(v).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.hsic");
        write_cube(&p, &cube).unwrap();
        prop_assert_eq!(read_cube(&p).unwrap(), cube);
    }

    #[test]
    fn broadcast_shapes_associative(
        a in proptest::collection::vec(prop_oneof![Just(1usize), 2usize..4], 1..4),
        b in proptest::collection::vec(prop_oneof![Just(1usize), 2usize..4], 1..4),
        c in proptest::collection::vec(prop_oneof![Just(1usize), 2usize..4], 1..4),
    ) {
        let left = broadcast_shape(&a, &b).and_then(|ab| broadcast_shape(&ab, &c));
        let right = broadcast_shape(&b, &c).and_then(|bc| broadcast_shape(&a, &bc));
        match (left, right) {
            (Ok(l), Ok(r)) => prop_assert_eq!(l, r),
            (Err(_), Err(_)) => {}
            (l, r) => prop_assert!(false, "associativity mismatch: {:?} vs {:?}", l, r),
        }
    }

    #[test]
    fn sam_ignores_positive_per_pixel_rescaling(seed in 0u64..500) {
        let a = seeded_tensor(&[4, 5, 5], seed, 0.1, 1.0);
        let b = seeded_tensor(&[4, 5, 5], seed + 7777, 0.1, 1.0);
        let mut rng = Rng::from_seed(seed ^ 0xF0F0);
        let scales: Vec<f64> = (0..25).map(|_| 0.25 + 2.0 * rng.uniform()).collect();
        let b2 = Tensor::from_fn(&[4, 5, 5], |i| b.data()[i] * scales[i % 25]);
        let s0 = sam(&a, &b).unwrap();
        let s1 = sam(&a, &b2).unwrap();
        prop_assert!((s0 - s1).abs() < 1e-9, "{} vs {}", s0, s1);
    }

    #[test]
    fn ssim_is_symmetric(seed in 0u64..500) {
        let a = seeded_tensor(&[13, 13], seed, 0.0, 1.0);
        let b = seeded_tensor(&[13, 13], seed + 31, 0.0, 1.0);
        let ab = ssim_band(&a, &b).unwrap();
        let ba = ssim_band(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn masks_are_exact_and_deterministic(
        h in 1usize..40, w in 1usize..40, seed in 0u64..1000, omega in 0.0f64..1.0
    ) {
        let m1 = pixssr_core::spectra::make_mask(h, w, omega, seed).unwrap();
        let m2 = pixssr_core::spectra::make_mask(h, w, omega, seed).unwrap();
        prop_assert_eq!(m1.locations(), m2.locations());
        prop_assert_eq!(m1.count(), (omega * (h * w) as f64).floor() as usize);
    }
}
