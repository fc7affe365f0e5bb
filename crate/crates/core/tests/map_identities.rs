use nalgebra::DVector;
use otmap::basis::{Basis, Structure, UnivariateFamily};
use otmap::map::{InvertOptions, SequentialMap, TransportMap};
use otmap::samples::Samples;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::oracles::{random_monotone_map, random_point};

#[test]
fn hundred_random_monotone_maps_invert_and_log_det() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let opts = InvertOptions::default();
    let mut worst_roundtrip = 0.0f64;
    let mut worst_logdet = 0.0f64;
    for m in 0..100 {
        let structure = if m % 2 == 0 { Structure::Kr } else { Structure::Krsv };
        let family = if m % 4 < 2 {
            UnivariateFamily::Hermite
        } else {
            UnivariateFamily::Monomial
        };
        let dim = 1 + m % 5;
        let order = 1 + (m / 5) % 4;
        let map = random_monotone_map(&mut rng, structure, family, dim, order);
        for _ in 0..10 {
            let x = random_point(&mut rng, dim);
            let y = map.forward(&x).unwrap();
            let back = map.invert(y.as_slice(), &opts).unwrap();
            let err = (back - DVector::from_column_slice(&x)).amax();
            worst_roundtrip = worst_roundtrip.max(err);

            let kr = map.log_det_jacobian(&x).unwrap();
            let full = map.jacobian(&x).unwrap().determinant().ln();
            worst_logdet = worst_logdet.max((kr - full).abs());
            assert!((kr - map.log_det_full(&x).unwrap()).abs() < 1e-10);
        }
    }
    assert!(worst_roundtrip < 1e-6, "roundtrip error {worst_roundtrip}");
    assert!(worst_logdet < 1e-10, "log-det mismatch {worst_logdet}");
}

#[test]
fn jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (structure, dim, order) in [(Structure::Dense, 3, 3), (Structure::Kr, 4, 3), (Structure::Krsv, 3, 4)] {
        let basis = Basis::build(structure, dim, order, UnivariateFamily::Hermite).unwrap();
        let mut w = TransportMap::identity(basis.clone()).unwrap().weights().clone();
        for d in 0..dim {
            for k in 0..basis.set().row_sizes()[d] {
                w[(d, k)] += 0.1 * (rng.random::<f64>() - 0.5);
            }
        }
        let map = TransportMap::new(basis, w).unwrap();
        let x = random_point(&mut rng, dim);
        let jac = map.jacobian(&x).unwrap();
        let h = 1e-6;
        for a in 0..dim {
            let mut up = x.clone();
            let mut dn = x.clone();
            up[a] += h;
            dn[a] -= h;
            let fd = (map.forward(&up).unwrap() - map.forward(&dn).unwrap()) / (2.0 * h);
            assert!((fd - jac.column(a)).amax() < 1e-6);
        }
    }
}

#[test]
fn sequence_inverse_undoes_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // Low order keeps the composed polynomial degree, and hence the range, modest.
    let stages: Vec<TransportMap> = (0..3)
        .map(|_| random_monotone_map(&mut rng, Structure::Kr, UnivariateFamily::Hermite, 3, 2))
        .collect();
    let seq = SequentialMap::from_stages(stages).unwrap();
    let rows: Vec<Vec<f64>> = (0..50).map(|_| random_point(&mut rng, 3)).collect();
    let xs = Samples::from_rows(&rows).unwrap();
    let ys = seq.compose_forward(&xs).unwrap();
    let back = seq.compose_inverse(&ys, &InvertOptions::default()).unwrap();
    for (a, b) in back.as_slice().iter().zip(xs.as_slice()) {
        assert!((a - b).abs() < 1e-6);
    }
    // Log-determinants of a composition add up.
    let x = xs.row(0);
    let (_, total) = seq.forward_with_log_det(x).unwrap();
    let mut cur = x.to_vec();
    let mut sum = 0.0;
    for s in seq.stages() {
        sum += s.log_det_jacobian(&cur).unwrap();
        cur = s.forward(&cur).unwrap().as_slice().to_vec();
    }
    assert!((total - sum).abs() < 1e-12);
}

#[test]
fn dense_map_refuses_inversion() {
    let basis = Basis::build(Structure::Dense, 2, 2, UnivariateFamily::Hermite).unwrap();
    let map = TransportMap::identity(basis).unwrap();
    assert!(map.invert(&[0.0, 0.0], &InvertOptions::default()).is_err());
}

proptest! {
    #[test]
    fn triangular_maps_have_lower_triangular_jacobians(
        seed in any::<u64>(),
        structure in prop_oneof![Just(Structure::Kr), Just(Structure::Krsv)],
        dim in 1usize..=5,
        order in 1usize..=4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map = random_monotone_map(&mut rng, structure, UnivariateFamily::Hermite, dim, order);
        let x = random_point(&mut rng, dim);
        let jac = map.jacobian(&x).unwrap();
        for r in 0..dim {
            for c in r + 1..dim {
                prop_assert_eq!(jac[(r, c)], 0.0);
            }
            prop_assert!(jac[(r, r)] > 0.0);
        }
        prop_assert!(map.check_monotonicity(&Samples::from_rows(std::slice::from_ref(&x)).unwrap()).ok);
    }

    #[test]
    fn invert_forward_roundtrip(
        seed in any::<u64>(),
        structure in prop_oneof![Just(Structure::Kr), Just(Structure::Krsv)],
        family in prop_oneof![Just(UnivariateFamily::Hermite), Just(UnivariateFamily::Monomial)],
        dim in 1usize..=5,
        order in 1usize..=4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map = random_monotone_map(&mut rng, structure, family, dim, order);
        let x = random_point(&mut rng, dim);
        let y = map.forward(&x).unwrap();
        let back = map.invert(y.as_slice(), &InvertOptions::default()).unwrap();
        prop_assert!((back - DVector::from_column_slice(&x)).amax() < 1e-6);
        let kr = map.log_det_jacobian(&x).unwrap();
        let full = map.log_det_full(&x).unwrap();
        prop_assert!((kr - full).abs() < 1e-10);
    }
}
