//! Reference constructions shared by the integration tests.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use otmap::basis::{Basis, Structure, UnivariateFamily};
use otmap::map::TransportMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn binom(n: u64, k: u64) -> u64 {
    (1..=k).fold(1, |acc, i| acc * (n - k + i) / i)
}

/// Every exponent vector with entries in `0..=order`, filtered by the
/// structure's admissibility rule for row `d` (1-based). Branches whose
/// running total already exceeds `order` are pruned, which cannot drop an
/// admissible vector.
pub fn brute_force_row(structure: Structure, dim: usize, order: usize, d: usize) -> BTreeSet<Vec<u32>> {
    fn walk(
        e: &mut Vec<u32>,
        pos: usize,
        sum: usize,
        order: usize,
        keep: &dyn Fn(&[u32]) -> bool,
        out: &mut BTreeSet<Vec<u32>>,
    ) {
        if pos == e.len() {
            if keep(e) {
                out.insert(e.clone());
            }
            return;
        }
        for v in 0..=order {
            if sum + v > order {
                break;
            }
            e[pos] = v as u32;
            walk(e, pos + 1, sum + v, order, keep, out);
        }
        e[pos] = 0;
    }
    let keep = |e: &[u32]| {
        let sum: u32 = e.iter().sum();
        let nonzero = e.iter().filter(|&&v| v > 0).count();
        let within_prefix = e.iter().skip(d).all(|&v| v == 0);
        match structure {
            Structure::Dense => sum as usize <= order,
            Structure::Kr => sum as usize <= order && within_prefix,
            Structure::Krsv => sum as usize <= order && within_prefix && nonzero <= 1,
        }
    };
    let mut out = BTreeSet::new();
    walk(&mut vec![0; dim], 0, 0, order, &keep, &mut out);
    out
}

pub fn position(basis: &Basis, e: &[u32]) -> Option<usize> {
    basis.set().indices().iter().position(|j| j.as_slice() == e)
}

/// A triangular map that is monotone on all of R^D by construction: row `d`
/// is an arbitrary polynomial in `x_<d` plus
/// `a x_d + b psi_3(x_d) + sum_j c_j x_d psi_2(x_j)` with `a` large enough.
pub fn random_monotone_map(
    rng: &mut ChaCha8Rng,
    structure: Structure,
    family: UnivariateFamily,
    dim: usize,
    order: usize,
) -> TransportMap {
    let basis = Basis::build(structure, dim, order, family).unwrap();
    let mut w = DMatrix::zeros(dim, basis.len());
    for d in 0..dim {
        for (k, e) in basis
            .set()
            .indices()
            .iter()
            .enumerate()
            .take(basis.set().row_sizes()[d])
        {
            if e[d] == 0 {
                w[(d, k)] = rng.random::<f64>() * 2.0 - 1.0;
            }
        }
        let mut unit = vec![0u32; dim];
        unit[d] = 1;
        let mut a = 0.2 + rng.random::<f64>();
        if order >= 3 {
            let mut cube = vec![0u32; dim];
            cube[d] = 3;
            let b = 0.3 * rng.random::<f64>();
            w[(d, position(&basis, &cube).unwrap())] = b;
            // He_3 = x^3 - 3x needs the linear coefficient to cover 3b.
            if family == UnivariateFamily::Hermite {
                a += 3.0 * b;
            }
            if structure == Structure::Kr {
                for j in 0..d {
                    let mut e = vec![0u32; dim];
                    e[d] = 1;
                    e[j] = 2;
                    let c = 0.2 * rng.random::<f64>();
                    w[(d, position(&basis, &e).unwrap())] = c;
                    // x_d He_2(x_j) = x_d x_j^2 - x_d.
                    if family == UnivariateFamily::Hermite {
                        a += c;
                    }
                }
            }
        }
        w[(d, position(&basis, &unit).unwrap())] = a;
    }
    TransportMap::new(basis, w).unwrap()
}

pub fn random_point(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| 1.5 * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// `n` seeded draws from `N(0, 1.5^2 I)`.
pub fn random_points(seed: u64, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_point(&mut rng, dim)).collect()
}
