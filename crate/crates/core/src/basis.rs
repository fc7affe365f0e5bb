//! Multi-index sets and tensor-product polynomial bases.
//!
//! A basis term is `phi_j(x) = prod_a psi_{j_a}(x_a)` for a univariate family
//! `psi`. Index sets are stored in a canonical order: terms are grouped by the
//! smallest `d` such that the term depends only on `x_1..x_d`, and within a
//! group by total order and then lexicographically. With this ordering the
//! first `K_d` terms of any set depend only on the first `d` coordinates, which
//! is what gives lower-triangular (Knothe-Rosenblatt) maps their structural
//! zeros.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default upper bound on the number of basis terms.
pub const DEFAULT_TERM_CAP: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    /// Every multi-index of total order `<= O`.
    Dense,
    /// Lower-triangular total-order map.
    Kr,
    /// Lower-triangular map without mixed terms.
    Krsv,
}

impl Structure {
    pub fn is_triangular(self) -> bool {
        !matches!(self, Structure::Dense)
    }

    pub fn name(self) -> &'static str {
        match self {
            Structure::Dense => "dense",
            Structure::Kr => "kr",
            Structure::Krsv => "krsv",
        }
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Structure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dense" => Ok(Structure::Dense),
            "kr" => Ok(Structure::Kr),
            "krsv" => Ok(Structure::Krsv),
            other => Err(Error::invalid(format!("unknown structure '{other}'"))),
        }
    }
}

/// Univariate polynomial family `psi_n`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnivariateFamily {
    /// Probabilists' Hermite polynomials, orthogonal under N(0, 1).
    #[default]
    Hermite,
    /// Plain powers `x^n`.
    Monomial,
}

impl UnivariateFamily {
    /// Fills `vals[n] = psi_n(x)` and `ders[n] = psi_n'(x)` for `n = 0..vals.len()`.
    pub fn eval_into(self, x: f64, vals: &mut [f64], ders: &mut [f64]) {
        debug_assert_eq!(vals.len(), ders.len());
        let n = vals.len();
        if n == 0 {
            return;
        }
        vals[0] = 1.0;
        ders[0] = 0.0;
        if n == 1 {
            return;
        }
        match self {
            UnivariateFamily::Hermite => {
                vals[1] = x;
                for k in 1..n - 1 {
                    vals[k + 1] = x * vals[k] - k as f64 * vals[k - 1];
                }
                for k in 1..n {
                    ders[k] = k as f64 * vals[k - 1];
                }
            }
            UnivariateFamily::Monomial => {
                for k in 1..n {
                    vals[k] = vals[k - 1] * x;
                    ders[k] = k as f64 * vals[k - 1];
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            UnivariateFamily::Hermite => "hermite",
            UnivariateFamily::Monomial => "monomial",
        }
    }
}

impl std::str::FromStr for UnivariateFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hermite" => Ok(UnivariateFamily::Hermite),
            "monomial" => Ok(UnivariateFamily::Monomial),
            other => Err(Error::invalid(format!("unknown polynomial family '{other}'"))),
        }
    }
}

/// Number of multi-indices in `N^D` with total order `<= O`, i.e. `C(D+O, O)`.
pub fn total_order_count(dim: usize, order: usize) -> u128 {
    let mut c: u128 = 1;
    for i in 1..=order as u128 {
        c = c * (dim as u128 + i) / i;
    }
    c
}

/// Ordered list of exponent vectors with the per-row block sizes `K_1 <= .. <= K_D`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiIndexSet {
    structure: Structure,
    dim: usize,
    order: usize,
    indices: Vec<Vec<u32>>,
    row_sizes: Vec<usize>,
    // (coordinate, degree) pairs of the non-zero exponents of each term.
    factors: Vec<Vec<(usize, u32)>>,
    // For each coordinate, the terms whose exponent in that coordinate is non-zero.
    support: Vec<Vec<usize>>,
}

impl MultiIndexSet {
    pub fn new(structure: Structure, dim: usize, order: usize) -> Result<Self> {
        Self::with_cap(structure, dim, order, DEFAULT_TERM_CAP)
    }

    pub fn with_cap(structure: Structure, dim: usize, order: usize, cap: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDimension);
        }
        let requested = match structure {
            Structure::Dense | Structure::Kr => total_order_count(dim, order),
            Structure::Krsv => dim as u128 * order as u128 + 1,
        };
        if requested > cap as u128 {
            return Err(Error::IndexSetTooLarge { requested, cap });
        }

        let mut indices = Vec::with_capacity(requested as usize);
        let mut row_sizes = Vec::with_capacity(dim);
        for block in 1..=dim {
            let mut group = Vec::new();
            if block == 1 {
                group.push(vec![0u32; dim]);
            }
            // Terms whose last non-zero exponent sits at coordinate `block`.
            let mut prefix = vec![0u32; dim];
            collect_block(structure, order, block, 0, 0, &mut prefix, &mut group);
            group.sort_by(|a, b| {
                let ta: u32 = a.iter().sum();
                let tb: u32 = b.iter().sum();
                ta.cmp(&tb).then_with(|| a.cmp(b))
            });
            indices.extend(group);
            row_sizes.push(indices.len());
        }
        if structure == Structure::Dense {
            row_sizes = vec![indices.len(); dim];
        }
        Ok(Self::from_parts(structure, dim, order, indices, row_sizes))
    }

    fn from_parts(
        structure: Structure,
        dim: usize,
        order: usize,
        indices: Vec<Vec<u32>>,
        row_sizes: Vec<usize>,
    ) -> Self {
        let factors = indices
            .iter()
            .map(|j| {
                j.iter()
                    .enumerate()
                    .filter(|(_, &e)| e > 0)
                    .map(|(a, &e)| (a, e))
                    .collect()
            })
            .collect::<Vec<Vec<_>>>();
        let mut support = vec![Vec::new(); dim];
        for (k, f) in factors.iter().enumerate() {
            for &(a, _) in f {
                support[a].push(k);
            }
        }
        Self {
            structure,
            dim,
            order,
            indices,
            row_sizes,
            factors,
            support,
        }
    }

    pub fn structure(&self) -> Structure {
        self.structure
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of basis terms `K`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Vec<u32>] {
        &self.indices
    }

    /// Leading terms available to each output row. All equal `K` for dense sets.
    pub fn row_sizes(&self) -> &[usize] {
        &self.row_sizes
    }

    /// Terms with a non-zero exponent in coordinate `a` (0-based).
    pub fn support(&self, a: usize) -> &[usize] {
        &self.support[a]
    }

    /// Position of the degree-one term in coordinate `a` (0-based), if present.
    pub fn linear_term(&self, a: usize) -> Option<usize> {
        self.factors.iter().position(|f| f.len() == 1 && f[0] == (a, 1))
    }
}

fn collect_block(
    structure: Structure,
    order: usize,
    block: usize,
    coord: usize,
    used: u32,
    prefix: &mut Vec<u32>,
    out: &mut Vec<Vec<u32>>,
) {
    let last = block - 1;
    if coord == last {
        for e in 1..=(order as u32).saturating_sub(used) {
            prefix[coord] = e;
            out.push(prefix.clone());
        }
        prefix[coord] = 0;
        return;
    }
    let max_e = (order as u32).saturating_sub(used);
    for e in 0..=max_e {
        if structure == Structure::Krsv && e > 0 {
            // A univariate term in an earlier coordinate cannot also involve `block`.
            break;
        }
        prefix[coord] = e;
        collect_block(structure, order, block, coord + 1, used + e, prefix, out);
    }
    prefix[coord] = 0;
}

/// A multi-index set paired with the univariate family it is evaluated with.
#[derive(Clone, Debug, PartialEq)]
pub struct Basis {
    set: MultiIndexSet,
    family: UnivariateFamily,
}

impl Basis {
    pub fn new(set: MultiIndexSet, family: UnivariateFamily) -> Self {
        Self { set, family }
    }

    pub fn build(structure: Structure, dim: usize, order: usize, family: UnivariateFamily) -> Result<Self> {
        Ok(Self::new(MultiIndexSet::new(structure, dim, order)?, family))
    }

    pub fn set(&self) -> &MultiIndexSet {
        &self.set
    }

    pub fn family(&self) -> UnivariateFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.set.dim
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.set.dim {
            return Err(Error::DimensionMismatch {
                what: "basis input",
                expected: self.set.dim,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "basis input" });
        }
        Ok(())
    }

    fn univariate_tables(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.set.order + 1;
        let mut vals = vec![0.0; x.len() * n];
        let mut ders = vec![0.0; x.len() * n];
        for (a, &xa) in x.iter().enumerate() {
            self.family
                .eval_into(xa, &mut vals[a * n..(a + 1) * n], &mut ders[a * n..(a + 1) * n]);
        }
        (vals, ders)
    }

    /// `Phi(x)` written into `out` (length `K`). Input is not validated.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.set.order + 1;
        let (vals, _) = self.univariate_tables(x);
        for (o, f) in out.iter_mut().zip(&self.set.factors) {
            *o = f.iter().map(|&(a, e)| vals[a * n + e as usize]).product();
        }
    }

    /// The first `out.len()` terms of `Phi(x)` and of `dPhi/dx_d`. Used by row-wise
    /// triangular solves where only a leading block matters.
    pub fn eval_prefix_with_partial(&self, x: &[f64], d: usize, vals_out: &mut [f64], der_out: &mut [f64]) {
        let n = self.set.order + 1;
        let (vals, ders) = self.univariate_tables(x);
        for (t, f) in self.set.factors.iter().take(vals_out.len()).enumerate() {
            let mut v = 1.0;
            let mut dv = 1.0;
            let mut touches = false;
            for &(a, e) in f {
                let u = vals[a * n + e as usize];
                v *= u;
                if a == d {
                    dv *= ders[a * n + e as usize];
                    touches = true;
                } else {
                    dv *= u;
                }
            }
            vals_out[t] = v;
            der_out[t] = if touches { dv } else { 0.0 };
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_point(x)?;
        let mut out = DVector::zeros(self.len());
        self.eval_into(x, out.as_mut_slice());
        Ok(out)
    }

    /// `Phi(x)` and the `K x D` Jacobian `J_Phi(x)`. Input is not validated.
    pub fn eval_with_jacobian(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.set.order + 1;
        let (vals, ders) = self.univariate_tables(x);
        let k = self.len();
        let mut phi = DVector::zeros(k);
        let mut jac = DMatrix::zeros(k, self.set.dim);
        for (t, f) in self.set.factors.iter().enumerate() {
            phi[t] = f.iter().map(|&(a, e)| vals[a * n + e as usize]).product();
            for (m, &(a, e)) in f.iter().enumerate() {
                let mut prod = ders[a * n + e as usize];
                for (l, &(b, eb)) in f.iter().enumerate() {
                    if l != m {
                        prod *= vals[b * n + eb as usize];
                    }
                }
                jac[(t, a)] = prod;
            }
        }
        (phi, jac)
    }

    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        Ok(self.eval_with_jacobian(x).1)
    }

    /// Column `d` (0-based) of the basis Jacobian, written into `out`. Input is not validated.
    pub fn partial_into(&self, x: &[f64], d: usize, out: &mut [f64]) {
        let n = self.set.order + 1;
        let (vals, ders) = self.univariate_tables(x);
        out.iter_mut().for_each(|v| *v = 0.0);
        for &t in &self.set.support[d] {
            let f = &self.set.factors[t];
            out[t] = f
                .iter()
                .map(|&(a, e)| {
                    if a == d {
                        ders[a * n + e as usize]
                    } else {
                        vals[a * n + e as usize]
                    }
                })
                .product();
        }
    }

    /// `dPhi/dx_d` at `x`, with `d` a 0-based coordinate.
    pub fn partial(&self, x: &[f64], d: usize) -> Result<DVector<f64>> {
        self.check_point(x)?;
        if d >= self.set.dim {
            return Err(Error::CoordinateOutOfRange {
                coord: d + 1,
                dim: self.set.dim,
            });
        }
        let mut out = DVector::zeros(self.len());
        self.partial_into(x, d, out.as_mut_slice());
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn row_sizes_for_d3_o3() {
        let dense = MultiIndexSet::new(Structure::Dense, 3, 3).unwrap();
        assert_eq!(dense.len(), 20);
        let kr = MultiIndexSet::new(Structure::Kr, 3, 3).unwrap();
        assert_eq!(kr.row_sizes(), &[4, 10, 20]);
        let krsv = MultiIndexSet::new(Structure::Krsv, 3, 3).unwrap();
        assert_eq!(krsv.row_sizes(), &[4, 7, 10]);
    }

    #[test]
    fn constant_only_set() {
        let s = MultiIndexSet::new(Structure::Dense, 5, 0).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.indices()[0], vec![0; 5]);
    }

    #[test]
    fn rejects_zero_dim_and_cap() {
        assert!(matches!(
            MultiIndexSet::new(Structure::Dense, 0, 2),
            Err(Error::ZeroDimension)
        ));
        assert!(matches!(
            MultiIndexSet::new(Structure::Dense, 300, 4),
            Err(Error::IndexSetTooLarge { .. })
        ));
        assert!(MultiIndexSet::new(Structure::Krsv, 300, 4).is_ok());
    }

    #[test]
    fn krsv_has_no_mixed_terms_and_no_duplicates() {
        let s = MultiIndexSet::new(Structure::Krsv, 4, 3).unwrap();
        for j in s.indices() {
            assert!(j.iter().filter(|&&e| e > 0).count() <= 1);
        }
        let mut sorted = s.indices().to_vec();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), s.len());
    }

    #[test]
    fn hermite_values_1d() {
        let b = Basis::build(Structure::Dense, 1, 3, UnivariateFamily::Hermite).unwrap();
        assert_eq!(b.eval(&[0.0]).unwrap().as_slice(), &[1.0, 0.0, -1.0, 0.0]);
        // He_2(2) = 3, He_3(2) = 8 - 6 = 2
        assert_eq!(b.eval(&[2.0]).unwrap().as_slice(), &[1.0, 2.0, 3.0, 2.0]);
        let j = b.jacobian(&[2.0]).unwrap();
        assert_eq!(j[(0, 0)], 0.0);
        assert_eq!(j[(2, 0)], 4.0);
    }

    #[test]
    fn monomial_values_2d() {
        let b = Basis::build(Structure::Dense, 2, 2, UnivariateFamily::Monomial).unwrap();
        let v = b.eval(&[2.0, 3.0]).unwrap();
        let mut got: Vec<f64> = v.iter().copied().collect();
        got.sort_by(f64::total_cmp);
        assert_eq!(got, vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
        for (val, j) in v.iter().zip(b.set().indices()) {
            assert_eq!(*val, 2f64.powi(j[0] as i32) * 3f64.powi(j[1] as i32));
        }
    }

    #[test]
    fn hermite_recurrence_holds_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut vals = [0.0; 8];
        let mut ders = [0.0; 8];
        for _ in 0..50 {
            let x: f64 = rng.random_range(-3.0..3.0);
            UnivariateFamily::Hermite.eval_into(x, &mut vals, &mut ders);
            for n in 1..7 {
                assert_eq!(vals[n + 1], x * vals[n] - n as f64 * vals[n - 1]);
            }
        }
    }

    #[test]
    fn partial_kr_block_one() {
        let b = Basis::build(Structure::Kr, 3, 2, UnivariateFamily::Hermite).unwrap();
        let x = [0.3, -0.7, 1.1];
        let p = b.partial(&x, 0).unwrap();
        for (k, j) in b.set().indices().iter().enumerate() {
            if j[0] == 0 {
                assert_eq!(p[k], 0.0);
            }
        }
        let jac = b.jacobian(&x).unwrap();
        for d in 0..3 {
            assert_eq!(b.partial(&x, d).unwrap(), jac.column(d).into_owned());
        }
        assert!(matches!(
            b.partial(&x, 3),
            Err(Error::CoordinateOutOfRange { coord: 4, dim: 3 })
        ));
    }

    #[test]
    fn non_finite_input_rejected() {
        let b = Basis::build(Structure::Dense, 2, 2, UnivariateFamily::Hermite).unwrap();
        assert!(matches!(b.eval(&[f64::NAN, 0.0]), Err(Error::NonFinite { .. })));
        assert!(b.jacobian(&[0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn linear_term_lookup() {
        let s = MultiIndexSet::new(Structure::Kr, 3, 2).unwrap();
        for a in 0..3 {
            let k = s.linear_term(a).unwrap();
            let mut e = vec![0; 3];
            e[a] = 1;
            assert_eq!(s.indices()[k], e);
            assert!(k < s.row_sizes()[a]);
        }
        assert_eq!(MultiIndexSet::new(Structure::Kr, 2, 0).unwrap().linear_term(0), None);
    }
}
