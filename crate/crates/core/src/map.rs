//! Polynomial transport maps `S(x) = W Phi(x)` and their sequential compositions.

use nalgebra::{DMatrix, DVector};

use crate::basis::{Basis, Structure};
use crate::error::{Error, Result};
use crate::qp::InequalityQp;
use crate::samples::Samples;

/// Root-finder settings for inverting triangular maps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InvertOptions {
    /// Target `|S(x) - y|` per coordinate.
    pub tol: f64,
    /// Bracket expansion gives up once an endpoint exceeds this magnitude.
    pub max_bracket: f64,
    pub max_iters: usize,
}

impl Default for InvertOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_bracket: 1e6,
            max_iters: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ViolationKind {
    /// `dS^d/dx_d <= 0` at this 0-based coordinate.
    Coordinate(usize),
    /// The full Jacobian determinant is not positive.
    Determinant(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub index: usize,
    pub point: Vec<f64>,
    pub kind: ViolationKind,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MonotonicityReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransportMap {
    basis: Basis,
    weights: DMatrix<f64>,
    monotone_validated: bool,
}

impl TransportMap {
    /// Wraps a `D x K` weight matrix. Triangular structures must have zeros past
    /// `K_d` in row `d`.
    pub fn new(basis: Basis, weights: DMatrix<f64>) -> Result<Self> {
        let (d, k) = (basis.dim(), basis.len());
        if weights.nrows() != d {
            return Err(Error::DimensionMismatch {
                what: "weight rows",
                expected: d,
                found: weights.nrows(),
            });
        }
        if weights.ncols() != k {
            return Err(Error::DimensionMismatch {
                what: "weight columns",
                expected: k,
                found: weights.ncols(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite { what: "map weights" });
        }
        if let Some((row, col)) = structural_violation(&basis, &weights) {
            return Err(Error::invalid(format!(
                "weight ({row}, {col}) breaks the triangular structure of a {} map",
                basis.set().structure()
            )));
        }
        Ok(Self {
            basis,
            weights,
            monotone_validated: false,
        })
    }

    /// The identity map, using the degree-one term of each coordinate.
    pub fn identity(basis: Basis) -> Result<Self> {
        let weights = identity_weights(&basis)?;
        Self::new(basis, weights)
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn structure(&self) -> Structure {
        self.basis.set().structure()
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn monotone_validated(&self) -> bool {
        self.monotone_validated
    }

    pub(crate) fn set_monotone_validated(&mut self, v: bool) {
        self.monotone_validated = v;
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "map input",
                expected: self.dim(),
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "map input" });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_point(x)?;
        let phi = self.basis.eval(x)?;
        Ok(&self.weights * phi)
    }

    /// `W J_Phi(x)`, the `D x D` Jacobian of the map.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        Ok(&self.weights * self.basis.eval_with_jacobian(x).1)
    }

    /// `dS^d/dx_d` for every `d`.
    pub fn diagonal_partials(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_point(x)?;
        let k = self.basis.len();
        let mut buf = vec![0.0; k];
        let mut out = DVector::zeros(self.dim());
        for d in 0..self.dim() {
            self.basis.partial_into(x, d, &mut buf);
            out[d] = self.weights.row(d).iter().zip(&buf).map(|(w, p)| w * p).sum();
        }
        Ok(out)
    }

    /// `log det J_S(x)`. Triangular maps use the sum of log diagonal partials,
    /// dense maps the determinant of `W J_Phi(x)`.
    pub fn log_det_jacobian(&self, x: &[f64]) -> Result<f64> {
        if self.structure().is_triangular() {
            let diag = self.diagonal_partials(x)?;
            let mut acc = 0.0;
            for (d, &v) in diag.iter().enumerate() {
                if !(v > 0.0) {
                    return Err(Error::NonMonotoneAtPoint {
                        point: x.to_vec(),
                        detail: format!("dS^{0}/dx_{0} = {v}", d + 1),
                    });
                }
                acc += v.ln();
            }
            Ok(acc)
        } else {
            self.log_det_full(x)
        }
    }

    /// Determinant route for any structure.
    pub fn log_det_full(&self, x: &[f64]) -> Result<f64> {
        let jac = self.jacobian(x)?;
        let det = jac.lu().determinant();
        if !(det > 0.0) {
            return Err(Error::NonMonotoneAtPoint {
                point: x.to_vec(),
                detail: format!("det J = {det}"),
            });
        }
        Ok(det.ln())
    }

    /// Inverts a triangular map one coordinate at a time.
    pub fn invert(&self, y: &[f64], opts: &InvertOptions) -> Result<DVector<f64>> {
        if !self.structure().is_triangular() {
            return Err(Error::UnsupportedStructure("dense"));
        }
        self.check_point(y)?;
        let dim = self.dim();
        let mut x = vec![0.0; dim];
        for d in 0..dim {
            x[d] = self.solve_coordinate(&mut x, d, y[d], y[d], opts)?;
        }
        Ok(DVector::from_vec(x))
    }

    fn solve_coordinate(&self, x: &mut [f64], d: usize, target: f64, start: f64, opts: &InvertOptions) -> Result<f64> {
        let kd = self.basis.set().row_sizes()[d];
        let row = self.weights.row(d);
        let mut vals = vec![0.0; kd];
        let mut ders = vec![0.0; kd];
        let mut eval = |x: &mut [f64], t: f64| -> (f64, f64) {
            x[d] = t;
            self.basis.eval_prefix_with_partial(x, d, &mut vals, &mut ders);
            let mut s = 0.0;
            let mut ds = 0.0;
            for k in 0..kd {
                s += row[k] * vals[k];
                ds += row[k] * ders[k];
            }
            (s - target, ds)
        };

        let (g0, _) = eval(x, start);
        if !g0.is_finite() {
            return Err(Error::NonFinite {
                what: "map value during inversion",
            });
        }
        if g0.abs() <= opts.tol {
            return Ok(start);
        }
        // Expand away from `start` until the residual changes sign.
        let dir = if g0 < 0.0 { 1.0 } else { -1.0 };
        let mut near = start;
        let mut step = 1.0f64.max(start.abs() * 1e-3);
        let far = loop {
            let t = start + dir * step;
            if t.abs() > opts.max_bracket {
                return Err(Error::BracketNotFound {
                    coord: d + 1,
                    limit: opts.max_bracket,
                });
            }
            let (g, _) = eval(x, t);
            if g.abs() <= opts.tol {
                return Ok(t);
            }
            if g.signum() != g0.signum() {
                break t;
            }
            near = t;
            step *= 2.0;
        };
        // `lo` has negative residual, `hi` positive.
        let (mut lo, mut hi) = if g0 < 0.0 { (near, far) } else { (far, near) };
        let mut t = 0.5 * (lo + hi);
        let mut best = (f64::INFINITY, t);
        for _ in 0..opts.max_iters {
            let (g, dg) = eval(x, t);
            if g.abs() < best.0 {
                best = (g.abs(), t);
            }
            if g.abs() <= opts.tol {
                return Ok(t);
            }
            if g < 0.0 {
                lo = t;
            } else {
                hi = t;
            }
            let width = (hi - lo).abs();
            if width <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()).max(1.0) {
                // Bracket collapsed to adjacent floats: residual is at rounding level.
                return Ok(best.1);
            }
            let newton = t - g / dg;
            let (a, b) = if lo < hi { (lo, hi) } else { (hi, lo) };
            t = if dg > 0.0 && newton > a && newton < b {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        Err(Error::NoConvergence {
            what: "coordinate root finding",
            iterations: opts.max_iters,
        })
    }

    /// Checks `dS^d/dx_d > 0` (triangular) or `det J_S > 0` (dense) at each point.
    pub fn check_monotonicity(&self, points: &Samples) -> MonotonicityReport {
        let mut violations = Vec::new();
        for (i, p) in points.rows().enumerate() {
            if self.structure().is_triangular() {
                match self.diagonal_partials(p) {
                    Ok(diag) => {
                        for (d, &v) in diag.iter().enumerate() {
                            if !(v > 0.0) {
                                violations.push(Violation {
                                    index: i,
                                    point: p.to_vec(),
                                    kind: ViolationKind::Coordinate(d),
                                });
                            }
                        }
                    }
                    Err(_) => violations.push(Violation {
                        index: i,
                        point: p.to_vec(),
                        kind: ViolationKind::Determinant(f64::NAN),
                    }),
                }
            } else {
                let det = self.jacobian(p).map(|j| j.lu().determinant()).unwrap_or(f64::NAN);
                if !(det > 0.0) {
                    violations.push(Violation {
                        index: i,
                        point: p.to_vec(),
                        kind: ViolationKind::Determinant(det),
                    });
                }
            }
        }
        MonotonicityReport {
            ok: violations.is_empty(),
            violations,
        }
    }

    /// Runs [`Self::check_monotonicity`] and records the outcome on the map.
    pub fn validate_monotone(&mut self, points: &Samples) -> MonotonicityReport {
        let report = self.check_monotonicity(points);
        self.monotone_validated = report.ok;
        report
    }

    /// Least-squares projection of a triangular map onto maps with
    /// `dS^d/dx_d >= margin` at every supplied point. Monotonicity is enforced
    /// only at those points.
    pub fn project_monotone(&self, points: &Samples, margin: f64) -> Result<TransportMap> {
        if !self.structure().is_triangular() {
            return Err(Error::UnsupportedStructure("dense"));
        }
        if points.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "projection points",
                expected: self.dim(),
                found: points.dim(),
            });
        }
        if points.is_empty() {
            return Err(Error::Empty("projection points"));
        }
        if !(margin > 0.0) {
            return Err(Error::invalid(format!(
                "projection margin must be positive, got {margin}"
            )));
        }
        let set = self.basis.set();
        let n = points.len();
        let mut weights = self.weights.clone();
        for d in 0..self.dim() {
            let kd = set.row_sizes()[d];
            let mut design = DMatrix::zeros(n, kd);
            let mut cons = DMatrix::zeros(n, kd);
            let mut vals = vec![0.0; kd];
            let mut ders = vec![0.0; kd];
            for (p, x) in points.rows().enumerate() {
                self.basis.eval_prefix_with_partial(x, d, &mut vals, &mut ders);
                for k in 0..kd {
                    design[(p, k)] = vals[k];
                    cons[(p, k)] = ders[k];
                }
            }
            let w0 = self.weights.row(d).columns(0, kd).transpose();
            let bounds = DVector::from_element(n, margin);
            if (&cons * &w0).iter().all(|&v| v >= margin) {
                continue;
            }
            let mut hessian = design.transpose() * &design;
            // Ridge toward w0 keeps the problem strictly convex without moving its minimizer.
            let ridge = 1e-10 * (hessian.trace() / kd as f64).max(1.0);
            for k in 0..kd {
                hessian[(k, k)] += ridge;
            }
            let linear = -(&hessian * &w0);
            let lin = set
                .linear_term(d)
                .ok_or_else(|| Error::Projection("basis has no degree-one term".into()))?;
            let mut start = DVector::zeros(kd);
            start[lin] = 2.0 * margin;
            let qp = InequalityQp {
                hessian: &hessian,
                linear: &linear,
                constraints: &cons,
                bounds: &bounds,
            };
            let w = qp.solve(start, 50 * (n + kd))?;
            weights.row_mut(d).columns_mut(0, kd).copy_from(&w.transpose());
        }
        let mut out = TransportMap::new(self.basis.clone(), weights)?;
        out.monotone_validated = out.check_monotonicity(points).ok;
        Ok(out)
    }
}

fn structural_violation(basis: &Basis, weights: &DMatrix<f64>) -> Option<(usize, usize)> {
    if !basis.set().structure().is_triangular() {
        return None;
    }
    for (d, &kd) in basis.set().row_sizes().iter().enumerate() {
        for k in kd..weights.ncols() {
            if weights[(d, k)] != 0.0 {
                return Some((d, k));
            }
        }
    }
    None
}

pub(crate) fn identity_weights(basis: &Basis) -> Result<DMatrix<f64>> {
    let mut w = DMatrix::zeros(basis.dim(), basis.len());
    for d in 0..basis.dim() {
        let k = basis
            .set()
            .linear_term(d)
            .ok_or_else(|| Error::invalid("order 0 basis cannot represent the identity map"))?;
        w[(d, k)] = 1.0;
    }
    Ok(w)
}

/// Per-stage bookkeeping of a fitted sequence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StageInfo {
    pub theta: f64,
    pub objective: f64,
    pub admm_iterations: usize,
}

/// `S_T o ... o S_1`, stage 1 applied first.
#[derive(Clone, Debug, PartialEq)]
pub struct SequentialMap {
    stages: Vec<TransportMap>,
    info: Vec<StageInfo>,
}

impl SequentialMap {
    pub fn new() -> Self {
        Self {
            stages: Vec::new(),
            info: Vec::new(),
        }
    }

    pub fn from_stages(stages: Vec<TransportMap>) -> Result<Self> {
        let mut seq = Self::new();
        for s in stages {
            seq.push(s, StageInfo::default())?;
        }
        Ok(seq)
    }

    pub fn push(&mut self, map: TransportMap, info: StageInfo) -> Result<()> {
        if let Some(first) = self.stages.first() {
            if first.dim() != map.dim() {
                return Err(Error::DimensionMismatch {
                    what: "stage dimension",
                    expected: first.dim(),
                    found: map.dim(),
                });
            }
        }
        self.stages.push(map);
        self.info.push(info);
        Ok(())
    }

    pub fn stages(&self) -> &[TransportMap] {
        &self.stages
    }

    pub fn info(&self) -> &[StageInfo] {
        &self.info
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.stages.first().map(TransportMap::dim)
    }

    pub fn forward(&self, x: &[f64]) -> Result<DVector<f64>> {
        if self.is_empty() {
            return Err(Error::Empty("sequential map stages"));
        }
        let mut cur = DVector::from_column_slice(x);
        for (t, s) in self.stages.iter().enumerate() {
            cur = s.forward(cur.as_slice()).map_err(|e| e.at_stage(t + 1))?;
        }
        Ok(cur)
    }

    /// Image of `x` and the accumulated `log det J` (chain rule over stages).
    pub fn forward_with_log_det(&self, x: &[f64]) -> Result<(DVector<f64>, f64)> {
        let mut cur = DVector::from_column_slice(x);
        let mut acc = 0.0;
        for (t, s) in self.stages.iter().enumerate() {
            acc += s.log_det_jacobian(cur.as_slice()).map_err(|e| e.at_stage(t + 1))?;
            cur = s.forward(cur.as_slice()).map_err(|e| e.at_stage(t + 1))?;
        }
        Ok((cur, acc))
    }

    pub fn compose_forward(&self, xs: &Samples) -> Result<Samples> {
        if self.is_empty() {
            return Err(Error::Empty("sequential map stages"));
        }
        let mut cur = xs.clone();
        for (t, s) in self.stages.iter().enumerate() {
            cur = push_forward(s, &cur).map_err(|e| e.at_stage(t + 1))?;
        }
        Ok(cur)
    }

    pub fn compose_inverse(&self, ys: &Samples, opts: &InvertOptions) -> Result<Samples> {
        if self.is_empty() {
            return Err(Error::Empty("sequential map stages"));
        }
        let mut cur = ys.clone();
        for (t, s) in self.stages.iter().enumerate().rev() {
            cur = pull_back(s, &cur, opts).map_err(|e| e.at_stage(t + 1))?;
        }
        Ok(cur)
    }
}

impl Default for SequentialMap {
    fn default() -> Self {
        Self::new()
    }
}

/// Applies `map` to every row.
pub fn push_forward(map: &TransportMap, xs: &Samples) -> Result<Samples> {
    if xs.dim() != map.dim() {
        return Err(Error::DimensionMismatch {
            what: "sample dimension",
            expected: map.dim(),
            found: xs.dim(),
        });
    }
    let mut out = Samples::empty(map.dim());
    for x in xs.rows() {
        out.push(map.forward(x)?.as_slice())?;
    }
    Ok(out)
}

/// Inverts `map` at every row.
pub fn pull_back(map: &TransportMap, ys: &Samples, opts: &InvertOptions) -> Result<Samples> {
    if ys.dim() != map.dim() {
        return Err(Error::DimensionMismatch {
            what: "sample dimension",
            expected: map.dim(),
            found: ys.dim(),
        });
    }
    let mut out = Samples::empty(map.dim());
    for y in ys.rows() {
        out.push(map.invert(y, opts)?.as_slice())?;
    }
    Ok(out)
}
