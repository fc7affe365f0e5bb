//! Primal active-set method for small dense convex QPs
//! `min 1/2 w'Hw + c'w  s.t.  A w >= b`, started from a feasible point.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub(crate) struct InequalityQp<'a> {
    pub hessian: &'a DMatrix<f64>,
    pub linear: &'a DVector<f64>,
    pub constraints: &'a DMatrix<f64>,
    pub bounds: &'a DVector<f64>,
}

impl InequalityQp<'_> {
    pub fn solve(&self, start: DVector<f64>, max_iters: usize) -> Result<DVector<f64>> {
        let n = start.len();
        let m = self.constraints.nrows();
        let mut w = start;
        let slack = |w: &DVector<f64>, i: usize| self.constraints.row(i).dot(&w.transpose()) - self.bounds[i];
        let feas_tol = 1e-12 * (1.0 + self.bounds.amax());
        if (0..m).any(|i| slack(&w, i) < -feas_tol) {
            return Err(Error::Projection("starting point is infeasible".into()));
        }
        let mut working: Vec<usize> = (0..m).filter(|&i| slack(&w, i).abs() <= feas_tol).collect();
        // Keep the initial working set linearly independent.
        working.truncate(n.saturating_sub(1));

        for _ in 0..max_iters {
            let g = self.hessian * &w + self.linear;
            let (step, mult) = self.solve_eqp(&g, &working)?;
            let scale = 1.0 + w.amax();
            if step.amax() <= 1e-13 * scale {
                match mult
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .filter(|(_, &mu)| mu < -1e-12 * (1.0 + g.amax()))
                {
                    None => return Ok(w),
                    Some((pos, _)) => {
                        working.remove(pos);
                        continue;
                    }
                }
            }
            let mut alpha = 1.0;
            let mut blocking = None;
            for i in 0..m {
                if working.contains(&i) {
                    continue;
                }
                let row = self.constraints.row(i);
                let ap = row.dot(&step.transpose());
                if ap < -1e-14 * row.norm() * step.norm() {
                    let t = (-slack(&w, i)).min(0.0) / ap;
                    let t = t.max(0.0);
                    if t < alpha {
                        alpha = t;
                        blocking = Some(i);
                    }
                }
            }
            w += alpha * &step;
            if let Some(i) = blocking {
                working.push(i);
            }
        }
        Err(Error::NoConvergence {
            what: "monotone projection QP",
            iterations: max_iters,
        })
    }

    // Equality-constrained step: min 1/2 p'Hp + g'p s.t. A_W p = 0.
    fn solve_eqp(&self, g: &DVector<f64>, working: &[usize]) -> Result<(DVector<f64>, Vec<f64>)> {
        let n = g.len();
        let k = working.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(self.hessian);
        for (r, &i) in working.iter().enumerate() {
            for c in 0..n {
                let a = self.constraints[(i, c)];
                kkt[(n + r, c)] = a;
                kkt[(c, n + r)] = -a;
            }
        }
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-g));
        let sol = kkt
            .full_piv_lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Projection("singular KKT system".into()))?;
        Ok((sol.rows(0, n).into_owned(), sol.rows(n, k).iter().copied().collect()))
    }
}
