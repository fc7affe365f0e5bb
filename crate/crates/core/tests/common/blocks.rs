//! Augmented Lagrangians of both solvers, written out independently of the
//! solver code and differentiated numerically.

use nalgebra::{DMatrix, DVector};
use otmap::admm::{DenseSample, DenseState, KrSample, KrState, NewtonOptions};
use otmap::basis::{Basis, Structure, UnivariateFamily};
use otmap::density::{GaussianForm, GaussianTarget, SmoothTerms, TargetDensity};
use otmap::map::TransportMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const HUBER: f64 = 1e-6;

/// Smooth, log-concave and non-Gaussian: `-sum log cosh(u) - |u|^2 / 4`.
pub struct CoshTarget(pub usize);

impl TargetDensity for CoshTarget {
    fn dim(&self) -> usize {
        self.0
    }
    fn log_density(&self, u: &[f64]) -> f64 {
        u.iter().map(|v| -v.cosh().ln() - 0.25 * v * v).sum()
    }
    fn grad_log_density(&self, u: &[f64]) -> DVector<f64> {
        DVector::from_iterator(u.len(), u.iter().map(|v| -v.tanh() - 0.5 * v))
    }
    fn smooth_terms(&self, u: &[f64], _huber_width: f64) -> SmoothTerms {
        SmoothTerms {
            value: self.log_density(u),
            grad: self.grad_log_density(u),
            hess: DMatrix::from_diagonal(&DVector::from_iterator(
                u.len(),
                u.iter().map(|v| -(1.0 - v.tanh().powi(2)) - 0.5),
            )),
        }
    }
    fn gaussian_form(&self) -> Option<GaussianForm> {
        None
    }
}

/// Five-point central difference.
pub fn fd(f: impl Fn(f64) -> f64) -> f64 {
    let h = 1e-4;
    (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h)
}

pub fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| s * (2.0 * rng.random::<f64>() - 1.0))
}

pub fn rand_vec(rng: &mut ChaCha8Rng, n: usize, s: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| s * (2.0 * rng.random::<f64>() - 1.0))
}

fn rand_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = rand_mat(rng, n, n, 0.5);
    &a * a.transpose() + DMatrix::identity(n, n)
}

fn logdet_spd(z: &DMatrix<f64>) -> f64 {
    let c = z.clone().cholesky().expect("spd");
    2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(b).sum()
}

/// Weights with identity linear part plus a perturbation on allowed entries.
fn rand_weights(rng: &mut ChaCha8Rng, basis: &Basis) -> DMatrix<f64> {
    let mut b = TransportMap::identity(basis.clone()).unwrap().weights().clone();
    let sizes = basis.set().row_sizes();
    for d in 0..b.nrows() {
        for k in 0..sizes[d] {
            b[(d, k)] += 0.2 * (2.0 * rng.random::<f64>() - 1.0);
        }
    }
    b
}

fn dense_lagrangian(b: &DMatrix<f64>, samples: &[DenseSample], rho: f64, q: &dyn TargetDensity) -> f64 {
    let mut total = 0.0;
    for s in samples {
        let rp = &s.p - b * &s.phi;
        let rz = &s.z - b * &s.jac;
        let rw = &s.w - b;
        total += -q.smooth_terms(s.p.as_slice(), HUBER).value - logdet_spd(&s.z)
            + s.gamma.dot(&rp)
            + 0.5 * rho * rp.norm_squared()
            + inner(&s.lambda, &rz)
            + 0.5 * rho * rz.norm_squared()
            + inner(&s.alpha, &rw)
            + 0.5 * rho * rw.norm_squared();
    }
    total / samples.len() as f64
}

fn kr_lagrangian(b: &DMatrix<f64>, samples: &[KrSample], rho: f64, theta: f64, q: &dyn TargetDensity) -> f64 {
    let mut total = 0.0;
    for s in samples {
        let bphi = b * &s.phi;
        let rp = &s.p - &bphi;
        let ry = &s.y - b * &s.jac;
        let rw = &s.w - b;
        let rz = DVector::from_fn(s.zd.len(), |d, _| s.zd[d] - s.y[(d, d)]);
        total += theta * (&bphi - &s.x).norm_squared()
            - q.smooth_terms(s.p.as_slice(), HUBER).value
            - s.zd.iter().map(|z| z.ln()).sum::<f64>()
            + s.gamma.dot(&rp)
            + 0.5 * rho * rp.norm_squared()
            + inner(&s.lambda, &ry)
            + 0.5 * rho * ry.norm_squared()
            + s.beta.dot(&rz)
            + 0.5 * rho * rz.norm_squared()
            + inner(&s.alpha, &rw)
            + 0.5 * rho * rw.norm_squared();
    }
    total / samples.len() as f64
}

/// Largest deviations seen while checking one random state.
#[derive(Clone, Copy, Debug, Default)]
pub struct BlockReport {
    /// Largest |dL/dblock| right after that block's update.
    pub grad: f64,
    /// `|rho Z - Z^-1 - sym(M)|_F`.
    pub z_residual: f64,
    /// Scalar quadratic residual of `Z^d`.
    pub zd_residual: f64,
    /// Largest gap between a multiplier step and `rho dL/dmultiplier`.
    pub multiplier: f64,
    pub prox_failures: usize,
}

impl BlockReport {
    pub fn merge(&mut self, o: &BlockReport) {
        self.grad = self.grad.max(o.grad);
        self.z_residual = self.z_residual.max(o.z_residual);
        self.zd_residual = self.zd_residual.max(o.zd_residual);
        self.multiplier = self.multiplier.max(o.multiplier);
        self.prox_failures += o.prox_failures;
    }
}

pub fn dense_case(seed: u64, dim: usize, order: usize, n: usize, gaussian: bool) -> BlockReport {
    let mut rep = BlockReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = Basis::build(Structure::Dense, dim, order, UnivariateFamily::Hermite).unwrap();
    let k = basis.len();
    assert!(k <= 10);
    let rho = 0.5 + 1.5 * rng.random::<f64>();
    let b0 = rand_weights(&mut rng, &basis);
    let samples: Vec<DenseSample> = (0..n)
        .map(|i| {
            let x = rand_vec(&mut rng, dim, 1.5);
            let mut s = DenseSample::init(i, &basis, x.as_slice(), &b0, 1e-3).unwrap();
            s.w = &b0 + rand_mat(&mut rng, dim, k, 0.1);
            s.alpha = rand_mat(&mut rng, dim, k, 0.3);
            s.z = rand_spd(&mut rng, dim);
            s.lambda = rand_mat(&mut rng, dim, dim, 0.3);
            s.p = rand_vec(&mut rng, dim, 1.0);
            s.gamma = rand_vec(&mut rng, dim, 0.3);
            s
        })
        .collect();
    let q: Box<dyn TargetDensity> = if gaussian {
        Box::new(GaussianTarget::diagonal(vec![0.3; dim], vec![2.0; dim]).unwrap())
    } else {
        Box::new(CoshTarget(dim))
    };
    let mut st = DenseState::from_parts(basis, rho, b0, samples).unwrap();

    st.update_b();
    for d in 0..dim {
        for c in 0..k {
            let g = fd(|h| {
                let mut b = st.b.clone();
                b[(d, c)] += h;
                dense_lagrangian(&b, &st.samples, rho, q.as_ref())
            });
            rep.grad = rep.grad.max(g.abs());
        }
    }

    st.update_w();
    for i in 0..n {
        for d in 0..dim {
            for c in 0..k {
                let g = fd(|h| {
                    let mut ss = st.samples.clone();
                    ss[i].w[(d, c)] += h;
                    dense_lagrangian(&st.b, &ss, rho, q.as_ref())
                });
                rep.grad = rep.grad.max(g.abs());
            }
        }
    }

    st.update_z().unwrap();
    for i in 0..n {
        let m = &st.b * &st.samples[i].jac * rho - &st.samples[i].lambda;
        let sym = (&m + m.transpose()) * 0.5;
        let z = &st.samples[i].z;
        let res = z * rho - z.clone().try_inverse().unwrap() - sym;
        rep.z_residual = rep.z_residual.max(res.norm());
        for a in 0..dim {
            for c in a..dim {
                let g = fd(|h| {
                    let mut ss = st.samples.clone();
                    ss[i].z[(a, c)] += h;
                    if a != c {
                        ss[i].z[(c, a)] += h;
                    }
                    dense_lagrangian(&st.b, &ss, rho, q.as_ref())
                });
                rep.grad = rep.grad.max(g.abs());
            }
        }
    }

    let failed = st.update_p(q.as_ref(), NewtonOptions::default()).unwrap();
    rep.prox_failures += failed;
    for i in 0..n {
        for d in 0..dim {
            let g = fd(|h| {
                let mut ss = st.samples.clone();
                ss[i].p[d] += h;
                dense_lagrangian(&st.b, &ss, rho, q.as_ref())
            });
            rep.grad = rep.grad.max(g.abs());
        }
    }

    // Dual ascent moves each multiplier by rho times its Lagrangian gradient.
    let before = st.samples.clone();
    let grads: Vec<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> = (0..n)
        .map(|i| {
            let gg = DVector::from_fn(dim, |d, _| {
                fd(|h| {
                    let mut ss = before.clone();
                    ss[i].gamma[d] += h;
                    dense_lagrangian(&st.b, &ss, rho, q.as_ref())
                })
            });
            let gl = DMatrix::from_fn(dim, dim, |a, c| {
                fd(|h| {
                    let mut ss = before.clone();
                    ss[i].lambda[(a, c)] += h;
                    dense_lagrangian(&st.b, &ss, rho, q.as_ref())
                })
            });
            let ga = DMatrix::from_fn(dim, k, |a, c| {
                fd(|h| {
                    let mut ss = before.clone();
                    ss[i].alpha[(a, c)] += h;
                    dense_lagrangian(&st.b, &ss, rho, q.as_ref())
                })
            });
            (gg, gl, ga)
        })
        .collect();
    st.update_multipliers();
    let nf = n as f64;
    for i in 0..n {
        let (gg, gl, ga) = &grads[i];
        let s = &st.samples[i];
        let b = &before[i];
        rep.multiplier = rep.multiplier.max(((&s.gamma - &b.gamma) / rho - gg * nf).amax());
        rep.multiplier = rep.multiplier.max(((&s.lambda - &b.lambda) / rho - gl * nf).amax());
        rep.multiplier = rep.multiplier.max(((&s.alpha - &b.alpha) / rho - ga * nf).amax());
    }
    rep
}

pub fn kr_case(seed: u64, structure: Structure, dim: usize, order: usize, n: usize, gaussian: bool) -> BlockReport {
    let mut rep = BlockReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = Basis::build(structure, dim, order, UnivariateFamily::Hermite).unwrap();
    let k = basis.len();
    assert!(k <= 10);
    let sizes = basis.set().row_sizes().to_vec();
    let rho = 0.5 + 1.5 * rng.random::<f64>();
    let theta = rng.random::<f64>();
    let b0 = rand_weights(&mut rng, &basis);
    let samples: Vec<KrSample> = (0..n)
        .map(|i| {
            let x = rand_vec(&mut rng, dim, 1.5);
            let mut s = KrSample::init(i, &basis, x.as_slice(), &b0, 1e-3);
            s.w = &b0 + rand_mat(&mut rng, dim, k, 0.1);
            s.alpha = rand_mat(&mut rng, dim, k, 0.3);
            s.zd = DVector::from_fn(dim, |_, _| 0.5 + rng.random::<f64>());
            s.y = rand_mat(&mut rng, dim, dim, 1.0);
            s.beta = rand_vec(&mut rng, dim, 0.3);
            s.lambda = rand_mat(&mut rng, dim, dim, 0.3);
            s.p = rand_vec(&mut rng, dim, 1.0);
            s.gamma = rand_vec(&mut rng, dim, 0.3);
            s
        })
        .collect();
    let q: Box<dyn TargetDensity> = if gaussian {
        Box::new(GaussianTarget::diagonal(vec![-0.2; dim], vec![0.5; dim]).unwrap())
    } else {
        Box::new(CoshTarget(dim))
    };
    let mut st = KrState::from_parts(basis, theta, rho, b0, samples).unwrap();
    let lag = |b: &DMatrix<f64>, ss: &[KrSample]| kr_lagrangian(b, ss, rho, theta, q.as_ref());

    st.update_b();
    for d in 0..dim {
        for c in 0..k {
            if c >= sizes[d] {
                assert_eq!(st.b[(d, c)], 0.0, "structural zero");
                continue;
            }
            let g = fd(|h| {
                let mut b = st.b.clone();
                b[(d, c)] += h;
                lag(&b, &st.samples)
            });
            rep.grad = rep.grad.max(g.abs());
        }
    }

    st.update_w();
    for i in 0..n {
        for d in 0..dim {
            for c in 0..k {
                let g = fd(|h| {
                    let mut ss = st.samples.clone();
                    ss[i].w[(d, c)] += h;
                    lag(&st.b, &ss)
                });
                rep.grad = rep.grad.max(g.abs());
            }
        }
    }

    st.update_zd();
    for i in 0..n {
        for d in 0..dim {
            let s = &st.samples[i];
            let z = s.zd[d];
            let quad = rho * z * z + (s.beta[d] - rho * s.y[(d, d)]) * z - 1.0;
            rep.zd_residual = rep.zd_residual.max(quad.abs());
            assert!(z > 0.0);
            let g = fd(|h| {
                let mut ss = st.samples.clone();
                ss[i].zd[d] += h;
                lag(&st.b, &ss)
            });
            rep.grad = rep.grad.max(g.abs());
        }
    }

    st.update_y();
    for i in 0..n {
        for a in 0..dim {
            for c in 0..dim {
                let g = fd(|h| {
                    let mut ss = st.samples.clone();
                    ss[i].y[(a, c)] += h;
                    lag(&st.b, &ss)
                });
                rep.grad = rep.grad.max(g.abs());
            }
        }
    }

    let failed = st.update_p(q.as_ref(), NewtonOptions::default()).unwrap();
    rep.prox_failures += failed;
    for i in 0..n {
        for d in 0..dim {
            let g = fd(|h| {
                let mut ss = st.samples.clone();
                ss[i].p[d] += h;
                lag(&st.b, &ss)
            });
            rep.grad = rep.grad.max(g.abs());
        }
    }

    let before = st.samples.clone();
    let nf = n as f64;
    let grad_of = |i: usize, f: &dyn Fn(&mut KrSample, f64)| {
        fd(|h| {
            let mut ss = before.clone();
            f(&mut ss[i], h);
            lag(&st.b, &ss)
        }) * nf
    };
    let mut expected = Vec::new();
    for i in 0..n {
        let gg = DVector::from_fn(dim, |d, _| grad_of(i, &|s, h| s.gamma[d] += h));
        let gb = DVector::from_fn(dim, |d, _| grad_of(i, &|s, h| s.beta[d] += h));
        let gl = DMatrix::from_fn(dim, dim, |a, c| grad_of(i, &|s, h| s.lambda[(a, c)] += h));
        let ga = DMatrix::from_fn(dim, k, |a, c| grad_of(i, &|s, h| s.alpha[(a, c)] += h));
        expected.push((gg, gb, gl, ga));
    }
    st.update_multipliers();
    for i in 0..n {
        let (gg, gb, gl, ga) = &expected[i];
        let s = &st.samples[i];
        let b = &before[i];
        rep.multiplier = rep.multiplier.max(((&s.gamma - &b.gamma) / rho - gg).amax());
        rep.multiplier = rep.multiplier.max(((&s.beta - &b.beta) / rho - gb).amax());
        rep.multiplier = rep.multiplier.max(((&s.lambda - &b.lambda) / rho - gl).amax());
        rep.multiplier = rep.multiplier.max(((&s.alpha - &b.alpha) / rho - ga).amax());
    }
    rep
}
