//! Polynomial transport maps fitted by consensus ADMM.
//!
//! A map `S(x) = W Phi(x)` pushes samples of a reference distribution onto a
//! target density known up to a constant. [`admm`] fits a single map,
//! [`composer`] chains low-order maps, and [`apps`] wires this into Bayesian
//! regression.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admm;
pub mod apps;
pub mod basis;
pub mod composer;
pub mod density;
pub mod error;
pub mod io;
pub mod map;
mod qp;
pub mod samples;
pub mod stats;

pub use admm::{fit_map, FitResult, IterationRecord, Reduction, SolverConfig};
pub use basis::{Basis, MultiIndexSet, Structure, UnivariateFamily};
pub use composer::{fit_sequential, ComposerConfig, SequentialFit, StageRecord, ThetaSchedule};
pub use density::{
    bayes_lasso_posterior, BayesPosterior, GaussianTarget, LaplacePrior, LinearGaussianLikelihood, TargetDensity,
};
pub use error::{Error, Result};
pub use map::{InvertOptions, MonotonicityReport, SequentialMap, TransportMap};
pub use samples::Samples;
