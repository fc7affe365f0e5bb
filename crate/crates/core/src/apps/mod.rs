//! Bayesian LASSO regression by transport, with a Gibbs sampler as reference.

pub mod dataset;
pub mod gibbs;
pub mod lasso;
pub mod sampling;
pub mod summary;

pub use dataset::{load_regression_csv, read_regression_csv, RegressionDataset};
pub use gibbs::{gibbs_lasso, GibbsConfig};
pub use lasso::{bayes_lasso_transport, LassoFit, LassoTransportConfig};
pub use sampling::{sample_source, SourceKind};
pub use summary::{summarize_posterior, write_kde_dumps, write_summary, write_summary_csv, Method, PosteriorSummary};
