//! Sequential inference for dynamic mixture-of-experts models.
//!
//! A mixture of experts expresses the conditional density of a response as
//! a covariate-weighted sum of regression components; here both the
//! component coefficients and the gating coefficients follow random walks
//! across time intervals, with the walk variance set by a discount factor.
//! Filtering runs through a marginal particle filter whose proposal is a
//! Gaussian tailored per batch: the posterior of the low-dimensional linear
//! predictors is Laplace-approximated and its moments are propagated back
//! to coefficient space by Gaussian conditioning. The number of components
//! and the discount factor are chosen by the log predictive score.
//!
//! ```
//! use dynmoe::{
//!     dataset_spec, run_filter, log_predictive_score, simulate, DgpModel, DgpSpec,
//!     FilterConfig, GaussianMoments,
//! };
//!
//! let mut dgp = DgpSpec::new(DgpModel::M1, 7);
//! dgp.intervals = 3;
//! dgp.per_interval = 20;
//! let data = simulate(&dgp).unwrap();
//!
//! let spec = dataset_spec(1);
//! let config = FilterConfig::new(200, 0.99, 42).unwrap();
//! let prior = GaussianMoments::standard(spec.coefficient_dim());
//! let run = run_filter(&spec, &config, &prior, &data.batches, false).unwrap();
//! let lps = log_predictive_score(&run.records, 1).unwrap();
//! assert!(lps.is_finite());
//! ```

mod error;
pub mod evaluate;
pub mod filter;
pub mod gaussian;
pub mod mixture;
pub mod proposal;
pub mod rng;
pub mod simulate;
mod util;

pub use error::{Error, Result};
pub use evaluate::{
    default_score_window, log_predictive_score, model_selection_grid, posterior_summaries,
    predictive_density, weighted_hpd, CellFailure, CoefficientSummary, GridOutcome, ModelScore,
    PredictiveRecord,
};
pub use filter::{
    bootstrap_step, effective_sample_size, initialize, prior_mixture_log_densities,
    resample_systematic, run_bootstrap_filter, run_filter, state_noise_covariance, step,
    DataBatch, FilterConfig, FilterRun, ParticleSet,
};
pub use gaussian::{
    condition_on_linear, empirical_prior_moments, laplace_rho_posterior,
    laplace_rho_posterior_iterated, mixture_grad_hess_rho, GaussianMoments, RhoPosterior,
};
pub use mixture::{
    gating_derivatives, gating_weights, linear_predictors, log_gating_weights,
    mixture_log_density, poisson_derivatives, responsibilities, CoefficientVector,
    ComponentDensity, ComponentFamily, DesignMatrix, LinearPredictors, MixtureSpec,
};
pub use proposal::{build_proposal, propagate_moments, ProposalDistribution, ProposalOptions};
pub use rng::{derive_seed, stream, RngStream};
pub use simulate::{
    dataset_spec, run_replication_study, score_dataset, simulate, simulate_pair, DgpModel,
    DgpParams, DgpSpec, DgpStudy, PairOutcome, SimulatedDataset, StudyConfig, StudyReport,
};
