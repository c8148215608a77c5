//! The tailored Gaussian proposal for the marginal particle filter.
//!
//! Per observation the construction runs three steps: approximate the
//! coefficient prior by a Gaussian, Laplace-approximate the posterior of
//! the low-dimensional linear predictors, and push the updated predictor
//! moments back to coefficient space through the conditional-Gaussian
//! identities. Batches iterate the three steps over their observations in
//! stored temporal order, feeding each updated moment pair back in as the
//! next prior.

use nalgebra::{DMatrix, DVector};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::filter::{DataBatch, ParticleSet};
use crate::gaussian::{
    laplace_rho_posterior_iterated, symmetrize, GaussianMoments, SpdFactor,
};
use crate::mixture::{DesignMatrix, MixtureSpec};
use crate::rng::RngStream;

/// Knobs of the proposal construction.
#[derive(Debug, Clone, Copy)]
pub struct ProposalOptions {
    /// Newton steps in the Laplace approximation; 1 expands at the prior
    /// mean.
    pub newton_steps: usize,
    /// Covariance inflation factor (>= 1) guarding against proposal
    /// under-dispersion.
    pub scale: f64,
}

impl Default for ProposalOptions {
    fn default() -> Self {
        ProposalOptions { newton_steps: 1, scale: 1.0 }
    }
}

impl ProposalOptions {
    fn validate(&self) -> Result<()> {
        if self.newton_steps == 0 {
            return Err(Error::invalid("newton_steps must be at least 1"));
        }
        if !(self.scale >= 1.0 && self.scale.is_finite()) {
            return Err(Error::invalid(format!("proposal scale must be >= 1, got {}", self.scale)));
        }
        Ok(())
    }
}

/// A Gaussian proposal with a stored Cholesky factor for sampling and
/// density evaluation. Sampling and evaluation use the same factor, so a
/// drawn point always has a finite density under the proposal.
#[derive(Debug, Clone)]
pub struct ProposalDistribution {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    lower: DMatrix<f64>,
    log_norm_const: f64,
}

impl ProposalDistribution {
    /// Wrap Gaussian moments, factoring (and if necessary repairing) the
    /// covariance.
    pub fn from_moments(moments: &GaussianMoments) -> Result<Self> {
        let factor = SpdFactor::factor(moments.cov())?;
        let d = moments.dim() as f64;
        let log_norm_const =
            -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + factor.log_det());
        Ok(ProposalDistribution {
            mean: moments.mean().clone(),
            cov: factor.reconstruct(),
            lower: factor.lower().clone(),
            log_norm_const,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// The effective covariance (after any repair), `L L'`.
    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Draw `count` independent coefficient vectors.
    pub fn sample(&self, rng: &mut RngStream, count: usize) -> Vec<DVector<f64>> {
        let d = self.dim();
        (0..count)
            .map(|_| {
                let z = DVector::from_fn(d, |_, _| rand::Rng::sample(rng, StandardNormal));
                &self.mean + &self.lower * z
            })
            .collect()
    }

    /// Multivariate normal log density at `gamma`.
    pub fn log_density(&self, gamma: &DVector<f64>) -> f64 {
        let diff = gamma - &self.mean;
        let whitened = self
            .lower
            .solve_lower_triangular(&diff)
            .expect("stored factor has a positive diagonal");
        self.log_norm_const - 0.5 * whitened.norm_squared()
    }
}

/// Push a Gaussian coefficient prior through the per-observation update of
/// a whole batch, returning the updated coefficient moments.
///
/// This is the moment recursion behind [`build_proposal`]; it is exposed
/// separately because with a Gaussian component it is exactly the Kalman
/// measurement update, which the oracle tests exploit.
pub fn propagate_moments(
    spec: &MixtureSpec,
    prior: &GaussianMoments,
    batch: &DataBatch,
    options: &ProposalOptions,
) -> Result<GaussianMoments> {
    options.validate()?;
    if prior.dim() != spec.coefficient_dim() {
        return Err(Error::invalid(format!(
            "prior dimension {} does not match coefficient dimension {}",
            prior.dim(),
            spec.coefficient_dim()
        )));
    }
    let mut mean = prior.mean().clone();
    let mut cov = prior.cov().clone();
    for i in 0..batch.len() {
        let design = DesignMatrix::new(spec, batch.x_row(i), batch.z_row(i))?;
        let w = design.matrix();
        let rho_bar = w * &mean;
        let cross = &cov * w.transpose(); // Sigma_gamma W', d x r
        let mut sigma_rho = w * &cross;
        symmetrize(&mut sigma_rho);

        let rho_prior = GaussianMoments::new(rho_bar.clone(), sigma_rho.clone())?;
        let posterior =
            laplace_rho_posterior_iterated(spec, batch.response(i), &rho_prior, options.newton_steps)?;

        let factor = SpdFactor::factor(&sigma_rho)?;
        // mu = gamma_bar + Sigma_{gamma rho} Sigma_rho^{-1} (E[rho|D] - rho_bar)
        mean += &cross * factor.solve_vector(&(&posterior.mean - &rho_bar));
        // H = Sigma_gamma - Sigma_{gamma rho} (Sigma_rho^{-1}
        //       - Sigma_rho^{-1} V Sigma_rho^{-1}) Sigma_{rho gamma}
        let a = factor.solve_matrix(&cross.transpose()); // Sigma_rho^{-1} Sigma_{rho gamma}, r x d
        cov = &cov - &cross * &a + a.transpose() * &posterior.cov * &a;
        symmetrize(&mut cov);
    }
    GaussianMoments::new(mean, cov)
}

/// Build the proposal for one time step from the previous particle cloud,
/// the state-noise covariance and the incoming data batch.
pub fn build_proposal(
    spec: &MixtureSpec,
    particles: &ParticleSet,
    state_noise: &DMatrix<f64>,
    batch: &DataBatch,
    options: &ProposalOptions,
) -> Result<ProposalDistribution> {
    let prior = particles.prior_moments(state_noise)?;
    let mut moments = propagate_moments(spec, &prior, batch, options)?;
    if options.scale != 1.0 {
        moments = GaussianMoments::new(moments.mean().clone(), moments.cov() * options.scale)?;
    }
    ProposalDistribution::from_moments(&moments)
}
