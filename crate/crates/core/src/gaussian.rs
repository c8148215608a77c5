//! Gaussian moment machinery behind the proposal: empirical prior moments
//! from weighted particles, conditioning on the linear predictor map, and
//! the Laplace approximation of the predictor posterior.
//!
//! All positive-definite factorizations go through [`SpdFactor`], which
//! applies one repair policy everywhere: symmetrize, retry Cholesky with a
//! diagonal jitter growing from 1e-10 to 1e-6, and as a last resort clip
//! slightly negative eigenvalues. Matrices that stay indefinite beyond
//! roundoff level are reported as singular rather than silently flipped.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::mixture::{
    gating_derivatives, responsibilities, ComponentDensity, DesignMatrix, LinearPredictors,
    MixtureSpec,
};

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;
const EIGEN_FLOOR: f64 = 1e-10;
/// Relative magnitude below which a negative eigenvalue counts as roundoff.
const INDEFINITE_TOL: f64 = 1e-6;

/// A mean vector and symmetric covariance matrix.
///
/// The covariance is symmetrized on construction; positive semi-definiteness
/// is enforced lazily, by the repair policy, whenever a factorization is
/// taken.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianMoments {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != cov.ncols() {
            return Err(Error::invalid("covariance matrix must be square"));
        }
        if cov.nrows() != mean.len() {
            return Err(Error::invalid(format!(
                "mean has dimension {}, covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) || cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite entry in Gaussian moments"));
        }
        let mut cov = cov;
        symmetrize(&mut cov);
        Ok(GaussianMoments { mean, cov })
    }

    /// Standard normal moments `N(0, I_d)`.
    pub fn standard(dim: usize) -> Self {
        GaussianMoments { mean: DVector::zeros(dim), cov: DMatrix::identity(dim, dim) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }
}

/// Moments of the linear-predictor posterior from the Laplace step.
#[derive(Debug, Clone)]
pub struct RhoPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Cholesky factorization with the crate-wide repair policy.
pub(crate) struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    lower: DMatrix<f64>,
    log_det: f64,
}

impl SpdFactor {
    pub(crate) fn factor(matrix: &DMatrix<f64>) -> Result<Self> {
        let sym = match SpdFactor::factor_strict(matrix) {
            Ok(factor) => return Ok(factor),
            Err(Error::Singular(_)) if matrix.iter().all(|v| v.is_finite()) => {
                let mut sym = matrix.clone();
                symmetrize(&mut sym);
                sym
            }
            Err(e) => return Err(e),
        };

        // Jitter was not enough: clip eigenvalues, but refuse genuinely
        // indefinite input.
        let eigen = sym.clone().symmetric_eigen();
        let scale = eigen.eigenvalues.iter().fold(1.0_f64, |a, &v| a.max(v.abs()));
        let min = eigen.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -INDEFINITE_TOL * scale {
            return Err(Error::Singular(format!(
                "matrix is indefinite beyond repair (min eigenvalue {min:.3e})"
            )));
        }
        let clipped = DVector::from_iterator(
            eigen.eigenvalues.len(),
            eigen.eigenvalues.iter().map(|&v| v.max(EIGEN_FLOOR)),
        );
        let mut rebuilt =
            &eigen.eigenvectors * DMatrix::from_diagonal(&clipped) * eigen.eigenvectors.transpose();
        symmetrize(&mut rebuilt);
        Cholesky::new(rebuilt)
            .map(SpdFactor::from_cholesky)
            .ok_or_else(|| Error::Singular("eigenvalue clipping failed to produce SPD".into()))
    }

    /// Cholesky with symmetrization and jitter only, no eigenvalue
    /// clipping. Appropriate for precision-like matrices, where clipping a
    /// near-zero eigenvalue would explode the implied variance.
    pub(crate) fn factor_strict(matrix: &DMatrix<f64>) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("non-finite entry in matrix".into()));
        }
        let mut sym = matrix.clone();
        symmetrize(&mut sym);

        if let Some(chol) = Cholesky::new(sym.clone()) {
            return Ok(SpdFactor::from_cholesky(chol));
        }
        let mut jitter = JITTER_START;
        while jitter <= JITTER_MAX {
            let mut jittered = sym.clone();
            for i in 0..jittered.nrows() {
                jittered[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(jittered) {
                return Ok(SpdFactor::from_cholesky(chol));
            }
            jitter *= 2.0;
        }
        Err(Error::Singular("matrix is not positive definite after jitter".into()))
    }

    fn from_cholesky(chol: Cholesky<f64, Dyn>) -> Self {
        let lower = chol.l();
        let log_det = 2.0 * lower.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        SpdFactor { chol, lower, log_det }
    }

    pub(crate) fn log_det(&self) -> f64 {
        self.log_det
    }

    pub(crate) fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    /// Solve `A x = b`.
    pub(crate) fn solve_vector(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// Solve `A X = B` column-wise.
    pub(crate) fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// `A^{-1}` by solving against the identity, symmetrized.
    pub(crate) fn inverse(&self) -> DMatrix<f64> {
        let mut inv = self.chol.inverse();
        symmetrize(&mut inv);
        inv
    }

    /// Solve `L y = b` with the lower factor only (whitening transform).
    pub(crate) fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        self.lower
            .solve_lower_triangular(b)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// The effective matrix `L L'` this factor represents (equal to the
    /// input up to any repair applied).
    pub(crate) fn reconstruct(&self) -> DMatrix<f64> {
        let mut m = &self.lower * self.lower.transpose();
        symmetrize(&mut m);
        m
    }
}

/// Weighted mean and scatter (weighted outer-product covariance about the
/// mean) of a particle cloud. Weights must be normalized.
pub(crate) fn weighted_mean_scatter(
    particles: &[DVector<f64>],
    weights: &[f64],
) -> (DVector<f64>, DMatrix<f64>) {
    let dim = particles[0].len();
    let mut mean = DVector::zeros(dim);
    for (p, &w) in particles.iter().zip(weights) {
        mean.axpy(w, p, 1.0);
    }
    let mut scatter = DMatrix::zeros(dim, dim);
    let mut centered = DVector::zeros(dim);
    for (p, &w) in particles.iter().zip(weights) {
        centered.copy_from(p);
        centered -= &mean;
        scatter.ger(w, &centered, &centered, 1.0);
    }
    symmetrize(&mut scatter);
    (mean, scatter)
}

/// Gaussian approximation of the one-step-ahead coefficient prior: the
/// weighted particle mean, and the state-noise covariance plus the weighted
/// scatter about the mean.
pub fn empirical_prior_moments(
    particles: &[DVector<f64>],
    weights: &[f64],
    state_noise: &DMatrix<f64>,
) -> Result<GaussianMoments> {
    if particles.is_empty() {
        return Err(Error::invalid("empty particle set"));
    }
    if particles.len() != weights.len() {
        return Err(Error::invalid("particles and weights differ in length"));
    }
    let dim = particles[0].len();
    if state_noise.nrows() != dim || state_noise.ncols() != dim {
        return Err(Error::invalid(format!(
            "state noise is {}x{}, particles have dimension {dim}",
            state_noise.nrows(),
            state_noise.ncols()
        )));
    }
    let (mean, scatter) = weighted_mean_scatter(particles, weights);
    GaussianMoments::new(mean, state_noise + scatter)
}

/// Condition a Gaussian prior on the exact linear constraint
/// `rho = W gamma`.
///
/// Returns the conditional mean and covariance; the covariance is
/// annihilated along the rows of `W`.
pub fn condition_on_linear(
    prior: &GaussianMoments,
    design: &DesignMatrix,
    rho: &DVector<f64>,
) -> Result<GaussianMoments> {
    let w = design.matrix();
    if w.ncols() != prior.dim() {
        return Err(Error::invalid(format!(
            "design matrix has {} columns, prior dimension is {}",
            w.ncols(),
            prior.dim()
        )));
    }
    if rho.len() != w.nrows() {
        return Err(Error::invalid("constraint vector does not match design rows"));
    }
    let cross = prior.cov() * w.transpose(); // Sigma_gamma W', d x r
    let mut sigma_rho = w * &cross;
    symmetrize(&mut sigma_rho);
    let factor = SpdFactor::factor(&sigma_rho)?;

    let rho_bar = w * prior.mean();
    let mean = prior.mean() + &cross * factor.solve_vector(&(rho - rho_bar));
    // V = Sigma_gamma - Sigma_{gamma rho} Sigma_rho^{-1} Sigma_{rho gamma}
    let solved = factor.solve_matrix(&cross.transpose()); // r x d
    let mut cov = prior.cov() - &cross * solved;
    symmetrize(&mut cov);
    GaussianMoments::new(mean, cov)
}

/// Derivatives of the mixture log likelihood `log sum_k exp(pi_k)` in the
/// stacked predictor, where `pi_k = log omega_k + log f_k`.
pub(crate) struct LikelihoodDerivatives {
    pub(crate) grad: DVector<f64>,
    /// The exact Hessian, including the score-covariance term
    /// `sum_k r_k grad pi_k grad pi_k' - g g'` (which vanishes for K = 1
    /// and under a flat likelihood but not in general).
    pub(crate) hess: DMatrix<f64>,
    /// The responsibility-weighted curvature `sum_k r_k grad grad pi_k`
    /// alone. For the built-in families it is negative semi-definite, so
    /// it always yields a proper Gaussian; the Laplace step falls back to
    /// it when the exact Hessian loses definiteness far from the mode.
    pub(crate) hess_gauss_newton: DMatrix<f64>,
}

/// The eta and psi parts of each `pi_k` enter additively, so each per-
/// component term couples its own eta entry with the shared psi block.
pub(crate) fn likelihood_grad_hess(
    spec: &MixtureSpec,
    y: f64,
    predictors: &LinearPredictors,
) -> Result<LikelihoodDerivatives> {
    let k = spec.components();
    let r = spec.predictor_dim();
    let resp = responsibilities(spec, y, predictors)?;
    let family = spec.family();
    let omega = crate::mixture::gating_weights(&predictors.psi)?;

    // Per-component score vectors grad pi_k.
    let mut scores: Vec<DVector<f64>> = Vec::with_capacity(k);
    for component in 0..k {
        let mut score = DVector::zeros(r);
        score[component] = family.d_log_density(y, predictors.eta[component]);
        for h in 0..k - 1 {
            let indicator = if component == h + 1 { 1.0 } else { 0.0 };
            score[k + h] = indicator - omega[h + 1];
        }
        scores.push(score);
    }

    let mut grad = DVector::zeros(r);
    for component in 0..k {
        grad.axpy(resp[component], &scores[component], 1.0);
    }

    // sum_k r_k grad grad pi_k: per-component curvature on the eta diagonal
    // plus the shared gating Hessian on the psi block.
    let mut gauss_newton = DMatrix::zeros(r, r);
    for component in 0..k {
        gauss_newton[(component, component)] =
            resp[component] * family.d2_log_density(y, predictors.eta[component]);
    }
    if k > 1 {
        let (_, gate_hess) = gating_derivatives(0, &predictors.psi)?;
        for h in 0..k - 1 {
            for l in 0..k - 1 {
                gauss_newton[(k + h, k + l)] = gate_hess[(h, l)];
            }
        }
    }
    // Score-covariance term of the log-sum-exp Hessian.
    let mut hess = gauss_newton.clone();
    for component in 0..k {
        hess.ger(resp[component], &scores[component], &scores[component], 1.0);
    }
    hess.ger(-1.0, &grad, &grad, 1.0);
    symmetrize(&mut hess);
    Ok(LikelihoodDerivatives { grad, hess, hess_gauss_newton: gauss_newton })
}

/// Gradient and Hessian of `log p(rho | D)` at `rho`, combining the
/// responsibility-weighted component terms with the Gaussian prior part.
pub fn mixture_grad_hess_rho(
    spec: &MixtureSpec,
    y: f64,
    rho: &DVector<f64>,
    rho_bar: &DVector<f64>,
    sigma_rho: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let r = spec.predictor_dim();
    if rho.len() != r || rho_bar.len() != r || sigma_rho.nrows() != r || sigma_rho.ncols() != r {
        return Err(Error::invalid(format!("expected stacked predictor dimension {r}")));
    }
    let predictors = LinearPredictors::from_stacked(rho, spec.components())?;
    let derivatives = likelihood_grad_hess(spec, y, &predictors)?;
    let factor = SpdFactor::factor(sigma_rho)?;
    let grad = derivatives.grad - factor.solve_vector(&(rho - rho_bar));
    let hess = derivatives.hess - factor.inverse();
    Ok((grad, hess))
}

/// Laplace approximation of the predictor posterior, expanded at the prior
/// mean (a single Newton-style update, per the default).
pub fn laplace_rho_posterior(
    spec: &MixtureSpec,
    y: f64,
    prior_rho: &GaussianMoments,
) -> Result<RhoPosterior> {
    laplace_rho_posterior_iterated(spec, y, prior_rho, 1)
}

/// Laplace approximation with an explicit Newton iteration count. The
/// default of one step expands at the prior mean; more steps move the
/// expansion point toward the mode.
pub fn laplace_rho_posterior_iterated(
    spec: &MixtureSpec,
    y: f64,
    prior_rho: &GaussianMoments,
    steps: usize,
) -> Result<RhoPosterior> {
    if steps == 0 {
        return Err(Error::invalid("at least one Newton step is required"));
    }
    if prior_rho.dim() != spec.predictor_dim() {
        return Err(Error::invalid(format!(
            "prior has dimension {}, spec requires {}",
            prior_rho.dim(),
            spec.predictor_dim()
        )));
    }
    let prior_factor = SpdFactor::factor(prior_rho.cov())?;
    let prior_precision = prior_factor.inverse();

    let mut rho = prior_rho.mean().clone();
    let mut cov = None;
    for _ in 0..steps {
        let predictors = LinearPredictors::from_stacked(&rho, spec.components())?;
        let derivatives = likelihood_grad_hess(spec, y, &predictors)?;
        let grad =
            &derivatives.grad - prior_factor.solve_vector(&(&rho - prior_rho.mean()));
        // The exact Hessian can lose definiteness far from the mode; the
        // Gauss-Newton curvature cannot, so fall back to it there.
        let factor = match SpdFactor::factor_strict(&(&prior_precision - &derivatives.hess)) {
            Ok(factor) => factor,
            Err(_) => {
                let neg_hess = &prior_precision - &derivatives.hess_gauss_newton;
                SpdFactor::factor_strict(&neg_hess).map_err(|e| {
                    Error::Singular(format!(
                        "posterior curvature is not negative definite: {e}"
                    ))
                })?
            }
        };
        rho += factor.solve_vector(&grad);
        cov = Some(factor.inverse());
    }
    let mut cov = cov.expect("at least one step ran");
    symmetrize(&mut cov);
    Ok(RhoPosterior { mean: rho, cov })
}
