//! The marginal particle filter: discount-factor state noise, tailored
//! proposal sampling, prior-mixture importance weights, ESS monitoring and
//! systematic resampling.
//!
//! Per-particle work (likelihoods, the O(M^2) prior-mixture numerator) runs
//! through [`crate::util::indexed_map`], which preserves index order, and
//! all reductions over particles walk that order sequentially, so a run is
//! bit-reproducible for a given seed with or without the `parallel`
//! feature.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::{predictive_density, PredictiveRecord};
use crate::gaussian::{weighted_mean_scatter, GaussianMoments, SpdFactor};
use crate::mixture::MixtureSpec;
use crate::proposal::{build_proposal, ProposalOptions};
use crate::rng::{stream, RngStream};
use crate::util::{indexed_map, log_sum_exp};

/// Filter configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Number of particles M.
    pub particles: usize,
    /// Discount factor in (0, 1); values of 0.95 and above behave as an
    /// essentially static model.
    pub alpha: f64,
    /// Resample when ESS drops below this fraction of M.
    pub ess_threshold_fraction: f64,
    /// Seed of the filter's random stream.
    pub seed: u64,
    /// Proposal covariance inflation factor (>= 1).
    pub proposal_scale: f64,
}

impl FilterConfig {
    pub fn new(particles: usize, alpha: f64, seed: u64) -> Result<Self> {
        let config = FilterConfig {
            particles,
            alpha,
            ess_threshold_fraction: 0.5,
            seed,
            proposal_scale: 1.0,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::invalid("particle count must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!(
                "discount factor must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.ess_threshold_fraction > 0.0 && self.ess_threshold_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "ESS threshold fraction must lie in (0, 1], got {}",
                self.ess_threshold_fraction
            )));
        }
        if !(self.proposal_scale >= 1.0 && self.proposal_scale.is_finite()) {
            return Err(Error::invalid(format!(
                "proposal scale must be >= 1, got {}",
                self.proposal_scale
            )));
        }
        Ok(())
    }

    fn proposal_options(&self) -> ProposalOptions {
        ProposalOptions { newton_steps: 1, scale: self.proposal_scale }
    }
}

/// One time interval of data: responses with their component and gating
/// covariate rows (raw values; intercepts are implicit).
///
/// A batch may be empty; the filter then advances the prior by pure
/// diffusion without a measurement update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataBatch {
    y: Vec<f64>,
    x_rows: Vec<Vec<f64>>,
    z_rows: Vec<Vec<f64>>,
    interval_index: usize,
}

impl DataBatch {
    pub fn new(
        y: Vec<f64>,
        x_rows: Vec<Vec<f64>>,
        z_rows: Vec<Vec<f64>>,
        interval_index: usize,
    ) -> Result<Self> {
        if y.len() != x_rows.len() || y.len() != z_rows.len() {
            return Err(Error::invalid(format!(
                "batch lengths differ: {} responses, {} component rows, {} gating rows",
                y.len(),
                x_rows.len(),
                z_rows.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite response in batch"));
        }
        for row in x_rows.iter().chain(z_rows.iter()) {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("non-finite covariate in batch"));
            }
        }
        Ok(DataBatch { y, x_rows, z_rows, interval_index })
    }

    pub fn empty(interval_index: usize) -> Self {
        DataBatch { y: Vec::new(), x_rows: Vec::new(), z_rows: Vec::new(), interval_index }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn interval_index(&self) -> usize {
        self.interval_index
    }

    pub fn responses(&self) -> &[f64] {
        &self.y
    }

    pub fn response(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x_rows[i]
    }

    pub fn z_row(&self, i: usize) -> &[f64] {
        &self.z_rows[i]
    }
}

/// A weighted particle approximation of the coefficient posterior at one
/// time index.
#[derive(Debug, Clone)]
pub struct ParticleSet {
    particles: Vec<DVector<f64>>,
    log_weights: Vec<f64>,
    weights: Vec<f64>,
    time_index: usize,
}

impl ParticleSet {
    /// Build from raw log weights; normalizes via log-sum-exp.
    pub fn new(
        particles: Vec<DVector<f64>>,
        log_weights: Vec<f64>,
        time_index: usize,
    ) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::invalid("a particle set needs at least one particle"));
        }
        if particles.len() != log_weights.len() {
            return Err(Error::invalid("particles and log weights differ in length"));
        }
        let dim = particles[0].len();
        if particles.iter().any(|p| p.len() != dim) {
            return Err(Error::invalid("particles differ in dimension"));
        }
        let norm = log_sum_exp(&log_weights);
        if !norm.is_finite() {
            return Err(Error::Degenerate("all importance weights vanished".into()));
        }
        let mut weights: Vec<f64> = log_weights.iter().map(|lw| (lw - norm).exp()).collect();
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(ParticleSet { particles, log_weights, weights, time_index })
    }

    /// Equally weighted particles.
    pub fn uniform(particles: Vec<DVector<f64>>, time_index: usize) -> Result<Self> {
        let m = particles.len();
        ParticleSet::new(particles, vec![-(m as f64).ln(); m], time_index)
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.particles[0].len()
    }

    pub fn time_index(&self) -> usize {
        self.time_index
    }

    pub fn particles(&self) -> &[DVector<f64>] {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn weighted_mean(&self) -> DVector<f64> {
        weighted_mean_scatter(&self.particles, &self.weights).0
    }

    /// Weighted scatter about the weighted mean (no state-noise term).
    pub fn weighted_covariance(&self) -> DMatrix<f64> {
        weighted_mean_scatter(&self.particles, &self.weights).1
    }

    /// Gaussian prior approximation for the next step: weighted mean, and
    /// state noise plus weighted scatter.
    pub fn prior_moments(&self, state_noise: &DMatrix<f64>) -> Result<GaussianMoments> {
        crate::gaussian::empirical_prior_moments(&self.particles, &self.weights, state_noise)
    }
}

/// Draw the initial particle cloud from the coefficient prior.
pub fn initialize(
    prior: &GaussianMoments,
    config: &FilterConfig,
    rng: &mut RngStream,
) -> Result<ParticleSet> {
    config.validate()?;
    let factor = SpdFactor::factor(prior.cov())?;
    let d = prior.dim();
    let particles = (0..config.particles)
        .map(|_| {
            let z = DVector::from_fn(d, |_, _| rng.sample(StandardNormal));
            prior.mean() + factor.lower() * z
        })
        .collect();
    ParticleSet::uniform(particles, 0)
}

/// Discount-factor state-noise covariance `U = (1/alpha - 1) C`, where `C`
/// is the weighted particle scatter.
pub fn state_noise_covariance(particles: &ParticleSet, alpha: f64) -> Result<DMatrix<f64>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("discount factor must lie in (0, 1), got {alpha}")));
    }
    Ok(particles.weighted_covariance() * (1.0 / alpha - 1.0))
}

/// Effective sample size `1 / sum w^2` of normalized weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Systematic resampling: expected multiplicity `M w_m` per particle, one
/// uniform draw. Weights reset to 1/M.
pub fn resample_systematic(particles: &ParticleSet, rng: &mut RngStream) -> ParticleSet {
    let m = particles.len();
    let offset: f64 = rng.random::<f64>();
    let weights = particles.weights();
    let mut resampled = Vec::with_capacity(m);
    let mut cumulative = weights[0];
    let mut k = 0;
    for i in 0..m {
        let position = (offset + i as f64) / m as f64;
        while position > cumulative && k < m - 1 {
            k += 1;
            cumulative += weights[k];
        }
        resampled.push(particles.particles()[k].clone());
    }
    ParticleSet::uniform(resampled, particles.time_index())
        .expect("resampled set is nonempty with finite weights")
}

/// Log of the prior mixture density `log sum_h w_h N(x; gamma_h, U)` for
/// each candidate point. This is the O(M^2) numerator of the marginal
/// filter's importance weights; the transition covariance is factored once
/// and reused across all pairs.
pub fn prior_mixture_log_densities(
    previous: &ParticleSet,
    state_noise: &DMatrix<f64>,
    candidates: &[DVector<f64>],
) -> Result<Vec<f64>> {
    let d = previous.dim();
    if state_noise.nrows() != d || state_noise.ncols() != d {
        return Err(Error::invalid("state noise dimension does not match particles"));
    }
    if candidates.iter().any(|c| c.len() != d) {
        return Err(Error::invalid("candidate dimension does not match particles"));
    }
    let factor = SpdFactor::factor(state_noise)?;
    let log_norm = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + factor.log_det());

    // Whiten both clouds once; every pair density then needs only a
    // squared distance.
    let whiten = |points: &[DVector<f64>]| -> Vec<f64> {
        let mut flat = Vec::with_capacity(points.len() * d);
        for p in points {
            flat.extend_from_slice(factor.solve_lower(p).as_slice());
        }
        flat
    };
    let sources = whiten(previous.particles());
    let targets = whiten(candidates);
    let log_weights = previous.log_weights().to_vec();

    let out = indexed_map(candidates.len(), |m| {
        let target = &targets[m * d..(m + 1) * d];
        // Streaming log-sum-exp over source particles; terms more than 40
        // nats below the running maximum cannot affect the sum.
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for (source, lw) in sources.chunks_exact(d).zip(&log_weights) {
            let mut dist = 0.0;
            for (t, s) in target.iter().zip(source) {
                let diff = t - s;
                dist += diff * diff;
            }
            let term = lw - 0.5 * dist;
            if term <= max {
                if term - max > -40.0 {
                    sum += (term - max).exp();
                }
            } else {
                sum = if max.is_finite() { sum * (max - term).exp() + 1.0 } else { 1.0 };
                max = term;
            }
        }
        max + sum.ln() + log_norm
    });
    Ok(out)
}

/// Per-observation data with precomputed response constants, shared by
/// every particle's likelihood evaluation in one step.
pub(crate) struct ObsDesign {
    pub(crate) y: f64,
    pub(crate) x_row: Vec<f64>,
    pub(crate) z_row: Vec<f64>,
    pub(crate) log_norm_const: f64,
}

pub(crate) fn obs_designs(spec: &MixtureSpec, batch: &DataBatch) -> Result<Vec<ObsDesign>> {
    let family = spec.family();
    let p = spec.x_indices().len();
    let q = spec.z_indices().len();
    (0..batch.len())
        .map(|i| {
            let y = batch.response(i);
            crate::mixture::ComponentDensity::validate_response(&family, y).map_err(|e| {
                Error::invalid(format!("interval {}: {e}", batch.interval_index()))
            })?;
            if batch.x_row(i).len() != p || batch.z_row(i).len() != q {
                return Err(Error::invalid(format!(
                    "interval {}: covariate row {} does not match the spec",
                    batch.interval_index(),
                    i
                )));
            }
            Ok(ObsDesign {
                y,
                x_row: batch.x_row(i).to_vec(),
                z_row: batch.z_row(i).to_vec(),
                log_norm_const: family.log_norm_const(y),
            })
        })
        .collect()
}

/// Log likelihood of a whole batch at one coefficient vector (coefficients
/// are constant within an interval).
pub(crate) fn batch_log_likelihood(
    spec: &MixtureSpec,
    designs: &[ObsDesign],
    gamma: &DVector<f64>,
) -> f64 {
    let family = spec.family();
    let k = spec.components();
    let mut total = 0.0;
    let mut terms = vec![0.0; k];
    for obs in designs {
        let lp = crate::mixture::predictors_from_flat(spec, gamma, &obs.x_row, &obs.z_row);
        let log_omega = match crate::mixture::log_gating_weights(&lp.psi) {
            Ok(v) => v,
            Err(_) => return f64::NEG_INFINITY,
        };
        for (j, term) in terms.iter_mut().enumerate() {
            *term = log_omega[j] + family.log_density_core(obs.y, lp.eta[j]);
        }
        total += log_sum_exp(&terms) + obs.log_norm_const;
        if total == f64::NEG_INFINITY {
            return total;
        }
    }
    total
}

/// One filter step: compute the state noise, record the one-step-ahead
/// predictive density (before the measurement update), propose M new
/// particles, reweight them with the prior-mixture numerator, and resample
/// when the ESS falls below its threshold.
///
/// Empty batches advance the prior by pure diffusion: ancestors are drawn
/// from the current cloud, transition noise is added and the weights reset.
pub fn step(
    particles: &ParticleSet,
    batch: &DataBatch,
    config: &FilterConfig,
    spec: &MixtureSpec,
    rng: &mut RngStream,
) -> Result<(ParticleSet, PredictiveRecord)> {
    config.validate()?;
    check_step_inputs(particles, batch, config, spec)?;
    let state_noise = state_noise_covariance(particles, config.alpha)?;
    let record = predictive_density(particles, &state_noise, batch, spec, rng)?;

    if batch.is_empty() {
        let diffused = diffuse(particles, &state_noise, batch.interval_index(), rng)?;
        return Ok((diffused, record));
    }

    let proposal = build_proposal(spec, particles, &state_noise, batch, &config.proposal_options())?;
    let proposed = proposal.sample(rng, config.particles);

    let designs = obs_designs(spec, batch)?;
    let log_lik = indexed_map(proposed.len(), |m| batch_log_likelihood(spec, &designs, &proposed[m]));
    let log_prior_mix = prior_mixture_log_densities(particles, &state_noise, &proposed)?;

    let log_weights: Vec<f64> = (0..proposed.len())
        .map(|m| log_lik[m] + log_prior_mix[m] - proposal.log_density(&proposed[m]))
        .collect();

    let updated = ParticleSet::new(proposed, log_weights, batch.interval_index()).map_err(|e| {
        match e {
            Error::Degenerate(_) => Error::Degenerate(format!(
                "all importance weights vanished at interval {}",
                batch.interval_index()
            )),
            other => other,
        }
    })?;
    Ok((finish_step(updated, config, rng), record))
}

/// One step of the same filter with the bootstrap proposal: sample from the
/// prior mixture by ancestor draw, so the mixture terms cancel and the
/// weights reduce to the batch likelihood. Used as an independent
/// cross-check of the tailored proposal.
pub fn bootstrap_step(
    particles: &ParticleSet,
    batch: &DataBatch,
    config: &FilterConfig,
    spec: &MixtureSpec,
    rng: &mut RngStream,
) -> Result<(ParticleSet, PredictiveRecord)> {
    config.validate()?;
    check_step_inputs(particles, batch, config, spec)?;
    let state_noise = state_noise_covariance(particles, config.alpha)?;
    let record = predictive_density(particles, &state_noise, batch, spec, rng)?;

    let diffused = diffuse(particles, &state_noise, batch.interval_index(), rng)?;
    if batch.is_empty() {
        return Ok((diffused, record));
    }

    let designs = obs_designs(spec, batch)?;
    let log_weights =
        indexed_map(diffused.len(), |m| batch_log_likelihood(spec, &designs, &diffused.particles()[m]));
    let updated =
        ParticleSet::new(diffused.particles().to_vec(), log_weights, batch.interval_index())
            .map_err(|e| match e {
                Error::Degenerate(_) => Error::Degenerate(format!(
                    "all bootstrap weights vanished at interval {}",
                    batch.interval_index()
                )),
                other => other,
            })?;
    Ok((finish_step(updated, config, rng), record))
}

fn check_step_inputs(
    particles: &ParticleSet,
    batch: &DataBatch,
    config: &FilterConfig,
    spec: &MixtureSpec,
) -> Result<()> {
    if particles.len() != config.particles {
        return Err(Error::invalid(format!(
            "particle set has {} particles, config says {}",
            particles.len(),
            config.particles
        )));
    }
    if particles.dim() != spec.coefficient_dim() {
        return Err(Error::invalid(format!(
            "particles have dimension {}, spec requires {}",
            particles.dim(),
            spec.coefficient_dim()
        )));
    }
    if batch.interval_index() != particles.time_index() + 1 {
        return Err(Error::invalid(format!(
            "batch interval {} does not follow particle time index {}",
            batch.interval_index(),
            particles.time_index()
        )));
    }
    Ok(())
}

/// Ancestor draw plus transition noise: a uniformly weighted sample of the
/// prior mixture.
fn diffuse(
    particles: &ParticleSet,
    state_noise: &DMatrix<f64>,
    new_time_index: usize,
    rng: &mut RngStream,
) -> Result<ParticleSet> {
    let factor = SpdFactor::factor(state_noise)?;
    let ancestors = resample_systematic(particles, rng);
    let d = particles.dim();
    let moved = ancestors
        .particles()
        .iter()
        .map(|p| {
            let z = DVector::from_fn(d, |_, _| rng.sample(StandardNormal));
            p + factor.lower() * z
        })
        .collect();
    ParticleSet::uniform(moved, new_time_index)
}

fn finish_step(updated: ParticleSet, config: &FilterConfig, rng: &mut RngStream) -> ParticleSet {
    let ess = effective_sample_size(updated.weights());
    if ess < config.ess_threshold_fraction * config.particles as f64 {
        resample_systematic(&updated, rng)
    } else {
        updated
    }
}

/// Output of a full filter pass.
#[derive(Debug, Clone)]
pub struct FilterRun {
    /// Posterior particle sets after each interval (empty unless requested).
    pub trace: Vec<ParticleSet>,
    /// One predictive record per interval, in order.
    pub records: Vec<PredictiveRecord>,
    /// The final particle set.
    pub final_particles: ParticleSet,
}

/// Run the tailored-proposal filter over a batch sequence.
pub fn run_filter(
    spec: &MixtureSpec,
    config: &FilterConfig,
    prior: &GaussianMoments,
    batches: &[DataBatch],
    keep_trace: bool,
) -> Result<FilterRun> {
    run_with(spec, config, prior, batches, keep_trace, step)
}

/// Run the bootstrap-proposal filter over a batch sequence.
pub fn run_bootstrap_filter(
    spec: &MixtureSpec,
    config: &FilterConfig,
    prior: &GaussianMoments,
    batches: &[DataBatch],
    keep_trace: bool,
) -> Result<FilterRun> {
    run_with(spec, config, prior, batches, keep_trace, bootstrap_step)
}

fn run_with(
    spec: &MixtureSpec,
    config: &FilterConfig,
    prior: &GaussianMoments,
    batches: &[DataBatch],
    keep_trace: bool,
    stepper: impl Fn(
        &ParticleSet,
        &DataBatch,
        &FilterConfig,
        &MixtureSpec,
        &mut RngStream,
    ) -> Result<(ParticleSet, PredictiveRecord)>,
) -> Result<FilterRun> {
    if batches.is_empty() {
        return Err(Error::invalid("no data batches to filter"));
    }
    let mut rng = stream(config.seed);
    let mut particles = initialize(prior, config, &mut rng)?;
    let mut trace = Vec::new();
    let mut records = Vec::with_capacity(batches.len());
    for batch in batches {
        let (next, record) = stepper(&particles, batch, config, spec, &mut rng)?;
        records.push(record);
        particles = next;
        if keep_trace {
            trace.push(particles.clone());
        }
    }
    Ok(FilterRun { trace, records, final_particles: particles })
}
