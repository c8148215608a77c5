//! Predictive-density estimation, the log predictive score, model-selection
//! grids over (K, alpha) and posterior summaries.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{
    batch_log_likelihood, obs_designs, run_filter, DataBatch, FilterConfig, ParticleSet,
};
use crate::gaussian::{GaussianMoments, SpdFactor};
use crate::mixture::MixtureSpec;
use crate::rng::{derive_seed, RngStream};
use crate::util::{indexed_map, log_sum_exp};

/// The estimated one-step-ahead log predictive density of one interval.
///
/// `per_observation` holds the sequential conditional contributions under
/// the within-batch factorization; they sum to `log_pred_density`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveRecord {
    pub interval_index: usize,
    pub log_pred_density: f64,
    pub per_observation: Vec<f64>,
}

/// Estimate the log predictive density of a batch before its measurement
/// update: draw one transition sample per particle, evaluate the batch
/// likelihood there, and combine with the previous weights.
pub fn predictive_density(
    particles: &ParticleSet,
    state_noise: &DMatrix<f64>,
    batch: &DataBatch,
    spec: &MixtureSpec,
    rng: &mut RngStream,
) -> Result<PredictiveRecord> {
    if batch.is_empty() {
        return Ok(PredictiveRecord {
            interval_index: batch.interval_index(),
            log_pred_density: 0.0,
            per_observation: Vec::new(),
        });
    }
    let factor = SpdFactor::factor(state_noise)?;
    let d = particles.dim();
    let moved: Vec<DVector<f64>> = particles
        .particles()
        .iter()
        .map(|p| {
            let z = DVector::from_fn(d, |_, _| rng.sample(StandardNormal));
            p + factor.lower() * z
        })
        .collect();

    let designs = obs_designs(spec, batch)?;
    let n = designs.len();
    // Cumulative per-observation log likelihoods per particle; prefix i
    // covers observations 0..i.
    let prefixes: Vec<Vec<f64>> = indexed_map(moved.len(), |m| {
        let mut cum = Vec::with_capacity(n + 1);
        cum.push(0.0);
        let mut total = 0.0;
        for obs in &designs {
            total += batch_log_likelihood(spec, std::slice::from_ref(obs), &moved[m]);
            cum.push(total);
        }
        cum
    });

    let log_weights = particles.log_weights();
    let partial = |i: usize| -> f64 {
        let terms: Vec<f64> =
            (0..moved.len()).map(|m| log_weights[m] + prefixes[m][i]).collect();
        log_sum_exp(&terms)
    };
    let mut partials = Vec::with_capacity(n + 1);
    for i in 0..=n {
        partials.push(partial(i));
    }
    let log_pred_density = partials[n];
    if !log_pred_density.is_finite() {
        return Err(Error::Degenerate(format!(
            "predictive density vanished at interval {}",
            batch.interval_index()
        )));
    }
    let per_observation = (0..n).map(|i| partials[i + 1] - partials[i]).collect();
    Ok(PredictiveRecord {
        interval_index: batch.interval_index(),
        log_pred_density,
        per_observation,
    })
}

/// Mean of the last `j_star` interval log predictive densities.
pub fn log_predictive_score(records: &[PredictiveRecord], j_star: usize) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("no predictive records"));
    }
    if j_star == 0 || j_star > records.len() {
        return Err(Error::invalid(format!(
            "window of {j_star} intervals is invalid for {} records",
            records.len()
        )));
    }
    let tail = &records[records.len() - j_star..];
    Ok(tail.iter().map(|r| r.log_pred_density).sum::<f64>() / j_star as f64)
}

/// Default score window: the last half of the intervals.
pub fn default_score_window(intervals: usize) -> usize {
    (intervals / 2).max(1)
}

/// Score of one (K, alpha) grid cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelScore {
    pub components: usize,
    pub alpha: f64,
    pub lps: f64,
    pub per_interval: Vec<PredictiveRecord>,
}

/// A grid cell whose filter run failed (degeneracy is recorded, not
/// propagated).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellFailure {
    pub components: usize,
    pub alpha: f64,
    pub message: String,
}

/// Result of a model-selection grid: scores sorted by descending LPS (ties
/// broken by smaller K, then larger alpha) plus any failed cells.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridOutcome {
    pub scores: Vec<ModelScore>,
    pub failures: Vec<CellFailure>,
}

impl GridOutcome {
    pub fn best(&self) -> Option<&ModelScore> {
        self.scores.first()
    }
}

/// Fit every (K, alpha) combination to the batch sequence and score it by
/// LPS. Each cell runs an independent filter whose seed is derived from the
/// cell's own (K, alpha), so cells are isolated from one another and from
/// grid shape.
pub fn model_selection_grid(
    batches: &[DataBatch],
    components: &[usize],
    alphas: &[f64],
    config: &FilterConfig,
    spec_template: &MixtureSpec,
    j_star: Option<usize>,
) -> Result<GridOutcome> {
    if components.is_empty() || alphas.is_empty() {
        return Err(Error::invalid("model grid must be nonempty"));
    }
    if batches.is_empty() {
        return Err(Error::invalid("no data batches to score"));
    }
    let window = match j_star {
        Some(w) => w,
        None => default_score_window(batches.len()),
    };
    let cells: Vec<(usize, f64)> = components
        .iter()
        .flat_map(|&k| alphas.iter().map(move |&a| (k, a)))
        .collect();

    let results = indexed_map(cells.len(), |i| {
        let (k, alpha) = cells[i];
        run_grid_cell(batches, k, alpha, config, spec_template, window)
    });

    let mut scores = Vec::new();
    let mut failures = Vec::new();
    for ((k, alpha), result) in cells.into_iter().zip(results) {
        match result {
            Ok(score) => scores.push(score),
            Err(e) => {
                failures.push(CellFailure { components: k, alpha, message: e.to_string() })
            }
        }
    }
    scores.sort_by(|a, b| {
        b.lps
            .total_cmp(&a.lps)
            .then(a.components.cmp(&b.components))
            .then(b.alpha.total_cmp(&a.alpha))
    });
    Ok(GridOutcome { scores, failures })
}

fn run_grid_cell(
    batches: &[DataBatch],
    components: usize,
    alpha: f64,
    config: &FilterConfig,
    spec_template: &MixtureSpec,
    window: usize,
) -> Result<ModelScore> {
    let spec = spec_template.with_components(components)?;
    let mut cell_config = config.clone();
    cell_config.alpha = alpha;
    cell_config.seed = derive_seed(config.seed, &[components as u64, alpha.to_bits()]);
    let prior = GaussianMoments::standard(spec.coefficient_dim());
    let run = run_filter(&spec, &cell_config, &prior, batches, false)?;
    let lps = log_predictive_score(&run.records, window)?;
    Ok(ModelScore { components, alpha, lps, per_interval: run.records })
}

/// Posterior summary of one coefficient at one time step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub mean: f64,
    pub hpd_low: f64,
    pub hpd_high: f64,
}

/// Weighted mean and pointwise HPD interval per coefficient per time step.
pub fn posterior_summaries(
    trace: &[ParticleSet],
    level: f64,
) -> Result<Vec<Vec<CoefficientSummary>>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("HPD level must lie in (0, 1), got {level}")));
    }
    trace
        .iter()
        .map(|set| {
            let mean = set.weighted_mean();
            (0..set.dim())
                .map(|coord| {
                    let values: Vec<f64> =
                        set.particles().iter().map(|p| p[coord]).collect();
                    let (hpd_low, hpd_high) = weighted_hpd(&values, set.weights(), level)?;
                    Ok(CoefficientSummary { mean: mean[coord], hpd_low, hpd_high })
                })
                .collect()
        })
        .collect()
}

/// Shortest interval holding at least `level` of the weighted sample mass.
pub fn weighted_hpd(values: &[f64], weights: &[f64], level: f64) -> Result<(f64, f64)> {
    if values.is_empty() || values.len() != weights.len() {
        return Err(Error::invalid("weighted sample is empty or mismatched"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("HPD level must lie in (0, 1), got {level}")));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let sorted: Vec<(f64, f64)> = order.iter().map(|&i| (values[i], weights[i])).collect();

    let mut best: Option<(f64, f64, f64)> = None; // (width, low, high)
    let mut mass = 0.0;
    let mut hi = 0;
    for lo in 0..sorted.len() {
        if hi < lo {
            hi = lo;
            mass = 0.0;
        }
        while mass < level && hi < sorted.len() {
            mass += sorted[hi].1;
            hi += 1;
        }
        if mass < level {
            break;
        }
        let width = sorted[hi - 1].0 - sorted[lo].0;
        if best.map_or(true, |(w, _, _)| width < w) {
            best = Some((width, sorted[lo].0, sorted[hi - 1].0));
        }
        mass -= sorted[lo].1;
    }
    let (_, low, high) =
        best.ok_or_else(|| Error::Degenerate("weighted sample carries no mass".into()))?;
    Ok((low, high))
}
