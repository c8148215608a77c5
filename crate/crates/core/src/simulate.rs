//! Data generators for the simulation study and the replication driver for
//! the selection-frequency and LPS-difference experiments.
//!
//! Three generating processes are built in: a static Poisson regression, a
//! dynamic Poisson regression whose coefficients follow a random walk over
//! the intervals, and a dynamic two-component Poisson mixture with a
//! logistic gate. Parameters evolve once per interval; covariates are iid
//! Uniform(-1, 1) scalars with implicit intercepts.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::{
    default_score_window, log_predictive_score, model_selection_grid, PredictiveRecord,
};
use crate::filter::{run_filter, DataBatch, FilterConfig};
use crate::gaussian::GaussianMoments;
use crate::mixture::{ComponentFamily, MixtureSpec};
use crate::rng::{derive_seed, stream, RngStream};

/// The built-in data generating processes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DgpModel {
    /// Static Poisson regression.
    M1,
    /// Dynamic Poisson regression (random-walk coefficients).
    M2,
    /// Dynamic two-component Poisson mixture with a logistic gate.
    M3,
}

impl DgpModel {
    pub fn label(&self) -> &'static str {
        match self {
            DgpModel::M1 => "m1",
            DgpModel::M2 => "m2",
            DgpModel::M3 => "m3",
        }
    }

    fn tag(&self) -> u64 {
        match self {
            DgpModel::M1 => 1,
            DgpModel::M2 => 2,
            DgpModel::M3 => 3,
        }
    }
}

/// Generator constants (intercept and slope pairs; noise is diagonal).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpParams {
    /// M1 coefficients.
    pub static_coef: [f64; 2],
    /// M2 initial coefficients and random-walk variances.
    pub rw_init: [f64; 2],
    pub rw_noise_var: [f64; 2],
    /// M3 component coefficients, gate coefficients and their variances.
    pub mix_beta_init: [[f64; 2]; 2],
    pub mix_beta_noise_var: [[f64; 2]; 2],
    pub gate_init: [f64; 2],
    pub gate_noise_var: [f64; 2],
}

impl Default for DgpParams {
    fn default() -> Self {
        DgpParams {
            static_coef: [0.11, 2.29],
            rw_init: [0.11, 2.29],
            rw_noise_var: [0.17, 0.2],
            mix_beta_init: [[1.1, 2.17], [-0.8, 1.94]],
            mix_beta_noise_var: [[0.08, 0.15], [0.07, 0.1]],
            gate_init: [2.63, -4.41],
            gate_noise_var: [0.08, 0.17],
        }
    }
}

/// Full description of one simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub model: DgpModel,
    /// Number of time intervals (J).
    pub intervals: usize,
    /// Observations per interval.
    pub per_interval: usize,
    pub params: DgpParams,
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(model: DgpModel, seed: u64) -> Self {
        DgpSpec { model, intervals: 12, per_interval: 100, params: DgpParams::default(), seed }
    }

    fn validate(&self) -> Result<()> {
        if self.intervals == 0 || self.per_interval == 0 {
            return Err(Error::invalid("simulation needs at least one interval and observation"));
        }
        Ok(())
    }
}

/// A simulated dataset: batches plus the realized latent parameter path
/// (one row per interval, for diagnostics).
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset {
    pub batches: Vec<DataBatch>,
    pub latent_path: Vec<DVector<f64>>,
    pub latent_labels: Vec<String>,
}

/// The mixture spec matching the simulated covariate layout (x is column 0,
/// z is column 1).
pub fn dataset_spec(components: usize) -> MixtureSpec {
    MixtureSpec::new(components, ComponentFamily::Poisson, vec![0], vec![1])
        .expect("component count is validated by callers")
}

fn latent_labels(model: DgpModel) -> Vec<String> {
    match model {
        DgpModel::M1 | DgpModel::M2 => vec!["coef0".into(), "coef1".into()],
        DgpModel::M3 => vec![
            "beta1_0".into(),
            "beta1_1".into(),
            "beta2_0".into(),
            "beta2_1".into(),
            "theta0".into(),
            "theta1".into(),
        ],
    }
}

/// Draw the per-interval latent parameter path.
fn draw_path(spec: &DgpSpec, rng: &mut RngStream) -> Vec<DVector<f64>> {
    let p = &spec.params;
    let step = |state: &mut [f64], vars: &[f64], rng: &mut RngStream| {
        for (s, &v) in state.iter_mut().zip(vars) {
            let z: f64 = rng.sample(StandardNormal);
            *s += v.sqrt() * z;
        }
    };
    match spec.model {
        DgpModel::M1 => {
            (0..spec.intervals).map(|_| DVector::from_column_slice(&p.static_coef)).collect()
        }
        DgpModel::M2 => {
            let mut state = p.rw_init;
            (0..spec.intervals)
                .map(|_| {
                    step(&mut state, &p.rw_noise_var, rng);
                    DVector::from_column_slice(&state)
                })
                .collect()
        }
        DgpModel::M3 => {
            let mut beta = p.mix_beta_init;
            let mut gate = p.gate_init;
            (0..spec.intervals)
                .map(|_| {
                    step(&mut beta[0], &p.mix_beta_noise_var[0], rng);
                    step(&mut beta[1], &p.mix_beta_noise_var[1], rng);
                    step(&mut gate, &p.gate_noise_var, rng);
                    DVector::from_column_slice(&[
                        beta[0][0], beta[0][1], beta[1][0], beta[1][1], gate[0], gate[1],
                    ])
                })
                .collect()
        }
    }
}

/// Emit one dataset conditional on a latent path.
fn emit_dataset(
    spec: &DgpSpec,
    path: &[DVector<f64>],
    rng: &mut RngStream,
) -> Result<Vec<DataBatch>> {
    let uniform = Uniform::new(-1.0, 1.0).expect("static bounds are valid");
    let mut batches = Vec::with_capacity(spec.intervals);
    for (j, state) in path.iter().enumerate() {
        let n = spec.per_interval;
        let mut y = Vec::with_capacity(n);
        let mut xs = Vec::with_capacity(n);
        let mut zs = Vec::with_capacity(n);
        for _ in 0..n {
            let x: f64 = uniform.sample(rng);
            let z: f64 = uniform.sample(rng);
            let response = match spec.model {
                DgpModel::M1 | DgpModel::M2 => {
                    let lambda = (state[0] + state[1] * x).exp();
                    draw_poisson(lambda, rng)?
                }
                DgpModel::M3 => {
                    let gate = state[4] + state[5] * z;
                    let p2 = 1.0 / (1.0 + (-gate).exp());
                    let member = if rng.random::<f64>() < p2 { 1 } else { 0 };
                    let lambda = (state[2 * member] + state[2 * member + 1] * x).exp();
                    draw_poisson(lambda, rng)?
                }
            };
            y.push(response);
            xs.push(vec![x]);
            zs.push(vec![z]);
        }
        batches.push(DataBatch::new(y, xs, zs, j + 1)?);
    }
    Ok(batches)
}

fn draw_poisson(lambda: f64, rng: &mut RngStream) -> Result<f64> {
    let dist = Poisson::new(lambda)
        .map_err(|e| Error::invalid(format!("Poisson rate {lambda}: {e}")))?;
    Ok(dist.sample(rng))
}

/// Simulate one dataset.
pub fn simulate(spec: &DgpSpec) -> Result<SimulatedDataset> {
    spec.validate()?;
    let mut rng = stream(spec.seed);
    let path = draw_path(spec, &mut rng);
    let batches = emit_dataset(spec, &path, &mut rng)?;
    Ok(SimulatedDataset { batches, latent_path: path, latent_labels: latent_labels(spec.model) })
}

/// Simulate a training/validation pair sharing one latent parameter path,
/// with conditionally independent covariates and responses.
pub fn simulate_pair(spec: &DgpSpec) -> Result<(SimulatedDataset, SimulatedDataset)> {
    spec.validate()?;
    let mut rng = stream(spec.seed);
    let path = draw_path(spec, &mut rng);
    let train = emit_dataset(spec, &path, &mut rng)?;
    let valid = emit_dataset(spec, &path, &mut rng)?;
    let labels = latent_labels(spec.model);
    Ok((
        SimulatedDataset {
            batches: train,
            latent_path: path.clone(),
            latent_labels: labels.clone(),
        },
        SimulatedDataset { batches: valid, latent_path: path, latent_labels: labels },
    ))
}

/// Configuration of the replication study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub n_pairs: u32,
    pub components: Vec<usize>,
    pub alphas: Vec<f64>,
    /// Template filter settings; per-run seeds are derived from its seed.
    pub filter: FilterConfig,
    pub j_star: Option<usize>,
    pub dgps: Vec<DgpModel>,
    pub intervals: usize,
    pub per_interval: usize,
    /// Discount factor of the static twin.
    pub static_alpha: f64,
}

impl StudyConfig {
    pub fn new(n_pairs: u32, filter: FilterConfig) -> Self {
        StudyConfig {
            n_pairs,
            components: vec![1, 2, 3],
            alphas: vec![0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99],
            filter,
            j_star: None,
            dgps: vec![DgpModel::M1, DgpModel::M2, DgpModel::M3],
            intervals: 12,
            per_interval: 100,
            static_alpha: 0.99,
        }
    }
}

/// One training/validation pair's outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairOutcome {
    pub pair: u32,
    pub selected_components: usize,
    pub selected_alpha: f64,
    pub train_lps: f64,
    /// Validation LPS of the selected model.
    pub validation_lps_selected: f64,
    /// Validation LPS of the static twin (same K, static alpha).
    pub validation_lps_static: f64,
    pub failed_cells: usize,
}

impl PairOutcome {
    /// Selected-minus-static validation LPS difference.
    pub fn lps_difference(&self) -> f64 {
        self.validation_lps_selected - self.validation_lps_static
    }
}

/// All pair outcomes of one generating process.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpStudy {
    pub model: DgpModel,
    pub pairs: Vec<PairOutcome>,
    /// Pairs whose whole grid failed.
    pub failed_pairs: Vec<(u32, String)>,
}

impl DgpStudy {
    /// How often each (K, alpha) cell was selected.
    pub fn selection_counts(&self) -> Vec<((usize, f64), usize)> {
        let mut counts: Vec<((usize, f64), usize)> = Vec::new();
        for pair in &self.pairs {
            let key = (pair.selected_components, pair.selected_alpha);
            match counts.iter_mut().find(|(k, _)| *k == key) {
                Some((_, c)) => *c += 1,
                None => counts.push((key, 1)),
            }
        }
        counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0 .0.cmp(&b.0 .0)));
        counts
    }
}

/// The full study report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyReport {
    pub dgps: Vec<DgpStudy>,
}

/// Run the replication study: per generating process and pair, fit the
/// (K, alpha) grid on training data, select the best cell by LPS, then
/// score both the selected model and its static twin on the validation
/// data.
pub fn run_replication_study(config: &StudyConfig) -> Result<StudyReport> {
    if config.n_pairs == 0 {
        return Err(Error::invalid("study needs at least one pair"));
    }
    config.filter.validate()?;
    let mut dgps = Vec::with_capacity(config.dgps.len());
    for &model in &config.dgps {
        let mut pairs = Vec::with_capacity(config.n_pairs as usize);
        let mut failed_pairs = Vec::new();
        for pair in 0..config.n_pairs {
            match run_pair(config, model, pair) {
                Ok(outcome) => pairs.push(outcome),
                Err(e) => failed_pairs.push((pair, e.to_string())),
            }
        }
        dgps.push(DgpStudy { model, pairs, failed_pairs });
    }
    Ok(StudyReport { dgps })
}

fn run_pair(config: &StudyConfig, model: DgpModel, pair: u32) -> Result<PairOutcome> {
    let base = config.filter.seed;
    let mut dgp = DgpSpec::new(model, derive_seed(base, &[model.tag(), pair as u64]));
    dgp.intervals = config.intervals;
    dgp.per_interval = config.per_interval;
    let (train, valid) = simulate_pair(&dgp)?;

    let template = dataset_spec(1);
    let mut grid_config = config.filter.clone();
    grid_config.seed = derive_seed(base, &[model.tag(), pair as u64, 0x6772_6964]);
    let grid = model_selection_grid(
        &train.batches,
        &config.components,
        &config.alphas,
        &grid_config,
        &template,
        config.j_star,
    )?;
    let best = grid
        .best()
        .ok_or_else(|| Error::Degenerate("every grid cell failed".into()))?;

    let window = config.j_star.unwrap_or_else(|| default_score_window(valid.batches.len()));
    let validate = |k: usize, alpha: f64| -> Result<f64> {
        let spec = dataset_spec(k);
        let mut run_config = config.filter.clone();
        run_config.alpha = alpha;
        run_config.seed = derive_seed(
            base,
            &[model.tag(), pair as u64, 0x7661_6c69, k as u64, alpha.to_bits()],
        );
        let prior = GaussianMoments::standard(spec.coefficient_dim());
        let run = run_filter(&spec, &run_config, &prior, &valid.batches, false)?;
        log_predictive_score(&run.records, window)
    };
    let selected_lps = validate(best.components, best.alpha)?;
    let static_lps = if best.alpha == config.static_alpha {
        selected_lps
    } else {
        validate(best.components, config.static_alpha)?
    };
    Ok(PairOutcome {
        pair,
        selected_components: best.components,
        selected_alpha: best.alpha,
        train_lps: best.lps,
        validation_lps_selected: selected_lps,
        validation_lps_static: static_lps,
        failed_cells: grid.failures.len(),
    })
}

/// Per-interval log predictive values of a single filter run on a dataset,
/// plus the run's LPS. Convenience wrapper used by replication tooling.
pub fn score_dataset(
    spec: &MixtureSpec,
    config: &FilterConfig,
    batches: &[DataBatch],
    j_star: Option<usize>,
) -> Result<(Vec<PredictiveRecord>, f64)> {
    let prior = GaussianMoments::standard(spec.coefficient_dim());
    let run = run_filter(spec, config, &prior, batches, false)?;
    let window = j_star.unwrap_or_else(|| default_score_window(batches.len()));
    let lps = log_predictive_score(&run.records, window)?;
    Ok((run.records, lps))
}
