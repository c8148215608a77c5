//! Shared oracles and helpers for the integration suites.

use dynmoe::{DataBatch, GaussianMoments, RngStream};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Exact Kalman filter for the Gaussian-response dynamic linear model with
/// discount-factor state noise: the prior covariance at each step is the
/// previous posterior covariance divided by alpha, and observations are
/// absorbed one at a time.
pub struct DiscountKalman {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    alpha: f64,
    obs_var: f64,
}

impl DiscountKalman {
    pub fn new(prior: &GaussianMoments, alpha: f64, obs_sigma: f64) -> Self {
        DiscountKalman {
            mean: prior.mean().clone(),
            cov: prior.cov().clone(),
            alpha,
            obs_var: obs_sigma * obs_sigma,
        }
    }

    /// Advance one interval: diffuse, then run the measurement updates.
    pub fn step(&mut self, batch: &DataBatch) {
        self.cov /= self.alpha;
        for i in 0..batch.len() {
            let mut h = DVector::zeros(self.mean.len());
            h[0] = 1.0;
            for (c, &x) in batch.x_row(i).iter().enumerate() {
                h[c + 1] = x;
            }
            let s = (h.transpose() * &self.cov * &h)[(0, 0)] + self.obs_var;
            let gain = &self.cov * &h / s;
            let innovation = batch.response(i) - (h.transpose() * &self.mean)[(0, 0)];
            self.mean += &gain * innovation;
            self.cov = &self.cov - &gain * s * gain.transpose();
        }
    }
}

/// Simulate a Gaussian dynamic linear model: random-walk coefficients over
/// intervals, one scalar covariate, Gaussian observation noise.
pub fn simulate_dlm(
    rng: &mut RngStream,
    intervals: usize,
    per_interval: usize,
    walk_sd: f64,
    obs_sigma: f64,
) -> Vec<DataBatch> {
    let mut coef = [0.3, 0.8];
    (1..=intervals)
        .map(|j| {
            for c in coef.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *c += walk_sd * z;
            }
            let mut y = Vec::with_capacity(per_interval);
            let mut xs = Vec::with_capacity(per_interval);
            for _ in 0..per_interval {
                let x = rng.random_range(-1.0..1.0);
                let noise: f64 = rng.sample(StandardNormal);
                y.push(coef[0] + coef[1] * x + obs_sigma * noise);
                xs.push(vec![x]);
            }
            let zs = vec![vec![]; per_interval];
            DataBatch::new(y, xs, zs, j).unwrap()
        })
        .collect()
}

/// Linearly interpolated empirical quantile of unsorted data.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
