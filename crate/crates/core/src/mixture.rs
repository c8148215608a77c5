//! Mixture-of-experts model definition: component families, gating weights,
//! linear predictors and their derivatives.
//!
//! A model with `K` components has per-component regression coefficients
//! `beta_k` (component covariates plus intercept) and, for components
//! `2..=K`, gating coefficients `theta_k` (gating covariates plus
//! intercept). Component 1 is the gating reference category; its gating
//! predictor is identically zero. All code is zero-indexed, so component 0
//! is the reference.
//!
//! The stacked coefficient vector is
//! `gamma = (beta_1', ..., beta_K', theta_2', ..., theta_K')'` and the
//! stacked linear-predictor vector is
//! `rho = (eta_1, ..., eta_K, psi_2, ..., psi_K)'` of length `2K - 1`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::log_sum_exp;

/// Operations a component density must provide: the log density and its
/// first two derivatives with respect to the linear predictor. Supplying
/// these three functions is all that is needed to plug a new family into
/// the filter.
pub trait ComponentDensity {
    /// Log density of `y` at linear predictor `eta`.
    fn log_density(&self, y: f64, eta: f64) -> f64;
    /// First derivative of the log density with respect to `eta`.
    fn d_log_density(&self, y: f64, eta: f64) -> f64;
    /// Second derivative of the log density with respect to `eta`.
    fn d2_log_density(&self, y: f64, eta: f64) -> f64;
    /// Checks that a response value is admissible for the family.
    fn validate_response(&self, y: f64) -> Result<()>;
}

/// Built-in component families.
///
/// `Poisson` uses the log link (`eta = log lambda`). `Gaussian` (identity
/// link, known standard deviation) and `Flat` (constant likelihood) are
/// fixtures for oracle tests: the Gaussian makes the whole filter exactly
/// solvable and the flat family exercises prior-recovery paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum ComponentFamily {
    Poisson,
    Gaussian { sigma: f64 },
    Flat,
}

impl ComponentFamily {
    /// The `eta`-dependent part of the log density. The remainder depends
    /// only on `y` (see [`ComponentFamily::log_norm_const`]) and can be
    /// hoisted out of per-particle loops.
    #[inline]
    pub(crate) fn log_density_core(&self, y: f64, eta: f64) -> f64 {
        match *self {
            ComponentFamily::Poisson => y * eta - eta.exp(),
            ComponentFamily::Gaussian { sigma } => {
                let r = (y - eta) / sigma;
                -0.5 * r * r
            }
            ComponentFamily::Flat => 0.0,
        }
    }

    /// The `y`-only part of the log density.
    #[inline]
    pub(crate) fn log_norm_const(&self, y: f64) -> f64 {
        match *self {
            ComponentFamily::Poisson => -statrs::function::gamma::ln_gamma(y + 1.0),
            ComponentFamily::Gaussian { sigma } => {
                -0.5 * (2.0 * std::f64::consts::PI * sigma * sigma).ln()
            }
            ComponentFamily::Flat => 0.0,
        }
    }
}

impl ComponentDensity for ComponentFamily {
    fn log_density(&self, y: f64, eta: f64) -> f64 {
        self.log_density_core(y, eta) + self.log_norm_const(y)
    }

    fn d_log_density(&self, y: f64, eta: f64) -> f64 {
        match *self {
            ComponentFamily::Poisson => y - eta.exp(),
            ComponentFamily::Gaussian { sigma } => (y - eta) / (sigma * sigma),
            ComponentFamily::Flat => 0.0,
        }
    }

    fn d2_log_density(&self, _y: f64, eta: f64) -> f64 {
        match *self {
            ComponentFamily::Poisson => -eta.exp(),
            ComponentFamily::Gaussian { sigma } => -1.0 / (sigma * sigma),
            ComponentFamily::Flat => 0.0,
        }
    }

    fn validate_response(&self, y: f64) -> Result<()> {
        if !y.is_finite() {
            return Err(Error::invalid(format!("non-finite response {y}")));
        }
        match *self {
            ComponentFamily::Poisson => {
                if y < 0.0 || y.fract() != 0.0 {
                    Err(Error::invalid(format!(
                        "Poisson response must be a nonnegative integer, got {y}"
                    )))
                } else {
                    Ok(())
                }
            }
            ComponentFamily::Gaussian { .. } | ComponentFamily::Flat => Ok(()),
        }
    }
}

/// Poisson log pmf at `lambda = exp(eta)` together with its first and
/// second derivatives with respect to `eta`.
pub fn poisson_derivatives(y: f64, eta: f64) -> Result<(f64, f64, f64)> {
    let family = ComponentFamily::Poisson;
    family.validate_response(y)?;
    if !eta.is_finite() {
        return Err(Error::invalid(format!("non-finite linear predictor {eta}")));
    }
    Ok((
        family.log_density(y, eta),
        family.d_log_density(y, eta),
        family.d2_log_density(y, eta),
    ))
}

/// Model shape: number of components, component family and the covariate
/// columns entering the components (`x`) and the gating weights (`z`).
///
/// Intercepts are implicit: a row of `p` component covariates yields a
/// `p + 1` dimensional coefficient block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    components: usize,
    family: ComponentFamily,
    x_indices: Vec<usize>,
    z_indices: Vec<usize>,
}

impl MixtureSpec {
    pub fn new(
        components: usize,
        family: ComponentFamily,
        x_indices: Vec<usize>,
        z_indices: Vec<usize>,
    ) -> Result<Self> {
        if components == 0 {
            return Err(Error::invalid("a mixture needs at least one component"));
        }
        if let ComponentFamily::Gaussian { sigma } = family {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::invalid(format!("Gaussian sigma must be positive, got {sigma}")));
            }
        }
        Ok(MixtureSpec { components, family, x_indices, z_indices })
    }

    /// Same covariate layout with a different number of components.
    pub fn with_components(&self, components: usize) -> Result<Self> {
        MixtureSpec::new(components, self.family, self.x_indices.clone(), self.z_indices.clone())
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn family(&self) -> ComponentFamily {
        self.family
    }

    pub fn x_indices(&self) -> &[usize] {
        &self.x_indices
    }

    pub fn z_indices(&self) -> &[usize] {
        &self.z_indices
    }

    /// Length of one component coefficient block (`p + 1`).
    pub fn component_block_dim(&self) -> usize {
        self.x_indices.len() + 1
    }

    /// Length of one gating coefficient block (`q + 1`).
    pub fn gating_block_dim(&self) -> usize {
        self.z_indices.len() + 1
    }

    /// Total coefficient dimension `d = K (p+1) + (K-1) (q+1)`.
    pub fn coefficient_dim(&self) -> usize {
        self.components * self.component_block_dim()
            + (self.components - 1) * self.gating_block_dim()
    }

    /// Dimension of the stacked linear predictor, `2K - 1`.
    pub fn predictor_dim(&self) -> usize {
        2 * self.components - 1
    }

    /// Column offset of component `k`'s coefficient block.
    pub(crate) fn beta_offset(&self, component: usize) -> usize {
        component * self.component_block_dim()
    }

    /// Column offset of component `k`'s gating block (`k >= 1`).
    pub(crate) fn theta_offset(&self, component: usize) -> usize {
        self.components * self.component_block_dim() + (component - 1) * self.gating_block_dim()
    }
}

/// Stacked regression coefficients for one mixture: `K` component blocks
/// followed by `K - 1` gating blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientVector {
    values: DVector<f64>,
    components: usize,
    component_block: usize,
    gating_block: usize,
}

impl CoefficientVector {
    pub fn from_vector(spec: &MixtureSpec, values: DVector<f64>) -> Result<Self> {
        if values.len() != spec.coefficient_dim() {
            return Err(Error::invalid(format!(
                "coefficient vector has length {}, spec requires {}",
                values.len(),
                spec.coefficient_dim()
            )));
        }
        Ok(CoefficientVector {
            values,
            components: spec.components(),
            component_block: spec.component_block_dim(),
            gating_block: spec.gating_block_dim(),
        })
    }

    pub fn zeros(spec: &MixtureSpec) -> Self {
        CoefficientVector::from_vector(spec, DVector::zeros(spec.coefficient_dim()))
            .expect("zero vector always matches the spec dimension")
    }

    /// Coefficient block of component `k` (zero-indexed).
    pub fn beta(&self, component: usize) -> &[f64] {
        assert!(component < self.components, "component index out of range");
        let start = component * self.component_block;
        &self.values.as_slice()[start..start + self.component_block]
    }

    /// Gating block of component `k` (zero-indexed, `k >= 1`; component 0
    /// is the reference category and has none).
    pub fn theta(&self, component: usize) -> &[f64] {
        assert!(
            component >= 1 && component < self.components,
            "gating blocks exist for components 1..K only"
        );
        let start = self.components * self.component_block + (component - 1) * self.gating_block;
        &self.values.as_slice()[start..start + self.gating_block]
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.values
    }
}

/// Linear predictors of one observation: `eta` per component and `psi` per
/// non-reference component.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictors {
    pub eta: DVector<f64>,
    pub psi: DVector<f64>,
}

impl LinearPredictors {
    /// Split a stacked `rho` vector of length `2K - 1`.
    pub fn from_stacked(rho: &DVector<f64>, components: usize) -> Result<Self> {
        if rho.len() != 2 * components - 1 {
            return Err(Error::invalid(format!(
                "stacked predictor has length {}, expected {}",
                rho.len(),
                2 * components - 1
            )));
        }
        Ok(LinearPredictors {
            eta: DVector::from_column_slice(&rho.as_slice()[..components]),
            psi: DVector::from_column_slice(&rho.as_slice()[components..]),
        })
    }

    pub fn to_stacked(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.eta.len() + self.psi.len());
        out.rows_mut(0, self.eta.len()).copy_from(&self.eta);
        out.rows_mut(self.eta.len(), self.psi.len()).copy_from(&self.psi);
        out
    }
}

/// The block-diagonal matrix `W` with `rho = W gamma`: one `x` row per
/// component block and one `z` row per gating block.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    matrix: DMatrix<f64>,
}

impl DesignMatrix {
    /// Build from raw covariate rows (without intercepts; they are
    /// prepended here).
    pub fn new(spec: &MixtureSpec, x_row: &[f64], z_row: &[f64]) -> Result<Self> {
        check_row(x_row, spec.x_indices().len(), "component")?;
        check_row(z_row, spec.z_indices().len(), "gating")?;
        let k = spec.components();
        let mut w = DMatrix::zeros(spec.predictor_dim(), spec.coefficient_dim());
        for component in 0..k {
            let off = spec.beta_offset(component);
            w[(component, off)] = 1.0;
            for (i, &x) in x_row.iter().enumerate() {
                w[(component, off + 1 + i)] = x;
            }
        }
        for component in 1..k {
            let row = k + component - 1;
            let off = spec.theta_offset(component);
            w[(row, off)] = 1.0;
            for (i, &z) in z_row.iter().enumerate() {
                w[(row, off + 1 + i)] = z;
            }
        }
        Ok(DesignMatrix { matrix: w })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn apply(&self, gamma: &DVector<f64>) -> DVector<f64> {
        &self.matrix * gamma
    }
}

fn check_row(row: &[f64], expected: usize, what: &str) -> Result<()> {
    if row.len() != expected {
        return Err(Error::invalid(format!(
            "{what} covariate row has length {}, spec requires {expected}",
            row.len()
        )));
    }
    if let Some(bad) = row.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite {what} covariate {bad}")));
    }
    Ok(())
}

/// Log gating weights `log omega` from the gating predictors. `psi` has one
/// entry per non-reference component; the reference predictor is zero.
pub fn log_gating_weights(psi: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(bad) = psi.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite gating predictor {bad}")));
    }
    let max = psi.iter().copied().fold(0.0_f64, f64::max);
    let norm = max + ((-max).exp() + psi.iter().map(|p| (p - max).exp()).sum::<f64>()).ln();
    let mut out = DVector::zeros(psi.len() + 1);
    out[0] = -norm;
    for (i, &p) in psi.iter().enumerate() {
        out[i + 1] = p - norm;
    }
    Ok(out)
}

/// Gating weights on the probability scale; a simplex vector of length `K`.
pub fn gating_weights(psi: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(log_gating_weights(psi)?.map(f64::exp))
}

/// Gradient and Hessian of `log omega_k` with respect to `psi`.
///
/// `component` is zero-indexed; component 0 uses the reference-category
/// form (gradient `-omega_h`). The Hessian does not depend on `component`.
pub fn gating_derivatives(component: usize, psi: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let k = psi.len() + 1;
    if component >= k {
        return Err(Error::invalid(format!("component {component} out of range for K = {k}")));
    }
    let omega = gating_weights(psi)?;
    let mut grad = DVector::zeros(k - 1);
    for h in 0..k - 1 {
        let indicator = if component >= 1 && h == component - 1 { 1.0 } else { 0.0 };
        grad[h] = indicator - omega[h + 1];
    }
    let mut hess = DMatrix::zeros(k - 1, k - 1);
    for h in 0..k - 1 {
        for l in 0..k - 1 {
            hess[(h, l)] = if h == l {
                -omega[h + 1] * (1.0 - omega[h + 1])
            } else {
                omega[h + 1] * omega[l + 1]
            };
        }
    }
    Ok((grad, hess))
}

/// Evaluate all linear predictors of one observation.
pub fn linear_predictors(
    spec: &MixtureSpec,
    gamma: &CoefficientVector,
    x_row: &[f64],
    z_row: &[f64],
) -> Result<LinearPredictors> {
    check_row(x_row, spec.x_indices().len(), "component")?;
    check_row(z_row, spec.z_indices().len(), "gating")?;
    Ok(predictors_from_flat(spec, gamma.as_vector(), x_row, z_row))
}

/// Hot-path predictor evaluation over a flat coefficient vector. Rows are
/// raw covariates; intercepts are implicit.
pub(crate) fn predictors_from_flat(
    spec: &MixtureSpec,
    gamma: &DVector<f64>,
    x_row: &[f64],
    z_row: &[f64],
) -> LinearPredictors {
    let k = spec.components();
    let g = gamma.as_slice();
    let mut eta = DVector::zeros(k);
    for component in 0..k {
        let off = spec.beta_offset(component);
        eta[component] = dot_with_intercept(&g[off..off + spec.component_block_dim()], x_row);
    }
    let mut psi = DVector::zeros(k - 1);
    for component in 1..k {
        let off = spec.theta_offset(component);
        psi[component - 1] = dot_with_intercept(&g[off..off + spec.gating_block_dim()], z_row);
    }
    LinearPredictors { eta, psi }
}

#[inline]
fn dot_with_intercept(coefs: &[f64], row: &[f64]) -> f64 {
    let mut acc = coefs[0];
    for (c, x) in coefs[1..].iter().zip(row) {
        acc += c * x;
    }
    acc
}

/// Per-component log joint terms `pi_k = log omega_k + log f_k(y | eta_k)`.
pub(crate) fn component_log_terms(
    spec: &MixtureSpec,
    y: f64,
    rho: &LinearPredictors,
) -> Result<Vec<f64>> {
    spec.family().validate_response(y)?;
    if rho.eta.len() != spec.components() || rho.psi.len() != spec.components() - 1 {
        return Err(Error::invalid(format!(
            "predictor dimensions ({}, {}) do not match K = {}",
            rho.eta.len(),
            rho.psi.len(),
            spec.components()
        )));
    }
    let log_omega = log_gating_weights(&rho.psi)?;
    let family = spec.family();
    let norm = family.log_norm_const(y);
    Ok((0..spec.components())
        .map(|k| log_omega[k] + family.log_density_core(y, rho.eta[k]) + norm)
        .collect())
}

/// Log of the mixture density `log sum_k omega_k f_k(y | eta_k)`, combined
/// with log-sum-exp.
pub fn mixture_log_density(spec: &MixtureSpec, y: f64, rho: &LinearPredictors) -> Result<f64> {
    Ok(log_sum_exp(&component_log_terms(spec, y, rho)?))
}

/// Posterior component-membership probabilities of one observation.
pub fn responsibilities(spec: &MixtureSpec, y: f64, rho: &LinearPredictors) -> Result<DVector<f64>> {
    let terms = component_log_terms(spec, y, rho)?;
    let norm = log_sum_exp(&terms);
    if !norm.is_finite() {
        return Err(Error::Degenerate(
            "all mixture components have zero likelihood".into(),
        ));
    }
    Ok(DVector::from_iterator(
        terms.len(),
        terms.iter().map(|t| (t - norm).exp()),
    ))
}
