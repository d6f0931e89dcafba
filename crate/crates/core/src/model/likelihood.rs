use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::posterior::singleton_log_marginal;
use super::{ClusterParams, Hyperparams, LikelihoodForm, ModelData, ModelState};
use crate::error::{Error, Result};
use crate::spatial::car_log_det;

fn check_state(state: &ModelState, data: &ModelData) -> Result<()> {
    if state.labels.len() != data.n() {
        return Err(Error::Dimension(format!(
            "state has {} regions, data has {}",
            state.labels.len(),
            data.n()
        )));
    }
    if let Some(c) = state.params.iter().find(|c| c.beta.len() != data.p()) {
        return Err(Error::Dimension(format!(
            "cluster has {} coefficients, basis has {}",
            c.beta.len(),
            data.p()
        )));
    }
    state.validate()
}

/// Residual rows `(Y_i - ξβ_{c_i}) / σ_{c_i}`.
pub(crate) fn residual_rows(state: &ModelState, data: &ModelData) -> Vec<Vec<f64>> {
    let fitted: Vec<Vec<f64>> = state.params.iter().map(|c| data.fitted(&c.beta)).collect();
    (0..data.n())
        .map(|i| {
            let c = state.labels[i];
            let s = state.params[c].sigma();
            data.row(i)
                .iter()
                .zip(&fitted[c])
                .map(|(y, f)| (y - f) / s)
                .collect()
        })
        .collect()
}

/// `n x T` matrix of standardized residuals.
pub fn standardized_residuals(state: &ModelState, data: &ModelData) -> Result<DMatrix<f64>> {
    check_state(state, data)?;
    let rows = residual_rows(state, data);
    let t = data.t();
    Ok(DMatrix::from_fn(data.n(), t, |i, k| rows[i][k]))
}

/// `Σ_j A_ij ε*_j(t)` (not scaled by `φ`).
pub fn region_offset(i: usize, resid: &[Vec<f64>], data: &ModelData) -> Vec<f64> {
    let mut m = vec![0.0; data.t()];
    for &j in data.graph.neighbors(i) {
        for (a, b) in m.iter_mut().zip(&resid[j]) {
            *a += b;
        }
    }
    m
}

/// Offsets for every region.
pub fn car_offsets(state: &ModelState, data: &ModelData) -> Result<Vec<Vec<f64>>> {
    check_state(state, data)?;
    let resid = residual_rows(state, data);
    Ok((0..data.n()).map(|i| region_offset(i, &resid, data)).collect())
}

/// Gaussian log density of `y` with mean `fitted + σ φ m` and variance `σ²`.
pub(crate) fn offset_normal_loglik(
    y: &[f64],
    fitted: &[f64],
    sigma: f64,
    phi_offset: Option<&[f64]>,
) -> f64 {
    let t = y.len() as f64;
    let mut q = 0.0;
    match phi_offset {
        Some(m) => {
            for k in 0..y.len() {
                let e = (y[k] - fitted[k]) / sigma - m[k];
                q += e * e;
            }
        }
        None => {
            for k in 0..y.len() {
                let e = (y[k] - fitted[k]) / sigma;
                q += e * e;
            }
        }
    }
    -0.5 * t * (2.0 * PI).ln() - t * sigma.ln() - 0.5 * q
}

/// `log f(Y_i | rest)` under `candidate`, with the other regions' residuals
/// taken from `state`.
pub fn state_conditional_loglik(
    i: usize,
    state: &ModelState,
    candidate: &ClusterParams,
    data: &ModelData,
    form: LikelihoodForm,
) -> Result<f64> {
    check_state(state, data)?;
    if i >= data.n() {
        return Err(Error::Dimension(format!("region {i} out of range")));
    }
    if !(candidate.sigma2 > 0.0) || candidate.beta.len() != data.p() {
        return Err(Error::Domain("invalid candidate parameters".into()));
    }
    data.bounds.check(state.phi)?;
    let fitted = data.fitted(&candidate.beta);
    let offset = match form {
        LikelihoodForm::Conditional if state.phi != 0.0 => {
            let resid = residual_rows(state, data);
            let m: Vec<f64> = region_offset(i, &resid, data)
                .into_iter()
                .map(|v| v * state.phi)
                .collect();
            Some(m)
        }
        _ => None,
    };
    let v = offset_normal_loglik(data.row(i), &fitted, candidate.sigma(), offset.as_deref());
    if !v.is_finite() {
        return Err(Error::Numeric(format!("non-finite conditional loglik for region {i}")));
    }
    Ok(v)
}

/// `log ∫ f(Y_i | rest, β, σ²) dG0` for region `i` opening a new cluster.
pub fn new_cluster_marginal_loglik(
    i: usize,
    state: &ModelState,
    data: &ModelData,
    hyper: &Hyperparams,
    form: LikelihoodForm,
) -> Result<f64> {
    check_state(state, data)?;
    if i >= data.n() {
        return Err(Error::Dimension(format!("region {i} out of range")));
    }
    let offset = match form {
        LikelihoodForm::Conditional if state.phi != 0.0 => {
            let resid = residual_rows(state, data);
            Some(
                region_offset(i, &resid, data)
                    .into_iter()
                    .map(|v| v * state.phi)
                    .collect::<Vec<f64>>(),
            )
        }
        _ => None,
    };
    singleton_log_marginal(data, hyper, i, offset.as_deref())
}

/// Sufficient statistics of the standardized residuals for the `φ` update:
/// `tr(EᵀE)` and `tr(EᵀE A)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PhiStats {
    pub sum_sq: f64,
    pub cross: f64,
}

impl PhiStats {
    pub fn from_rows(resid: &[Vec<f64>], data: &ModelData) -> Self {
        let mut sum_sq = 0.0;
        let mut cross = 0.0;
        for (i, r) in resid.iter().enumerate() {
            sum_sq += r.iter().map(|v| v * v).sum::<f64>();
            for &j in data.graph.neighbors(i) {
                cross += r.iter().zip(&resid[j]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        Self { sum_sq, cross }
    }

    pub fn loglik(&self, data: &ModelData, phi: f64) -> Result<f64> {
        let t = data.t() as f64;
        Ok(0.5 * t * car_log_det(&data.bounds, phi)? + 0.5 * phi * self.cross - 0.5 * self.sum_sq)
    }
}

/// `(T/2) log det(I - φA) + (φ/2) tr(EᵀE A) - tr(EᵀE)/2`: the log density of
/// the standardized residuals up to an additive constant.
pub fn phi_loglik(state: &ModelState, data: &ModelData, phi: f64) -> Result<f64> {
    check_state(state, data)?;
    let resid = residual_rows(state, data);
    PhiStats::from_rows(&resid, data).loglik(data, phi)
}

/// `log f(y_i | θ)` at the current state, the per-draw density used by CPO.
pub fn per_state_density(
    i: usize,
    state: &ModelState,
    data: &ModelData,
    form: LikelihoodForm,
) -> Result<f64> {
    check_state(state, data)?;
    let own = state.params_of(i).clone();
    state_conditional_loglik(i, state, &own, data, form)
}
